"""Second planning stage: progress-maximizing receding-horizon control.

The horizon is transcribed by full multiple shooting: every node state
and input is a decision variable, linked by RK4 defect equalities. The
stage cost trades arc-length progress against a quadratic input penalty;
inputs live in a box, node positions must stay inside the polyhedron of
their active spline section, and the last node carries a stoppability
condition so a braking continuation always exists past the horizon.

Each control cycle solves the NLP warm-started from the previous solution
shifted by one node, applies the first input to the simulated plant, and
stops once the prediction's last node reaches the corridor end.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Corridor
from .nlp import NlpOptions, NlpProblem, SolveReport, solve_nlp
from .ph_spline import PHSpline
from .spatial_dynamics import rk4_batch

N_STATE = 6
N_INPUT = 3


def arc_length_cost(state, spline: PHSpline) -> float:
    """Arc length covered at a state; the progress term of the stage cost."""
    return spline.global_arc_length(float(np.asarray(state)[0]))


@dataclass
class MpcConfig:
    T: float = 2.0            # horizon, seconds
    N: int = 40               # shooting nodes
    lam: float = 2.0          # progress weight
    r_u: float = 0.2          # input weight (times identity)
    a_max: float = 0.58       # per-component acceleration bound, m/s^2
    end_tol: float = 1e-3     # parameter gap that counts as "at the end"
    joint_margin: float = 0.1  # window for checking both joint polyhedra
    max_cycles: int = 5000
    audit_dt: float = 1e-3    # plant sub-sampling step for the safety audit

    def __post_init__(self):
        if self.N <= 0 or self.T <= 0:
            raise ValueError("horizon and node count must be positive")
        if self.r_u <= 0 or self.a_max <= 0:
            raise ValueError("input weight and bound must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.N

    def to_dict(self) -> dict:
        return {"T": self.T, "N": self.N, "lambda": self.lam, "r_u": self.r_u,
                "a_max": self.a_max}

    @classmethod
    def from_dict(cls, data: dict) -> "MpcConfig":
        known = {"T", "N", "lambda", "r_u", "a_max", "end_tol", "joint_margin",
                 "max_cycles", "audit_dt"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown controller config fields: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k != "lambda"}
        if "lambda" in data:
            kwargs["lam"] = data["lambda"]
        return cls(**kwargs)


@dataclass
class MpcSolution:
    states: np.ndarray   # (N+1, 6) including the fixed initial state
    inputs: np.ndarray   # (N, 3)
    cost: float
    report: SolveReport


def select_polyhedra(corridor: Corridor, spline: PHSpline, X_nodes: np.ndarray,
                     joint_margin: float) -> np.ndarray:
    """Active polyhedron per node from a reference trajectory.

    One polyhedron per spline section, chosen by the node's parameter;
    within the joint window both neighbors are scored at the node's
    reconstructed position and the less violated one wins.
    """
    m = spline.m
    xi = X_nodes[:, 0]
    idx = np.clip(np.floor(xi).astype(int), 0, m - 1)
    data = spline.batch().eval(xi)
    pos = (data["gamma"] + X_nodes[:, 1, None] * data["R"][:, :, 1]
           + X_nodes[:, 2, None] * data["R"][:, :, 2])
    nearest_joint = np.round(xi).astype(int)
    near = (np.abs(xi - nearest_joint) < joint_margin) & (nearest_joint >= 1) & (nearest_joint <= m - 1)
    for i in np.nonzero(near)[0]:
        lo, hi = nearest_joint[i] - 1, nearest_joint[i]
        m_lo = corridor.polys[lo].margin(pos[i])
        m_hi = corridor.polys[hi].margin(pos[i])
        idx[i] = lo if m_lo <= m_hi else hi
    return idx


class MpcNlp:
    """Multiple-shooting transcription over one horizon.

    The decision vector stacks node states x_1..x_N then inputs
    u_0..u_{N-1}; the initial state is data, not a variable. Heavy model
    quantities are memoized per decision vector so the solver's separate
    value/gradient callbacks do not recompute the rollout.
    """

    def __init__(self, spline: PHSpline, corridor: Corridor, config: MpcConfig):
        self.spline = spline
        self.corridor = corridor
        self.cfg = config
        self.batch = spline.batch()
        self.total_length = spline.total_length
        N = config.N
        self.n = N_STATE * N + N_INPUT * N
        self._state_cols = N_STATE * N
        self.x0 = None
        self.node_polys = None
        self._rows_A = None
        self._rows_b = None
        self._row_node = None
        self._cache = {}
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        lo[0:self._state_cols:N_STATE] = 0.0
        hi[0:self._state_cols:N_STATE] = float(spline.m)
        lo[self._state_cols:] = -config.a_max
        hi[self._state_cols:] = config.a_max
        self.lower, self.upper = lo, hi

    # -- cycle plumbing -----------------------------------------------------
    def set_cycle(self, x0: np.ndarray, warm_nodes: np.ndarray) -> None:
        self.x0 = np.asarray(x0, dtype=float).copy()
        self.node_polys = select_polyhedra(self.corridor, self.spline, warm_nodes,
                                           self.cfg.joint_margin)
        rows_A, rows_b, row_node = [], [], []
        for k, poly_idx in enumerate(self.node_polys):
            poly = self.corridor.polys[poly_idx]
            rows_A.append(poly.A)
            rows_b.append(poly.b)
            row_node.append(np.full(poly.A.shape[0], k))
        self._rows_A = np.vstack(rows_A)
        self._rows_b = np.concatenate(rows_b)
        self._row_node = np.concatenate(row_node)
        self._cache = {}

    def pack(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return np.concatenate([X[1:].reshape(-1), U.reshape(-1)])

    def unpack(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N = self.cfg.N
        X = np.vstack([self.x0[None, :], y[: self._state_cols].reshape(N, N_STATE)])
        U = y[self._state_cols:].reshape(N, N_INPUT)
        return X, U

    def cold_start(self) -> np.ndarray:
        X = np.tile(self.x0, (self.cfg.N + 1, 1))
        U = np.zeros((self.cfg.N, N_INPUT))
        for k in range(self.cfg.N):
            nxt, _, _ = rk4_batch(self.batch, X[k][None, :], U[k][None, :],
                                  self.cfg.dt, need_jac=False)
            X[k + 1] = nxt[0]
        return self.pack(X, U)

    # -- model evaluation ----------------------------------------------------
    def _evaluate(self, y: np.ndarray, need_jac: bool) -> dict:
        key = "full" if need_jac else "light"
        if self._cache.get("y") is not None and np.array_equal(y, self._cache["y"]):
            if "full" in self._cache:
                return self._cache["full"]
            if not need_jac and "light" in self._cache:
                return self._cache["light"]
        else:
            self._cache = {"y": y.copy()}

        cfg = self.cfg
        N = cfg.N
        X, U = self.unpack(y)
        F, Fx, Fu = rk4_batch(self.batch, X[:-1], U, cfg.dt, need_jac=need_jac)
        defects = (X[1:] - F).reshape(-1)

        nodes = self.batch.eval(X[1:, 0])
        w1, w2 = X[1:, 1], X[1:, 2]
        R = nodes["R"]
        e2, e3 = R[:, :, 1], R[:, :, 2]
        pos = nodes["gamma"] + w1[:, None] * e2 + w2[:, None] * e3
        containment = (np.einsum("rj,rj->r", self._rows_A, pos[self._row_node])
                       - self._rows_b)

        # stoppability: enough room left to brake at the component bound
        L_N = nodes["arc_length"][N - 1]
        vN = X[N, 3:6]
        terminal = float(vN @ vN - 2.0 * cfg.a_max * (self.total_length - L_N))

        L0 = float(self.spline.global_arc_length(min(max(self.x0[0], 0.0), self.spline.m)))
        arc = np.concatenate([[L0], nodes["arc_length"][: N - 1]])
        cost = float(-cfg.lam * np.sum(arc) + cfg.r_u * np.sum(U * U))

        out = {
            "X": X, "U": U, "defects": defects, "cost": cost,
            "containment": containment, "terminal": terminal, "pos": pos,
        }
        if need_jac:
            J_e = np.zeros((N_STATE * N, self.n))
            for k in range(N):
                r = slice(N_STATE * k, N_STATE * (k + 1))
                J_e[r, r] = np.eye(N_STATE)
                if k >= 1:
                    J_e[r, N_STATE * (k - 1): N_STATE * k] = -Fx[k]
                cu = self._state_cols + N_INPUT * k
                J_e[r, cu: cu + N_INPUT] = -Fu[k]

            # position sensitivities: dp/dxi via the connection identity
            chi = nodes["chi"]
            e1 = R[:, :, 0]
            e2_d = -chi[:, 2, None] * e1 + chi[:, 0, None] * e3
            e3_d = chi[:, 1, None] * e1 - chi[:, 0, None] * e2
            dpos_dxi = (nodes["sigma"][:, None] * e1 + w1[:, None] * e2_d
                        + w2[:, None] * e3_d)
            J_i = np.zeros((containment.size + 1, self.n))
            a_rows = self._rows_A
            node = self._row_node
            cols_xi = N_STATE * node
            rows = np.arange(containment.size)
            vals_xi = np.einsum("rj,rj->r", a_rows, dpos_dxi[node])
            vals_w1 = np.einsum("rj,rj->r", a_rows, e2[node])
            vals_w2 = np.einsum("rj,rj->r", a_rows, e3[node])
            J_i[rows, cols_xi] = vals_xi
            J_i[rows, cols_xi + 1] = vals_w1
            J_i[rows, cols_xi + 2] = vals_w2
            t_row = containment.size
            J_i[t_row, N_STATE * (N - 1)] = 2.0 * cfg.a_max * nodes["sigma"][N - 1]
            J_i[t_row, N_STATE * (N - 1) + 3: N_STATE * N] = 2.0 * vN

            grad = np.zeros(self.n)
            # progress term covers nodes 1..N-1 (node 0 is fixed data)
            grad[0: N_STATE * (N - 1): N_STATE] = -cfg.lam * nodes["sigma"][: N - 1]
            grad[self._state_cols:] = 2.0 * cfg.r_u * U.reshape(-1)

            out["J_e"] = J_e
            out["J_i"] = J_i
            out["grad"] = grad
            self._cache["full"] = out
        else:
            self._cache["light"] = out
        return out

    # -- NlpProblem callbacks -------------------------------------------------
    def objective(self, y):
        return self._evaluate(y, need_jac=False)["cost"]

    def gradient(self, y):
        return self._evaluate(y, need_jac=True)["grad"]

    def eq_constraints(self, y):
        return self._evaluate(y, need_jac=False)["defects"]

    def eq_jacobian(self, y):
        return self._evaluate(y, need_jac=True)["J_e"]

    def ineq_constraints(self, y):
        ev = self._evaluate(y, need_jac=False)
        return np.concatenate([ev["containment"], [ev["terminal"]]])

    def ineq_jacobian(self, y):
        return self._evaluate(y, need_jac=True)["J_i"]

    def objective_hessian(self, y):
        H = np.zeros((self.n, self.n))
        idx = np.arange(self._state_cols, self.n)
        H[idx, idx] = 2.0 * self.cfg.r_u
        return H

    def build(self) -> NlpProblem:
        return NlpProblem(
            n=self.n,
            objective=self.objective,
            gradient=self.gradient,
            eq_constraints=self.eq_constraints,
            eq_jacobian=self.eq_jacobian,
            ineq_constraints=self.ineq_constraints,
            ineq_jacobian=self.ineq_jacobian,
            lower=self.lower,
            upper=self.upper,
            objective_hessian=self.objective_hessian,
        )


def mpc_nlp_options(overrides: Optional[dict] = None) -> NlpOptions:
    opts = NlpOptions(feas_tol=1e-7, opt_tol=1e-6, max_outer=25, max_inner=60,
                      penalty_init=100.0)
    for k, v in (overrides or {}).items():
        setattr(opts, k, v)
    return opts


def solve_mpc(nlp: MpcNlp, y0: np.ndarray, options: NlpOptions) -> tuple[MpcSolution, np.ndarray]:
    y, report = solve_nlp(nlp.build(), y0, options)
    ev = nlp._evaluate(y, need_jac=False)
    sol = MpcSolution(states=ev["X"], inputs=ev["U"], cost=ev["cost"], report=report)
    return sol, y


@dataclass
class CycleLog:
    t: float
    state: np.ndarray
    input: np.ndarray
    cost: float
    solve_ms: float
    outer_iterations: int
    converged: bool
    saturated: bool


@dataclass
class RunLog:
    cycles: list[CycleLog] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)
    audit_t: list[float] = field(default_factory=list)
    audit_positions: list[np.ndarray] = field(default_factory=list)
    termination: str = "max_cycles"
    final_prediction: Optional[MpcSolution] = None

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)

    def input_array(self) -> np.ndarray:
        return np.array([c.input for c in self.cycles]) if self.cycles else np.zeros((0, 3))

    def state_array(self) -> np.ndarray:
        return np.array(self.states)


def _shift_warm(nlp: MpcNlp, sol: MpcSolution, report: SolveReport,
                prev_polys: np.ndarray):
    """One-node shift of primal and dual warm starts (last node repeated)."""
    N = nlp.cfg.N
    X = np.vstack([sol.states[1:], sol.states[-1][None, :]])
    U = np.vstack([sol.inputs[1:], sol.inputs[-1][None, :]])
    lam = report.lambda_eq.reshape(N, N_STATE)
    lam = np.vstack([lam[1:], lam[-1][None, :]]).reshape(-1)

    mu = report.mu_ineq
    # per-node containment blocks shift by one node; sizes can change when
    # the active polyhedron changes, in which case the block resets to zero
    blocks = []
    offset = 0
    sizes = [nlp.corridor.polys[j].n_faces for j in prev_polys]
    for size in sizes:
        blocks.append(mu[offset: offset + size])
        offset += size
    mu_term = mu[offset:]
    shifted_blocks = blocks[1:] + [blocks[-1]]
    shifted_polys = np.concatenate([prev_polys[1:], prev_polys[-1:]])
    return X, U, lam, shifted_blocks, shifted_polys, mu_term


def _assemble_mu(nlp: MpcNlp, blocks, block_polys, mu_term) -> np.ndarray:
    out = []
    for k, poly_idx in enumerate(nlp.node_polys):
        size = nlp.corridor.polys[poly_idx].n_faces
        if block_polys is not None and block_polys[k] == poly_idx and blocks[k].size == size:
            out.append(blocks[k])
        else:
            out.append(np.zeros(size))
    out.append(mu_term)
    return np.concatenate(out)


def receding_horizon_run(spline: PHSpline, corridor: Corridor, config: MpcConfig,
                         x0: Optional[np.ndarray] = None,
                         nlp_overrides: Optional[dict] = None,
                         on_cycle=None) -> RunLog:
    """Closed-loop simulation of the controller along a planned spline.

    The plant is the prediction model integrated with the same RK4 step;
    between control updates it is re-integrated at ``audit_dt`` so the
    safety audit sees the continuous-time path, not just the nodes.
    """
    cfg = config
    nlp = MpcNlp(spline, corridor, cfg)
    options = mpc_nlp_options(nlp_overrides)
    if x0 is None:
        x0 = np.zeros(N_STATE)
    x = np.asarray(x0, dtype=float).copy()

    log = RunLog()
    batch = spline.batch()

    def plant_position(xv):
        data = batch.eval(np.array([xv[0]]))
        return (data["gamma"][0] + xv[1] * data["R"][0, :, 1] + xv[2] * data["R"][0, :, 2])

    start_margin = corridor.union_margin(plant_position(x))
    if start_margin > 1e-6:
        raise ValueError(f"initial state outside the corridor by {start_margin:.3e} m")

    log.states.append(x.copy())
    log.positions.append(plant_position(x))
    log.audit_t.append(0.0)
    log.audit_positions.append(plant_position(x))

    warm_nodes = np.tile(x, (cfg.N + 1, 1))
    nlp.set_cycle(x, warm_nodes[1:])
    y = nlp.cold_start()
    warm_lam = None
    warm_mu = None
    blocks = None
    block_polys = None
    mu_term = np.zeros(1)
    t = 0.0
    remaining = spline.total_length - spline.global_arc_length(min(max(x[0], 0.0), float(spline.m)))
    if remaining <= max(1e-9, cfg.end_tol * spline.total_length * 1e-3):
        log.termination = "at-goal"
        return log

    for cycle in range(cfg.max_cycles):
        if warm_mu is not None:
            options.warm_lambda = warm_lam
            options.warm_mu = warm_mu
        t0 = time.perf_counter()
        sol, y_opt = solve_mpc(nlp, y, options)
        solve_ms = (time.perf_counter() - t0) * 1e3
        u0 = sol.inputs[0].copy()
        if not sol.report.converged:
            # documented fallback: brake along the current velocity
            u0 = np.clip(-cfg.a_max * np.sign(x[3:6]), -cfg.a_max, cfg.a_max)

        saturated = bool(np.max(np.abs(sol.inputs[0])) >= cfg.a_max - 1e-6)
        log.cycles.append(CycleLog(t=t, state=x.copy(), input=u0.copy(), cost=sol.cost,
                                   solve_ms=solve_ms, outer_iterations=sol.report.iterations,
                                   converged=sol.report.converged, saturated=saturated))
        if on_cycle is not None:
            on_cycle(cycle, sol)

        # fine-grained plant integration between control updates
        n_sub = max(1, int(round(cfg.dt / cfg.audit_dt)))
        dt_sub = cfg.dt / n_sub
        xs = x.copy()
        for s in range(n_sub):
            nxt, _, _ = rk4_batch(batch, xs[None, :], u0[None, :], dt_sub, need_jac=False)
            xs = nxt[0]
            log.audit_t.append(t + (s + 1) * dt_sub)
            log.audit_positions.append(plant_position(xs))
        x = xs
        t += cfg.dt
        log.states.append(x.copy())
        log.positions.append(plant_position(x))

        if sol.states[-1, 0] >= spline.m - cfg.end_tol:
            log.termination = "reached-end"
            log.final_prediction = sol
            break

        # shift everything by one node for the next cycle
        X_w, U_w, warm_lam, blocks, block_polys, mu_term = _shift_warm(
            nlp, sol, sol.report, nlp.node_polys)
        nlp.set_cycle(x, X_w[1:])
        warm_mu = _assemble_mu(nlp, blocks, block_polys, mu_term)
        X_w[0] = x
        y = nlp.pack(X_w, U_w)

    return log
