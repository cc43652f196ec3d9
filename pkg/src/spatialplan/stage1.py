"""First planning stage: fit a collision-free spline to a corridor.

Decision variables are the free quaternion Bernstein coefficients; the
join relations are eliminated up front, so generator continuity holds by
construction and only endpoint equalities and control-point containment
remain as constraints. The cost integrates the squared twist rate about
the tangent per section, driving the frame toward a rotation minimizing
one. All derivatives are hand-coded chain rules through the bilinear
control-point recovery; ``check_derivatives`` audits them in the tests.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Corridor, overlap_point
from .nlp import NlpOptions, NlpProblem, SolveReport, least_squares, solve_nlp
from .ph_curve import rmf_deviation
from .ph_spline import PHSpline, assemble, coefficient_map, n_free_coeffs
from .quaternion import qconj, qmul

REGULARIZATION = 1e-9

# bilinear form of the control-point recovery: vec(a i b*)_j = S[j,x,y] a_x b_y
_S_TENSOR = np.empty((3, 4, 4))
for _x in range(4):
    for _y in range(4):
        _ex = np.zeros(4)
        _ex[_x] = 1.0
        _ey = np.zeros(4)
        _ey[_y] = 1.0
        _S_TENSOR[:, _x, _y] = qmul(_ex, qmul([0.0, 1.0, 0.0, 0.0], qconj(_ey)))[1:]
_S_TENSOR.setflags(write=False)

# Bernstein product weights for degree-4 squares: pair (a, b) lands on
# hodograph coefficient a+b with weight C(4,a) C(4,b) / C(8,a+b)
_W4 = np.array(
    [[math.comb(4, a) * math.comb(4, b) / math.comb(8, a + b) for b in range(5)] for a in range(5)]
)
_W4.setflags(write=False)


def _basis_matrices(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Degree-4 Bernstein basis values and derivatives at the nodes."""
    n = 4
    B = np.stack(
        [math.comb(n, i) * (1 - nodes) ** (n - i) * nodes**i for i in range(n + 1)], axis=1
    )
    B3 = np.stack(
        [math.comb(3, i) * (1 - nodes) ** (3 - i) * nodes**i for i in range(4)], axis=1
    )
    Bd = np.zeros_like(B)
    Bd[:, 0] = -n * B3[:, 0]
    Bd[:, n] = n * B3[:, 3]
    for i in range(1, n):
        Bd[:, i] = n * (B3[:, i - 1] - B3[:, i])
    return B, Bd


def simpson_nodes_weights(step: float) -> tuple[np.ndarray, np.ndarray]:
    """Node/weight view of fixed-step RK4 quadrature on [0, 1]."""
    n_steps = int(round(1.0 / step))
    h = 1.0 / n_steps
    nodes = np.linspace(0.0, 1.0, 2 * n_steps + 1)
    w = np.zeros(nodes.size)
    w[0] = w[-1] = h / 6.0
    w[1::2] = 4.0 * h / 6.0
    w[2:-1:2] = 2.0 * h / 6.0
    return nodes, w


def control_points(coeffs: np.ndarray, p_initial: np.ndarray, with_jacobian=False):
    """Curve control points of all sections from stacked coefficients.

    coeffs has shape (m, 5, 4). Returns P (m, 10, 3) and, on request, the
    Jacobian dP/dcoeffs with shape (m, 10, 3, m, 5, 4); section k's points
    depend on every earlier section through the chained start points.
    """
    m = coeffs.shape[0]
    # hodograph coefficients per section: h[k, r] = sum_{a+b=r} w vec(za i zb*)
    h = np.zeros((m, 9, 3))
    dh = np.zeros((m, 9, 3, 5, 4)) if with_jacobian else None
    for a in range(5):
        za = coeffs[:, a, :]
        for b in range(5):
            zb = coeffs[:, b, :]
            w = _W4[a, b]
            h[:, a + b] += w * np.einsum("jxy,kx,ky->kj", _S_TENSOR, za, zb)
            if with_jacobian:
                dh[:, a + b, :, a, :] += w * np.einsum("jxy,ky->kjx", _S_TENSOR, zb)
                dh[:, a + b, :, b, :] += w * np.einsum("jxy,kx->kjy", _S_TENSOR, za)
    cum = np.concatenate([np.zeros((m, 1, 3)), np.cumsum(h, axis=1)], axis=1) / 9.0
    section_disp = cum[:, 9]
    offsets = np.concatenate([np.zeros((1, 3)), np.cumsum(section_disp, axis=0)[:-1]], axis=0)
    P = p_initial[None, None, :] + offsets[:, None, :] + cum
    if not with_jacobian:
        return P, None
    dcum = np.concatenate([np.zeros((m, 1, 3, 5, 4)), np.cumsum(dh, axis=1)], axis=1) / 9.0
    dP = np.zeros((m, 10, 3, m, 5, 4))
    for k in range(m):
        dP[k, :, :, k] = dcum[k]
        for kp in range(k):
            dP[k, :, :, kp] += dcum[kp, 9][None, ...]
    return P, dP


@dataclass
class Stage1Problem:
    corridor: Corridor
    p_initial: Optional[np.ndarray] = None
    p_final: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.p_initial is None:
            self.p_initial = self.corridor.start
        if self.p_final is None:
            self.p_final = self.corridor.goal
        self.p_initial = np.asarray(self.p_initial, dtype=float)
        self.p_final = np.asarray(self.p_final, dtype=float)

    @property
    def m(self) -> int:
        return self.corridor.m


@dataclass
class Stage1Options:
    containment_tol: float = 1e-6
    endpoint_tol: float = 1e-6
    rk4_step: float = 0.1
    regularization: float = REGULARIZATION
    start_tangent: Optional[np.ndarray] = None  # optional hodograph pin at xi=0
    end_tangent: Optional[np.ndarray] = None    # optional hodograph pin at xi=m
    nlp: NlpOptions = field(default_factory=lambda: NlpOptions(max_inner=200))


@dataclass
class Stage1Solution:
    spline: PHSpline
    f_ph_value: float
    report: SolveReport
    Z_coeffs: np.ndarray  # (m, 5, 4) stacked quaternion control points
    init_residual: float = 0.0


class _Stage1Nlp:
    """Objective/constraint closures over the free coefficient vector."""

    def __init__(self, problem: Stage1Problem, options: Stage1Options):
        self.problem = problem
        self.opts = options
        self.m = problem.m
        self.M = coefficient_map(self.m)  # (m, 5, 4, nf)
        self.nf = self.M.shape[-1]
        self.nodes, self.weights = simpson_nodes_weights(options.rk4_step)
        self.B, self.Bd = _basis_matrices(self.nodes)
        self._cache_x = None
        self._cache = None

    def coeffs(self, z: np.ndarray) -> np.ndarray:
        return np.einsum("kpcf,f->kpc", self.M, z)

    def _evaluate(self, z: np.ndarray, need_jac: bool = False) -> dict:
        if self._cache_x is not None and np.array_equal(z, self._cache_x):
            if not need_jac or "dPdz" in self._cache:
                return self._cache
        coeffs = self.coeffs(z)
        P, dP = control_points(coeffs, self.problem.p_initial, with_jacobian=need_jac)

        # twist-rate cost per section on the quadrature nodes
        f = self.opts.regularization * float(z @ z)
        grad = 2.0 * self.opts.regularization * z if need_jac else None
        for k in range(self.m):
            vals = self.B @ coeffs[k]      # (S, 4)
            ders = self.Bd @ coeffs[k]     # (S, 4)
            u, v, g, h = vals.T
            ud, vd, gd, hd = ders.T
            sigma = u * u + v * v + g * g + h * h
            n1 = u * vd - ud * v - g * hd + gd * h
            chi1 = 2.0 * n1 / sigma
            f += float(self.weights @ (chi1 * chi1))
            if not need_jac:
                continue
            dn1 = np.stack(
                [
                    self.B * vd[:, None] - self.Bd * v[:, None],
                    u[:, None] * self.Bd - ud[:, None] * self.B,
                    h[:, None] * self.Bd - hd[:, None] * self.B,
                    gd[:, None] * self.B - g[:, None] * self.Bd,
                ],
                axis=2,
            )  # (S, 5, 4)
            dsigma = 2.0 * vals[:, None, :] * self.B[:, :, None]
            dchi1 = (2.0 * dn1 - chi1[:, None, None] * dsigma) / sigma[:, None, None]
            dfk = np.einsum("s,s,scx->cx", self.weights, 2.0 * chi1, dchi1)
            grad += np.einsum("cx,cxf->f", dfk, self.M[k])

        out = {"coeffs": coeffs, "P": P, "f": f}
        if need_jac:
            # chain dP through the linear coefficient map onto the free vector
            out["dPdz"] = np.einsum("kijqcx,qcxf->kijf", dP, self.M)
            out["grad"] = grad
        self._cache_x = z.copy()
        self._cache = out
        return out

    # -- NlpProblem callbacks ---------------------------------------------
    def objective(self, z):
        return self._evaluate(z)["f"]

    def gradient(self, z):
        return self._evaluate(z, need_jac=True)["grad"]

    def eq_constraints(self, z):
        ev = self._evaluate(z)
        res = [ev["P"][self.m - 1, 9] - self.problem.p_final]
        if self.opts.start_tangent is not None:
            z0 = ev["coeffs"][0, 0]
            res.append(np.einsum("jxy,x,y->j", _S_TENSOR, z0, z0) - self.opts.start_tangent)
        if self.opts.end_tangent is not None:
            z4 = ev["coeffs"][self.m - 1, 4]
            res.append(np.einsum("jxy,x,y->j", _S_TENSOR, z4, z4) - self.opts.end_tangent)
        return np.concatenate(res)

    def eq_jacobian(self, z):
        ev = self._evaluate(z, need_jac=True)
        rows = [ev["dPdz"][self.m - 1, 9]]
        if self.opts.start_tangent is not None:
            z0 = ev["coeffs"][0, 0]
            d = np.einsum("jxy,y->jx", _S_TENSOR, z0) + np.einsum("jxy,x->jy", _S_TENSOR, z0)
            rows.append(np.einsum("jx,xf->jf", d, self.M[0, 0]))
        if self.opts.end_tangent is not None:
            z4 = ev["coeffs"][self.m - 1, 4]
            d = np.einsum("jxy,y->jx", _S_TENSOR, z4) + np.einsum("jxy,x->jy", _S_TENSOR, z4)
            rows.append(np.einsum("jx,xf->jf", d, self.M[self.m - 1, 4]))
        return np.vstack(rows)

    def ineq_constraints(self, z):
        ev = self._evaluate(z)
        out = []
        for k, poly in enumerate(self.problem.corridor.polys):
            out.append((ev["P"][k] @ poly.A.T - poly.b).reshape(-1))
        return np.concatenate(out)

    def ineq_jacobian(self, z):
        ev = self._evaluate(z, need_jac=True)
        out = []
        for k, poly in enumerate(self.problem.corridor.polys):
            out.append(np.einsum("rj,ijf->irf", poly.A, ev["dPdz"][k]).reshape(-1, self.nf))
        return np.vstack(out)

    def build(self) -> NlpProblem:
        return NlpProblem(
            n=self.nf,
            objective=self.objective,
            gradient=self.gradient,
            eq_constraints=self.eq_constraints,
            eq_jacobian=self.eq_jacobian,
            ineq_constraints=self.ineq_constraints,
            ineq_jacobian=self.ineq_jacobian,
        )


def chord_quaternion(direction: np.ndarray) -> np.ndarray:
    """Constant generator whose hodograph is the given chord vector."""
    length = np.linalg.norm(direction)
    if length < 1e-12:
        return np.array([1e-3, 0.0, 0.0, 0.0])
    d = direction / length
    if d[0] < -1.0 + 1e-12:
        q = np.array([0.0, 0.0, 1.0, 0.0])  # half-turn about j flips i to -i
    else:
        q = np.array([1.0 + d[0], 0.0, -d[2], d[1]])
        q /= np.linalg.norm(q)
    return math.sqrt(length) * q


def waypoints_for(problem: Stage1Problem) -> np.ndarray:
    pts = [problem.p_initial]
    polys = problem.corridor.polys
    for k in range(problem.m - 1):
        pts.append(overlap_point(polys[k], polys[k + 1]))
    pts.append(problem.p_final)
    return np.stack(pts)


def initial_guess(problem: Stage1Problem) -> np.ndarray:
    """Straight chords between waypoints, sign-aligned section to section."""
    wps = waypoints_for(problem)
    chords = np.diff(wps, axis=0)
    qs = [chord_quaternion(c) for c in chords]
    for k in range(1, len(qs)):
        if qs[k] @ qs[k - 1] < 0.0:
            qs[k] = -qs[k]
    z = np.empty(n_free_coeffs(problem.m))
    z[:20] = np.tile(qs[0], 5)
    for k in range(1, problem.m):
        z[20 + 4 * (k - 1): 20 + 4 * k] = qs[k]
    return z


def initialize(problem: Stage1Problem, options: Stage1Options | None = None):
    """Least-squares polish of the chord seed on the constraint residuals.

    Residuals stack the per-section endpoint-to-waypoint mismatches and
    the hinge parts of the containment inequalities.
    """
    opts = options or Stage1Options()
    builder = _Stage1Nlp(problem, opts)
    wps = waypoints_for(problem)

    def residual(z):
        ev = builder._evaluate(z)
        parts = [(ev["P"][k, 9] - wps[k + 1]) for k in range(problem.m)]
        parts.append(np.maximum(0.0, builder.ineq_constraints(z)))
        return np.concatenate([p.reshape(-1) for p in parts])

    def jacobian(z):
        ev = builder._evaluate(z, need_jac=True)
        rows = [ev["dPdz"][k, 9] for k in range(problem.m)]
        hinge = builder.ineq_constraints(z)
        J_in = builder.ineq_jacobian(z)
        J_in = J_in * (hinge > 0.0)[:, None]
        rows.append(J_in)
        return np.vstack(rows)

    z0 = initial_guess(problem)
    z, report = least_squares(residual, z0, jac=jacobian, gtol=1e-10, max_iter=200)
    violation = float(np.max(np.maximum(0.0, builder.ineq_constraints(z))))
    return z, violation, report


def solve_stage1(problem: Stage1Problem, options: Stage1Options | None = None) -> Stage1Solution:
    opts = options or Stage1Options()
    problem.corridor.validate()
    z0, init_violation, _ = initialize(problem, opts)
    builder = _Stage1Nlp(problem, opts)
    nlp_opts = opts.nlp
    z, report = solve_nlp(builder.build(), z0, nlp_opts)
    spline = assemble(z, problem.p_initial)
    f_ph = sum(rmf_deviation(sec.Z, step=opts.rk4_step) for sec in spline.sections)
    solution = Stage1Solution(
        spline=spline,
        f_ph_value=float(f_ph),
        report=report,
        Z_coeffs=builder.coeffs(z),
        init_residual=init_violation,
    )
    return solution
