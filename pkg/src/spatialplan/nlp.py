"""Self-contained smooth constrained optimization.

Two entry points: ``least_squares`` (Levenberg-Marquardt with adaptive
damping) and ``solve_nlp`` (augmented-Lagrangian outer loop around a
projected quasi-Newton inner solver with box projection). Callbacks must
be deterministic pure functions of the decision vector; derivatives are
exact in production and can be audited against central differences with
``check_derivatives``.

The inner solver models curvature as B + rho J^T J: a damped-BFGS
estimate of the Lagrangian part plus the exact Gauss-Newton curvature of
the penalty, which the constraint Jacobians provide for free. Plain BFGS
needs O(n) iterations to learn the penalty curvature and is far too slow
for the receding-horizon problems this package solves at every cycle.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class NlpProblem:
    """Smooth NLP: min f(x) s.t. eq(x) = 0, ineq(x) <= 0, l <= x <= u."""

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq_constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    # optional exact/Gauss-Newton objective Hessian; BFGS fills in otherwise
    objective_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi


@dataclass
class SolveReport:
    status: str  # converged | max_iter | infeasible | singular
    iterations: int
    objective: float
    max_violation: float
    kkt_residual: float
    lambda_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class NlpOptions:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 150
    penalty_init: float = 10.0
    penalty_max: float = 1e8
    step_cap: float = 10.0  # trust-region-style bound on inner steps
    verbose: bool = False
    warm_lambda: Optional[np.ndarray] = None
    warm_mu: Optional[np.ndarray] = None


def least_squares(residual, x0, jac=None, gtol=1e-8, max_iter=200, verbose=False):
    """Minimize ||r(x)||^2 by Levenberg-Marquardt with adaptive damping.

    Parameters
    ----------
    residual : callable
        Smooth residual vector r(x).
    x0 : array_like
        Starting point.
    jac : callable, optional
        Jacobian dr/dx; forward differences are used when omitted (meant
        for tests and prototyping, production callers pass it).
    gtol : float
        Stop when the gradient of 0.5 ||r||^2 falls below this in the
        infinity norm.

    Returns (x, SolveReport). Accepted steps strictly decrease ||r||^2.
    """
    x = np.asarray(x0, dtype=float).copy()

    def jacobian(xv, rv):
        if jac is not None:
            return np.atleast_2d(np.asarray(jac(xv), dtype=float))
        J = np.empty((rv.size, xv.size))
        for i in range(xv.size):
            h = 1e-7 * (1.0 + abs(xv[i]))
            xp = xv.copy()
            xp[i] += h
            J[:, i] = (np.atleast_1d(residual(xp)) - rv) / h
        return J

    r = np.atleast_1d(np.asarray(residual(x), dtype=float))
    if not np.all(np.isfinite(r)):
        return x, SolveReport("infeasible", 0, np.inf, np.inf, np.inf,
                              message="non-finite residual at start")
    cost = 0.5 * float(r @ r)
    J = jacobian(x, r)
    g = J.T @ r
    nu = 2.0
    mu = 1e-8 * max(np.max(np.sum(J * J, axis=0)), 1e-12)
    status, it = "max_iter", 0
    if np.max(np.abs(g)) < gtol:
        status, it = "converged", 0
    else:
        for it in range(1, max_iter + 1):
            A = J.T @ J + mu * np.eye(x.size)
            try:
                step = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                mu = max(10.0 * mu, 1e-10)
                continue
            x_new = x + step
            r_new = np.atleast_1d(np.asarray(residual(x_new), dtype=float))
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            predicted = 0.5 * float(step @ (mu * step - g))
            rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
            if cost_new < cost:
                x, r, cost = x_new, r_new, cost_new
                J = jacobian(x, r)
                g = J.T @ r
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * max(rho, 0.0) - 1.0) ** 3)
                nu = 2.0
                if np.max(np.abs(g)) < gtol or np.linalg.norm(step) < 1e-14 * (1.0 + np.linalg.norm(x)):
                    status = "converged"
                    break
            else:
                mu = max(mu * nu, 1e-12)
                nu *= 2.0
                if mu > 1e16:
                    status = "singular"
                    break
            if verbose:
                print(f"lm iter {it}: cost {cost:.6e} grad {np.max(np.abs(g)):.2e} mu {mu:.1e}")
    report = SolveReport(status, it, 2.0 * cost, 0.0, float(np.max(np.abs(g))))
    return x, report


def _clip(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


class _AugmentedLagrangian:
    """Bundles the AL value/gradient/curvature pieces for one outer state."""

    def __init__(self, problem, lam, mu, rho):
        self.p = problem
        self.lam = lam
        self.mu = mu
        self.rho = rho

    def pieces(self, x, need_jac=True):
        p = self.p
        f = float(p.objective(x))
        c_e = np.atleast_1d(p.eq_constraints(x)) if p.eq_constraints else np.zeros(0)
        c_i = np.atleast_1d(p.ineq_constraints(x)) if p.ineq_constraints else np.zeros(0)
        out = {"f": f, "c_e": c_e, "c_i": c_i}
        if need_jac:
            out["g_f"] = np.asarray(p.gradient(x), dtype=float)
            out["J_e"] = (np.atleast_2d(p.eq_jacobian(x)) if p.eq_jacobian else np.zeros((0, p.n)))
            out["J_i"] = (np.atleast_2d(p.ineq_jacobian(x)) if p.ineq_jacobian else np.zeros((0, p.n)))
        return out

    def value(self, pieces):
        rho, lam, mu = self.rho, self.lam, self.mu
        c_e, c_i = pieces["c_e"], pieces["c_i"]
        val = pieces["f"]
        if c_e.size:
            val += lam @ c_e + 0.5 * rho * (c_e @ c_e)
        if c_i.size:
            t = np.maximum(0.0, mu + rho * c_i)
            val += (t @ t - mu @ mu) / (2.0 * rho)
        return val

    def gradient(self, pieces):
        g = pieces["g_f"].copy()
        if pieces["c_e"].size:
            g += pieces["J_e"].T @ (self.lam + self.rho * pieces["c_e"])
        if pieces["c_i"].size:
            t = np.maximum(0.0, self.mu + self.rho * pieces["c_i"])
            g += pieces["J_i"].T @ t
        return g

    def lagrangian_gradient(self, pieces):
        # fixed-multiplier part only; the BFGS matrix tracks its curvature
        g = pieces["g_f"].copy()
        if pieces["c_e"].size:
            g += pieces["J_e"].T @ self.lam
        if pieces["c_i"].size:
            g += pieces["J_i"].T @ self.mu
        return g

    def gauss_newton(self, pieces):
        rho = self.rho
        H = np.zeros((self.p.n, self.p.n))
        if pieces["c_e"].size:
            H += rho * pieces["J_e"].T @ pieces["J_e"]
        if pieces["c_i"].size:
            active = self.mu + rho * pieces["c_i"] > 0.0
            if np.any(active):
                Ja = pieces["J_i"][active]
                H += rho * Ja.T @ Ja
        return H


def _inner_solve(al, x, B, lo, hi, tol, max_iter, verbose, scale_B=False,
                 step_cap=10.0):
    """Projected quasi-Newton minimization of the AL subproblem."""
    n = x.size
    pieces = al.pieces(x)
    phi = al.value(pieces)
    lag_g = al.lagrangian_gradient(pieces)
    n_singular = 0
    for it in range(max_iter):
        g = al.gradient(pieces)
        pg = _clip(x - g, lo, hi) - x
        if np.max(np.abs(pg)) <= tol:
            break
        H0 = al.p.objective_hessian(x) if al.p.objective_hessian else B
        H = H0 + al.gauss_newton(pieces)
        at_lo = (x <= lo + 1e-12) & (g > 0)
        at_hi = (x >= hi - 1e-12) & (g < 0)
        free = ~(at_lo | at_hi)
        d = np.zeros(n)
        Hff = H[np.ix_(free, free)]
        gf = g[free]
        tau = 1e-10 * (1.0 + np.trace(Hff) / max(1, Hff.shape[0]))
        # one LU solve per try; a non-descent direction reveals indefiniteness
        for _ in range(14):
            try:
                df = np.linalg.solve(Hff + tau * np.eye(Hff.shape[0]), -gf)
            except np.linalg.LinAlgError:
                tau = max(10.0 * tau, 1e-8)
                continue
            if gf @ df < 0:
                d[free] = df
                break
            tau = max(10.0 * tau, 1e-8)
        else:
            d[free] = -gf
            n_singular += 1
        if g @ d > -1e-16:
            d = -g * (1.0 / max(1.0, np.linalg.norm(g)))
        # flat directions produce huge steps the line search would have to
        # shrink one halving at a time; cap them instead
        step_norm = np.max(np.abs(d))
        if step_norm > step_cap:
            d *= step_cap / step_norm
        alpha, ok = 1.0, False
        for _ in range(40):
            x_new = _clip(x + alpha * d, lo, hi)
            step = x_new - x
            if np.max(np.abs(step)) < 1e-16:
                break
            pieces_new = al.pieces(x_new, need_jac=False)
            if np.isfinite(pieces_new["f"]) and al.value(pieces_new) <= phi + 1e-4 * (g @ step):
                ok = True
                break
            alpha *= 0.5
        if not ok:
            break
        pieces = al.pieces(x_new)
        phi = al.value(pieces)
        lag_g_new = al.lagrangian_gradient(pieces)
        if al.p.objective_hessian is None:
            s = x_new - x
            y = lag_g_new - lag_g
            sy = s @ y
            if scale_B and sy > 1e-12:
                # rescale the fresh identity to the observed curvature
                B = (sy / (s @ s)) * np.eye(n)
                scale_B = False
            sBs = s @ B @ s
            # Powell damping keeps the estimate positive definite
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy) if sBs > sy else 1.0
                y = theta * y + (1.0 - theta) * (B @ s)
                sy = s @ y
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                Bs = B @ s
                B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
        x, lag_g = x_new, lag_g_new
        if verbose:
            print(f"    inner {it}: phi {phi:.6e} pg {np.max(np.abs(pg)):.2e}")
    return x, B, pieces, n_singular


def solve_nlp(problem: NlpProblem, x0, options: NlpOptions | None = None):
    """Augmented-Lagrangian solve of a smooth NLP.

    Multipliers start at zero unless warm values are supplied in the
    options; the penalty grows tenfold (capped) whenever an outer
    iteration fails to cut the constraint violation. Deterministic for
    identical problem, start and options.
    """
    opts = options or NlpOptions()
    p = problem
    lo, hi = p.bounds()
    x = _clip(np.asarray(x0, dtype=float).copy(), lo, hi)

    n_eq = np.atleast_1d(p.eq_constraints(x)).size if p.eq_constraints else 0
    n_in = np.atleast_1d(p.ineq_constraints(x)).size if p.ineq_constraints else 0
    lam = (np.asarray(opts.warm_lambda, float).copy()
           if opts.warm_lambda is not None and np.asarray(opts.warm_lambda).size == n_eq
           else np.zeros(n_eq))
    mu = (np.asarray(opts.warm_mu, float).copy()
          if opts.warm_mu is not None and np.asarray(opts.warm_mu).size == n_in
          else np.zeros(n_in))

    if not np.isfinite(p.objective(x)):
        return x, SolveReport("infeasible", 0, np.inf, np.inf, np.inf,
                              message="non-finite objective at start")

    rho = opts.penalty_init
    B = np.eye(p.n)
    eta = 1e-2
    omega = 1e-2
    best = None
    stall = 0
    status = "max_iter"
    it = 0
    for it in range(1, opts.max_outer + 1):
        al = _AugmentedLagrangian(p, lam, mu, rho)
        inner_tol = max(opts.opt_tol * 0.5, omega)
        x, B, pieces, n_sing = _inner_solve(al, x, B, lo, hi, inner_tol,
                                            opts.max_inner, opts.verbose,
                                            scale_B=(it == 1),
                                            step_cap=opts.step_cap)
        c_e, c_i = pieces["c_e"], pieces["c_i"]
        feas = 0.0
        if c_e.size:
            feas = max(feas, float(np.max(np.abs(c_e))))
        if c_i.size:
            feas = max(feas, float(np.max(np.maximum(0.0, c_i))))
        lam_trial = lam + rho * c_e if c_e.size else lam
        mu_trial = np.maximum(0.0, mu + rho * c_i) if c_i.size else mu
        grad_L = pieces["g_f"].copy()
        if c_e.size:
            grad_L += pieces["J_e"].T @ lam_trial
        if c_i.size:
            grad_L += pieces["J_i"].T @ mu_trial
        kkt = float(np.max(np.abs(_clip(x - grad_L, lo, hi) - x)))
        if opts.verbose:
            print(f"outer {it}: f {pieces['f']:.6e} feas {feas:.2e} kkt {kkt:.2e} rho {rho:.1e}")
        if best is None or feas < best[1] or (feas <= opts.feas_tol and pieces["f"] < best[2]):
            best = (x.copy(), feas, pieces["f"], kkt, lam_trial.copy(), mu_trial.copy())
        if feas <= opts.feas_tol and kkt <= opts.opt_tol:
            lam, mu = lam_trial, mu_trial
            status = "converged"
            break
        if feas <= max(opts.feas_tol, eta):
            lam, mu = lam_trial, mu_trial
            eta = max(0.1 * opts.feas_tol, 0.2 * eta)
            omega = max(0.1 * opts.opt_tol, 0.2 * omega)
            stall = 0
        else:
            if rho >= opts.penalty_max:
                stall += 1
                if stall >= 3:
                    status = "infeasible"
                    break
            rho = min(10.0 * rho, opts.penalty_max)
            omega = max(0.1 * opts.opt_tol, 0.2 * omega)

    if status == "converged":
        report = SolveReport(status, it, pieces["f"], feas, kkt, lam, mu)
        return x, report
    x_best, feas_b, f_b, kkt_b, lam_b, mu_b = best
    report = SolveReport(status, it, f_b, feas_b, kkt_b, lam_b, mu_b,
                         message="best iterate returned")
    return x_best, report


def check_derivatives(problem: NlpProblem, x, n_points=5, seed=0, h=1e-6, spread=1e-3):
    """Audit provided derivatives against central finite differences.

    Samples points around x and returns the worst relative error over the
    objective gradient and both constraint Jacobians.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    worst = 0.0

    def rel_err(analytic, fd):
        scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
        return float(np.max(np.abs(analytic - fd) / scale)) if analytic.size else 0.0

    for _ in range(n_points):
        xp = x + spread * rng.standard_normal(x.size)
        g = np.asarray(problem.gradient(xp))
        g_fd = np.empty_like(g)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = h * (1.0 + abs(xp[i]))
            g_fd[i] = (problem.objective(xp + e) - problem.objective(xp - e)) / (2 * e[i])
        worst = max(worst, rel_err(g, g_fd))
        for fn, jfn in ((problem.eq_constraints, problem.eq_jacobian),
                        (problem.ineq_constraints, problem.ineq_jacobian)):
            if fn is None:
                continue
            J = np.atleast_2d(jfn(xp))
            J_fd = np.empty_like(J)
            for i in range(x.size):
                e = np.zeros(x.size)
                e[i] = h * (1.0 + abs(xp[i]))
                J_fd[:, i] = (np.atleast_1d(fn(xp + e)) - np.atleast_1d(fn(xp - e))) / (2 * e[i])
            worst = max(worst, rel_err(J, J_fd))
    return worst
