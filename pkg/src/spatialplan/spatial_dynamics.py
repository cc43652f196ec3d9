"""Equations of motion in path coordinates for an arbitrary adapted frame.

State: the path parameter, two transverse offsets measured along the
frame's normal axes, and the world velocity. Input: world acceleration.
The progress rate divides by sigma - chi3 w1 + chi2 w2, which vanishes
when the offset reaches the frame's instantaneous rotation center; a
guard keeps integration from crossing that set silently.

Any object with a ``path_point(xi, extrapolate=...)`` method can serve as
the path, so analytic fixtures plug in alongside PH splines. The batched
variants consume a spline's batch evaluator and return exact Jacobians,
assembled from the closed-form parameter derivatives of the path
functions (frame derivative via the connection identity R' = R C).
"""

from dataclasses import dataclass

import numpy as np

DENOM_GUARD = 1e-6


class SingularityError(RuntimeError):
    """Progress-rate denominator fell below the guard."""


@dataclass
class SpatialState:
    xi: float
    w: np.ndarray  # (2,) transverse offsets, meters
    v: np.ndarray  # (3,) world velocity, m/s

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.xi], self.w, self.v])

    @classmethod
    def from_vector(cls, x) -> "SpatialState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), x[1:3].copy(), x[3:6].copy())


@dataclass
class SpatialInput:
    a: np.ndarray  # (3,) world acceleration, m/s^2

    def as_vector(self) -> np.ndarray:
        return np.asarray(self.a, dtype=float)


def _denominator(sigma, chi, w1, w2):
    return sigma - chi[..., 2] * w1 + chi[..., 1] * w2


def spatial_rhs(state: SpatialState, inp: SpatialInput, path, extrapolate=False) -> np.ndarray:
    """Time derivative of (xi, w1, w2, v) under world acceleration input."""
    pp = path.path_point(state.xi, extrapolate=extrapolate)
    e1, e2, e3 = pp.frame[:, 0], pp.frame[:, 1], pp.frame[:, 2]
    w1, w2 = state.w
    denom = _denominator(pp.sigma, pp.chi, w1, w2)
    if denom <= DENOM_GUARD:
        raise SingularityError(
            f"denominator {denom:.3e} at xi={state.xi:.4f}, w=({w1:.3f}, {w2:.3f})"
        )
    xi_dot = float(e1 @ state.v) / denom
    w1_dot = float(e2 @ state.v) + xi_dot * pp.chi[0] * w2
    w2_dot = float(e3 @ state.v) - xi_dot * pp.chi[0] * w1
    return np.concatenate([[xi_dot, w1_dot, w2_dot], inp.as_vector()])


def reconstruct_position(state: SpatialState, path, extrapolate=False) -> np.ndarray:
    """World position from path coordinates: curve point plus offsets."""
    pp = path.path_point(state.xi, extrapolate=extrapolate)
    return pp.position + pp.frame[:, 1] * state.w[0] + pp.frame[:, 2] * state.w[1]


def rk4_step(state: SpatialState, inp: SpatialInput, path, dt: float) -> SpatialState:
    """Classical RK4 step; stages may peek slightly past the path ends."""
    x = state.as_vector()

    def f(xv):
        return spatial_rhs(SpatialState.from_vector(xv), inp, path, extrapolate=True)

    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return SpatialState.from_vector(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def roundtrip_check(path, xi0, w0, v_fn, horizon, dt=1e-3):
    """Max gap between path-coordinate evolution and direct integration.

    Both charts start from the same world position; the path coordinates
    are integrated with the velocity profile v_fn(t), reconstructed at
    every step and compared against RK4 integration of p' = v_fn(t).
    """
    z = np.array([xi0, w0[0], w0[1]])

    def g(zv, t):
        st = SpatialState(zv[0], zv[1:3], v_fn(t))
        return spatial_rhs(st, SpatialInput(np.zeros(3)), path, extrapolate=True)[:3]

    state0 = SpatialState(xi0, np.asarray(w0, dtype=float), np.zeros(3))
    p = reconstruct_position(state0, path)
    n_steps = int(round(horizon / dt))
    max_err = 0.0
    t = 0.0
    for _ in range(n_steps):
        k1 = g(z, t)
        k2 = g(z + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = g(z + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = g(z + dt * k3, t + dt)
        z = z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        q1 = v_fn(t)
        q2 = v_fn(t + 0.5 * dt)
        q4 = v_fn(t + dt)
        p = p + dt / 6.0 * (q1 + 4 * q2 + q4)
        t += dt
        rec = reconstruct_position(SpatialState(z[0], z[1:3], np.zeros(3)), path,
                                   extrapolate=True)
        max_err = max(max_err, float(np.linalg.norm(rec - p)))
    return max_err


# -- batched model with exact Jacobians (controller hot path) -------------

def rhs_batch(batch, X, U, need_jac=True):
    """Vectorized dynamics over rows of X (B, 6) and U (B, 3).

    Returns (Xdot, A, Bm) with A = d f / d x (B, 6, 6) and Bm = d f / d u
    (B, 6, 3); the Jacobian blocks chain the quotient rule through the
    progress-rate denominator and use R' = R C for the frame columns.
    """
    data = batch.eval(X[:, 0])
    sigma, sigma_d = data["sigma"], data["sigma_d"]
    R, chi, chi_d = data["R"], data["chi"], data["chi_d"]
    e1, e2, e3 = R[:, :, 0], R[:, :, 1], R[:, :, 2]
    w1, w2 = X[:, 1], X[:, 2]
    v = X[:, 3:6]
    denom = sigma - chi[:, 2] * w1 + chi[:, 1] * w2
    if np.min(denom) <= DENOM_GUARD:
        i = int(np.argmin(denom))
        raise SingularityError(
            f"denominator {denom[i]:.3e} at xi={X[i, 0]:.4f}, w=({w1[i]:.3f}, {w2[i]:.3f})"
        )
    e1v = np.sum(e1 * v, axis=1)
    xi_dot = e1v / denom
    chi1 = chi[:, 0]
    w1_dot = np.sum(e2 * v, axis=1) + xi_dot * chi1 * w2
    w2_dot = np.sum(e3 * v, axis=1) - xi_dot * chi1 * w1
    Xdot = np.concatenate([np.stack([xi_dot, w1_dot, w2_dot], axis=1), U], axis=1)
    if not need_jac:
        return Xdot, None, None

    B = X.shape[0]
    e1_d = chi[:, 2, None] * e2 - chi[:, 1, None] * e3
    e2_d = -chi[:, 2, None] * e1 + chi[:, 0, None] * e3
    e3_d = chi[:, 1, None] * e1 - chi[:, 0, None] * e2
    denom_d = sigma_d - chi_d[:, 2] * w1 + chi_d[:, 1] * w2
    dxid_dxi = (np.sum(e1_d * v, axis=1) - xi_dot * denom_d) / denom
    dxid_dw1 = xi_dot * chi[:, 2] / denom
    dxid_dw2 = -xi_dot * chi[:, 1] / denom
    dxid_dv = e1 / denom[:, None]

    A = np.zeros((B, 6, 6))
    A[:, 0, 0] = dxid_dxi
    A[:, 0, 1] = dxid_dw1
    A[:, 0, 2] = dxid_dw2
    A[:, 0, 3:6] = dxid_dv
    chi1_d = chi_d[:, 0]
    A[:, 1, 0] = np.sum(e2_d * v, axis=1) + (dxid_dxi * chi1 + xi_dot * chi1_d) * w2
    A[:, 1, 1] = dxid_dw1 * chi1 * w2
    A[:, 1, 2] = dxid_dw2 * chi1 * w2 + xi_dot * chi1
    A[:, 1, 3:6] = e2 + dxid_dv * (chi1 * w2)[:, None]
    A[:, 2, 0] = np.sum(e3_d * v, axis=1) - (dxid_dxi * chi1 + xi_dot * chi1_d) * w1
    A[:, 2, 1] = -dxid_dw1 * chi1 * w1 - xi_dot * chi1
    A[:, 2, 2] = -dxid_dw2 * chi1 * w1
    A[:, 2, 3:6] = e3 - dxid_dv * (chi1 * w1)[:, None]

    Bm = np.zeros((B, 6, 3))
    Bm[:, 3:6, :] = np.eye(3)
    return Xdot, A, Bm


def rk4_batch(batch, X, U, dt, need_jac=True):
    """Batched RK4 flow map with chained Jacobians.

    Returns (Xnext, dF/dX, dF/dU); the Jacobians compose the four stage
    linearizations exactly, so solver derivatives match the integrator.
    """
    k1, A1, B1 = rhs_batch(batch, X, U, need_jac)
    X2 = X + 0.5 * dt * k1
    k2, A2, B2 = rhs_batch(batch, X2, U, need_jac)
    X3 = X + 0.5 * dt * k2
    k3, A3, B3 = rhs_batch(batch, X3, U, need_jac)
    X4 = X + dt * k3
    k4, A4, B4 = rhs_batch(batch, X4, U, need_jac)
    Xnext = X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not need_jac:
        return Xnext, None, None
    eye = np.eye(6)
    G1, H1 = A1, B1
    G2 = A2 @ (eye + 0.5 * dt * G1)
    H2 = A2 @ (0.5 * dt * H1) + B2
    G3 = A3 @ (eye + 0.5 * dt * G2)
    H3 = A3 @ (0.5 * dt * H2) + B3
    G4 = A4 @ (eye + dt * G3)
    H4 = A4 @ (dt * H3) + B4
    Fx = eye + dt / 6.0 * (G1 + 2 * G2 + 2 * G3 + G4)
    Fu = dt / 6.0 * (H1 + 2 * H2 + 2 * H3 + H4)
    return Xnext, Fx, Fu
