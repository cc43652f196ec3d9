"""One Pythagorean-hodograph nonic section.

A quaternion polynomial Z(xi) generates the curve: the hodograph is the
vector part of Z i Z*, so the parametric speed sigma = |Z|^2 is itself a
polynomial and arc length, adapted frame (the Euler-Rodrigues frame) and
frame angular velocity all come out in closed form from the quaternion
Bernstein coefficients. A degree-4 Z yields a degree-9 curve; that is the
lowest degree admitting the spline continuity used elsewhere, and the
only degree the section constructor accepts for spline use.
"""

import math

import numpy as np

from .bernstein import BernsteinPoly, bernstein_product, decasteljau
from .quaternion import qmul, rotation_columns

SIGMA_FLOOR = 1e-9


class DegenerateCurveError(ValueError):
    """The hodograph (nearly) vanishes somewhere on [0, 1]."""


class QuaternionPoly:
    """Quaternion-valued polynomial in Bernstein form.

    ``ctrl`` is an (n+1, 4) array; rows are quaternion control points,
    columns the (u, v, g, h) components. Degree 4 is the spline workhorse
    but any degree is accepted so reduced-degree tests share the code.
    """

    __slots__ = ("ctrl",)

    def __init__(self, ctrl):
        c = np.asarray(ctrl, dtype=float)
        if c.ndim != 2 or c.shape[1] != 4:
            raise ValueError("control points must have shape (n+1, 4)")
        self.ctrl = c
        self.ctrl.setflags(write=False)

    @property
    def degree(self) -> int:
        return self.ctrl.shape[0] - 1

    def __call__(self, xi, extrapolate: bool = False) -> np.ndarray:
        xi_arr = np.asarray(xi, dtype=float)
        if not extrapolate and (np.any(xi_arr < 0.0) or np.any(xi_arr > 1.0)):
            raise ValueError(f"parameter out of range [0, 1]: {xi}")
        return decasteljau(self.ctrl, xi_arr)

    def derivative(self) -> "QuaternionPoly":
        n = self.degree
        if n == 0:
            return QuaternionPoly(np.zeros((1, 4)))
        return QuaternionPoly(n * (self.ctrl[1:] - self.ctrl[:-1]))

    def component(self, idx: int) -> BernsteinPoly:
        return BernsteinPoly(self.ctrl[:, idx])


def parametric_speed(Z: QuaternionPoly) -> BernsteinPoly:
    """sigma(xi) = u^2 + v^2 + g^2 + h^2 as an exact degree-2n polynomial."""
    comps = [Z.component(i) for i in range(4)]
    sigma = bernstein_product(comps[0], comps[0])
    for c in comps[1:]:
        sigma = sigma + bernstein_product(c, c)
    check_regular(sigma)
    return sigma


def check_regular(sigma: BernsteinPoly) -> None:
    """Fail loudly if sigma is not strictly positive on [0, 1].

    All-positive Bernstein coefficients prove positivity; otherwise fall
    back to dense sampling against the floor.
    """
    if np.all(sigma.coeffs > SIGMA_FLOOR):
        return
    samples = sigma(np.linspace(0.0, 1.0, 401))
    if np.min(samples) <= SIGMA_FLOOR:
        raise DegenerateCurveError(
            f"parametric speed drops to {np.min(samples):.3e} on [0, 1]"
        )


def hodograph(Z: QuaternionPoly) -> tuple[BernsteinPoly, BernsteinPoly, BernsteinPoly]:
    """Curve derivative (x', y', z') as exact degree-2n polynomials.

    x' = u^2 + v^2 - g^2 - h^2, y' = 2(uh + vg), z' = 2(vh - ug): the
    vector part of Z i Z* written out componentwise.
    """
    u, v, g, h = (Z.component(i) for i in range(4))
    uu, vv, gg, hh = (bernstein_product(c, c) for c in (u, v, g, h))
    xd = uu + vv - gg - hh
    yd = BernsteinPoly(2.0 * (bernstein_product(u, h) + bernstein_product(v, g)).coeffs)
    zd = BernsteinPoly(2.0 * (bernstein_product(v, h) - bernstein_product(u, g)).coeffs)
    return xd, yd, zd


def _sigma_at(Z: QuaternionPoly, xi, extrapolate=False):
    q = Z(xi, extrapolate=extrapolate)
    sigma = np.sum(q * q, axis=-1)
    if np.any(np.asarray(sigma) <= SIGMA_FLOOR):
        raise DegenerateCurveError(
            f"parametric speed {np.min(sigma):.3e} at xi={xi}"
        )
    return q, sigma


def erf_frame(Z: QuaternionPoly, xi: float) -> np.ndarray:
    """Adapted frame generated by the quaternion polynomial.

    Columns are (Z e Z*)/sigma for e in {i, j, k}; the first column is the
    unit tangent. Normalizing by sigma keeps the frame orthonormal for
    non-unit Z.
    """
    q, sigma = _sigma_at(Z, xi)
    return rotation_columns(q) / np.asarray(sigma)[..., None, None]


def angular_velocity(Z: QuaternionPoly, xi: float) -> np.ndarray:
    """Frame angular-velocity components (chi1, chi2, chi3) at xi.

    chi1 is the twist rate about the tangent; a frame with chi1 = 0 is
    rotation minimizing.
    """
    q, sigma = _sigma_at(Z, xi)
    qd = Z.derivative()(xi, extrapolate=True)
    u, v, g, h = q
    ud, vd, gd, hd = qd
    return np.array(
        [
            2.0 * (u * vd - ud * v - g * hd + gd * h) / sigma,
            2.0 * (u * gd - ud * g + v * hd - vd * h) / sigma,
            2.0 * (u * hd - ud * h - v * gd + vd * g) / sigma,
        ]
    )


# Hodograph Bernstein coefficients h_r (degree 2n) from quaternion control
# points: h_r = sum_{a+b=r} C(n,a) C(n,b) / C(2n,r) * vec(zeta_a i zeta_b*).
# The curve control points then follow from p_{r+1} = p_r + h_r / (2n+1).
def hodograph_control_points(Z: QuaternionPoly) -> np.ndarray:
    n = Z.degree
    out = np.zeros((2 * n + 1, 3))
    for a in range(n + 1):
        za = Z.ctrl[a]
        for b in range(n + 1):
            w = math.comb(n, a) * math.comb(n, b) / math.comb(2 * n, a + b)
            prod = qmul(za, qmul(np.array([0.0, 1.0, 0.0, 0.0]), Z.ctrl[b] * [1, -1, -1, -1]))
            out[a + b] += w * prod[1:]
    return out


class PHSection:
    """A nonic section: quaternion generator plus recovered curve points.

    ``curve_ctrl`` holds the ten degree-9 Bernstein control points of the
    position; ``p0`` is the free integration constant (the section start).
    """

    __slots__ = ("Z", "p0", "curve_ctrl", "_sigma", "_sigma_anti")

    def __init__(self, Z: QuaternionPoly, p0, curve_ctrl):
        self.Z = Z
        self.p0 = np.asarray(p0, dtype=float)
        self.curve_ctrl = np.asarray(curve_ctrl, dtype=float)
        self._sigma = parametric_speed(Z)
        self._sigma_anti = self._sigma.antiderivative()

    @property
    def sigma(self) -> BernsteinPoly:
        return self._sigma

    @property
    def length(self) -> float:
        return float(self._sigma_anti(1.0))


def recover_control_points(Z: QuaternionPoly, p0) -> PHSection:
    """Build the ten curve control points from Z and the start point.

    Each step adds one ninth of a hodograph control point, so the curve's
    derivative is exactly the hodograph of Z.
    """
    if Z.degree != 4:
        raise ValueError(f"nonic sections need a degree-4 generator, got {Z.degree}")
    check_regular(parametric_speed(Z))
    increments = hodograph_control_points(Z) / 9.0
    ctrl = np.zeros((10, 3))
    ctrl[0] = np.asarray(p0, dtype=float)
    ctrl[1:] = ctrl[0] + np.cumsum(increments, axis=0)
    return PHSection(Z, p0, ctrl)


def position(section: PHSection, xi, extrapolate: bool = False) -> np.ndarray:
    xi_arr = np.asarray(xi, dtype=float)
    if not extrapolate and (np.any(xi_arr < 0.0) or np.any(xi_arr > 1.0)):
        raise ValueError(f"parameter out of range [0, 1]: {xi}")
    return decasteljau(section.curve_ctrl, xi_arr)


def arc_length(section: PHSection, xi) -> float:
    """Arc length from the section start: closed-form integral of sigma."""
    return section._sigma_anti(xi)


def rmf_deviation(Z: QuaternionPoly, step: float = 0.1) -> float:
    """Integral of chi1^2 over the section by fixed-step RK4.

    Zero exactly when the frame is rotation minimizing. The fixed step
    (default 0.1) matches the optimizer's quadrature so costs reported by
    the planner are reproducible; use a smaller step for reference values.
    """
    n_steps = int(round(1.0 / step))
    h = 1.0 / n_steps

    def f(xi):
        return angular_velocity(Z, xi)[0] ** 2

    total = 0.0
    for i in range(n_steps):
        x0 = i * h
        k1 = f(x0)
        k2 = f(x0 + 0.5 * h)
        k3 = k2
        k4 = f(x0 + h)
        total += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return total


def frame_polynomials(Z: QuaternionPoly):
    """Exact polynomial building blocks of the path functions.

    Returns (sigma, cols, nums): the parametric speed, the nine entries of
    Z e Z* for e in {i, j, k} as a 3x3 list of polynomials (column-major:
    cols[c][r] is row r of column c), and the three angular-velocity
    numerators with chi_c = 2 nums[c] / sigma. Everything downstream of
    these is rational, so one-sided derivatives of speed, frame and
    angular velocity follow exactly from Bernstein derivatives.
    """
    u, v, g, h = (Z.component(i) for i in range(4))
    ud, vd, gd, hd = (c.derivative() for c in (u, v, g, h))

    def prod2(a, b):
        return BernsteinPoly(2.0 * bernstein_product(a, b).coeffs)

    uu, vv, gg, hh = (bernstein_product(c, c) for c in (u, v, g, h))
    sigma = uu + vv + gg + hh
    cols = [
        [uu + vv - gg - hh, prod2(v, g) + prod2(u, h), prod2(v, h) - prod2(u, g)],
        [prod2(v, g) - prod2(u, h), uu - vv + gg - hh, prod2(g, h) + prod2(u, v)],
        [prod2(v, h) + prod2(u, g), prod2(g, h) - prod2(u, v), uu - vv - gg + hh],
    ]
    nums = [
        bernstein_product(u, vd) - bernstein_product(ud, v)
        - bernstein_product(g, hd) + bernstein_product(gd, h),
        bernstein_product(u, gd) - bernstein_product(ud, g)
        + bernstein_product(v, hd) - bernstein_product(vd, h),
        bernstein_product(u, hd) - bernstein_product(ud, h)
        - bernstein_product(v, gd) + bernstein_product(vd, g),
    ]
    return sigma, cols, nums


def path_function_jets(Z: QuaternionPoly, xi: float) -> dict:
    """Values and exact first/second parameter derivatives at xi.

    Keys: sigma, R, chi, each paired with *_d and *_dd entries. Frame and
    angular velocity derivatives apply the quotient rule to the polynomial
    forms, so no finite differencing is involved.
    """
    sigma_poly, cols, nums = frame_polynomials(Z)

    def jet(p):
        d = p.derivative()
        return p(xi), d(xi), d.derivative()(xi)

    s, s_d, s_dd = jet(sigma_poly)
    R = np.empty((3, 3))
    R_d = np.empty((3, 3))
    R_dd = np.empty((3, 3))
    for c in range(3):
        for r in range(3):
            val, vd, vdd = jet(cols[c][r])
            R[r, c] = val / s
            R_d[r, c] = (vd - s_d * R[r, c]) / s
            R_dd[r, c] = (vdd - 2 * s_d * R_d[r, c] - s_dd * R[r, c]) / s
    chi = np.empty(3)
    chi_d = np.empty(3)
    chi_dd = np.empty(3)
    for c in range(3):
        val, vd, vdd = jet(nums[c])
        chi[c] = 2 * val / s
        chi_d[c] = (2 * vd - s_d * chi[c]) / s
        chi_dd[c] = (2 * vdd - 2 * s_d * chi_d[c] - s_dd * chi[c]) / s
    return {
        "sigma": s, "sigma_d": s_d, "sigma_dd": s_dd,
        "R": R, "R_d": R_d, "R_dd": R_dd,
        "chi": chi, "chi_d": chi_d, "chi_dd": chi_dd,
    }


def frenet_frame(section: PHSection, xi: float):
    """Frenet-Serret triad with curvature and torsion; a test fixture.

    Returns (frame, kappa, tau) with frame columns (tangent, normal,
    binormal). Undefined at inflection points, where the adapted frame
    from the quaternion stays well defined.
    """
    d1 = BernsteinPoly(9.0 * (section.curve_ctrl[1:] - section.curve_ctrl[:-1]))
    d2 = d1.derivative()
    d3 = d2.derivative()
    g1 = d1(xi)
    g2 = d2(xi)
    g3 = d3(xi)
    cross = np.cross(g1, g2)
    cross_norm = np.linalg.norm(cross)
    if cross_norm < 1e-9:
        raise DegenerateCurveError(f"inflection point at xi={xi}: |g' x g''|={cross_norm:.3e}")
    speed = np.linalg.norm(g1)
    e1 = g1 / speed
    e3 = cross / cross_norm
    e2 = np.cross(e3, e1)
    kappa = cross_norm / speed**3
    tau = float(cross @ g3) / cross_norm**2
    return np.stack([e1, e2, e3], axis=-1), kappa, tau
