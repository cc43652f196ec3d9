"""Splines of PH nonic sections with a single global parameter.

Sections are stitched so the quaternion generator is C3 across joints,
which makes parametric speed, frame and angular velocity C2 there. Only
the first section's five quaternion control points plus one control point
per additional section are free; the rest follow from the join relations.
The global parameter runs over [0, m] with unit-width sections.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .bernstein import BernsteinPoly, decasteljau_batch
from .quaternion import rotation_columns
from .ph_curve import (
    PHSection,
    QuaternionPoly,
    angular_velocity,
    arc_length,
    erf_frame,
    position,
    recover_control_points,
)

FREE_PER_EXTRA_SECTION = 4
FREE_FIRST_SECTION = 20


def n_free_coeffs(m: int) -> int:
    return FREE_FIRST_SECTION + FREE_PER_EXTRA_SECTION * (m - 1)


def join_next_coeffs(prev: np.ndarray, zeta4_next: np.ndarray) -> np.ndarray:
    """Control points of the next section from the previous one.

    The first four rows are fixed by value/derivative matching of orders
    0..3 at the joint; only the last row is free.
    """
    z0, z1, z2, z3, z4 = prev
    return np.stack(
        [
            z4,
            -z3 + 2 * z4,
            z2 - 4 * z3 + 4 * z4,
            -z1 + 6 * z2 - 12 * z3 + 8 * z4,
            zeta4_next,
        ]
    )


def coefficient_map(m: int) -> np.ndarray:
    """Linear map from the free parameter vector to all 20m coefficients.

    Returns M with shape (m, 5, 4, n_free): stacked quaternion control
    points are M @ free. Components never mix, so M is a blown-up copy of
    the scalar join recursion.
    """
    nf = n_free_coeffs(m)
    # scalar structure: rows index (section, ctrl point), cols index free slots
    S = np.zeros((m, 5, nf // 4))
    S[0, :5, :5] = np.eye(5)
    for k in range(1, m):
        prev = S[k - 1]
        S[k, 0] = prev[4]
        S[k, 1] = -prev[3] + 2 * prev[4]
        S[k, 2] = prev[2] - 4 * prev[3] + 4 * prev[4]
        S[k, 3] = -prev[1] + 6 * prev[2] - 12 * prev[3] + 8 * prev[4]
        S[k, 4, 4 + k] = 1.0
    M = np.zeros((m, 5, 4, nf))
    for c in range(4):
        M[:, :, c, c::4] = S
    return M


@dataclass
class GlobalEval:
    """All path functions at one global parameter value."""

    section: int
    local_xi: float
    position: np.ndarray
    sigma: float
    frame: np.ndarray
    chi: np.ndarray


@dataclass
class PathPoint:
    """Minimal path data consumed by the spatial dynamics."""

    position: np.ndarray
    sigma: float
    frame: np.ndarray
    chi: np.ndarray


class PHSpline:
    """m C3-stitched nonic sections over the global parameter [0, m]."""

    def __init__(self, sections: list[PHSection], free_coeffs: np.ndarray, p_initial):
        self.sections = sections
        self.free_coeffs = np.asarray(free_coeffs, dtype=float)
        self.p_initial = np.asarray(p_initial, dtype=float)
        self.m = len(sections)
        self.section_lengths = np.array([s.length for s in sections])
        self.cum_lengths = np.concatenate([[0.0], np.cumsum(self.section_lengths)])
        self._batch = None

    @property
    def total_length(self) -> float:
        return float(self.cum_lengths[-1])

    def locate(self, xi_g: float, extrapolate: bool = False) -> tuple[int, float]:
        if not extrapolate and not (0.0 <= xi_g <= self.m):
            raise ValueError(f"global parameter {xi_g} outside [0, {self.m}]")
        k = min(int(np.floor(xi_g)), self.m - 1)
        k = max(k, 0)
        return k, xi_g - k

    def global_eval(self, xi_g: float) -> GlobalEval:
        k, t = self.locate(xi_g)
        sec = self.sections[k]
        return GlobalEval(
            section=k,
            local_xi=t,
            position=position(sec, t),
            sigma=float(sec.sigma(t)),
            frame=erf_frame(sec.Z, t),
            chi=angular_velocity(sec.Z, t),
        )

    def path_point(self, xi_g: float, extrapolate: bool = False) -> PathPoint:
        k, t = self.locate(xi_g, extrapolate=extrapolate)
        sec = self.sections[k]
        return PathPoint(
            position=position(sec, t, extrapolate=True),
            sigma=float(sec.sigma(t, extrapolate=True)),
            frame=erf_frame(sec.Z, t),
            chi=angular_velocity(sec.Z, t),
        )

    def global_arc_length(self, xi_g: float) -> float:
        k, t = self.locate(xi_g)
        return float(self.cum_lengths[k] + arc_length(self.sections[k], t))

    def position_at(self, xi_g, extrapolate: bool = False) -> np.ndarray:
        xi_arr = np.atleast_1d(np.asarray(xi_g, dtype=float))
        k = np.clip(np.floor(xi_arr).astype(int), 0, self.m - 1)
        t = xi_arr - k
        if not extrapolate and (np.any(xi_arr < 0) or np.any(xi_arr > self.m)):
            raise ValueError("global parameter outside range")
        ctrl = np.stack([s.curve_ctrl for s in self.sections])
        out = decasteljau_batch(ctrl[k], t)
        return out[0] if np.isscalar(xi_g) or np.asarray(xi_g).ndim == 0 else out

    def closest_point(self, p, samples_per_section: int = 200) -> tuple[float, float]:
        """Global parameter and distance of the nearest curve point.

        Coarse grid search followed by Newton refinement on the squared
        distance; boundary minima are returned without refinement.
        """
        p = np.asarray(p, dtype=float)
        grid = np.linspace(0.0, self.m, samples_per_section * self.m + 1)
        pts = self.position_at(grid)
        d2 = np.sum((pts - p) ** 2, axis=1)
        i0 = int(np.argmin(d2))
        xi = float(grid[i0])
        if 0 < i0 < len(grid) - 1:
            for _ in range(40):
                k, t = self.locate(xi, extrapolate=True)
                sec = self.sections[k]
                d1 = BernsteinPoly(9.0 * (sec.curve_ctrl[1:] - sec.curve_ctrl[:-1]))
                g = position(sec, t, extrapolate=True)
                g1 = d1(t, extrapolate=True)
                g2 = d1.derivative()(t, extrapolate=True)
                r = g - p
                f1 = 2.0 * r @ g1
                f2 = 2.0 * (g1 @ g1 + r @ g2)
                if f2 <= 0:
                    break
                step = f1 / f2
                xi_new = min(max(xi - step, 0.0), float(self.m))
                if abs(xi_new - xi) < 1e-14:
                    xi = xi_new
                    break
                xi = xi_new
        dist = float(np.linalg.norm(self.position_at(xi) - p))
        return xi, dist

    def batch(self) -> "SplineBatch":
        if self._batch is None:
            self._batch = SplineBatch(self)
        return self._batch

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "free_coeffs": self.free_coeffs.tolist(),
            "p_initial": self.p_initial.tolist(),
            "curve_control_points": [s.curve_ctrl.tolist() for s in self.sections],
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "PHSpline":
        return assemble(np.asarray(data["free_coeffs"]), np.asarray(data["p_initial"]))

    @classmethod
    def load_json(cls, path) -> "PHSpline":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path, samples_per_section: int = 50) -> None:
        """Plot-ready samples: parameter, position, speed, frame, twist."""
        header = (
            ["xi_g", "x", "y", "z", "sigma"]
            + [f"e{i}_{c}" for i in (1, 2, 3) for c in "xyz"]
            + ["chi1", "chi2", "chi3"]
        )
        grid = np.linspace(0.0, self.m, samples_per_section * self.m + 1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for xi in grid:
                ev = self.global_eval(float(xi))
                row = (
                    [xi, *ev.position, ev.sigma]
                    + list(ev.frame[:, 0])
                    + list(ev.frame[:, 1])
                    + list(ev.frame[:, 2])
                    + list(ev.chi)
                )
                writer.writerow([repr(float(x)) for x in row])


def assemble(free_coeffs, p_initial) -> PHSpline:
    """Build a spline from the free parameter vector.

    Layout: 20 coefficients for section 1 (five rows of u, v, g, h), then
    4 per additional section (its last quaternion control point). Join
    relations fill everything else; start points chain so the sections
    attach exactly.
    """
    z = np.asarray(free_coeffs, dtype=float)
    if z.ndim != 1 or (z.size - FREE_FIRST_SECTION) % FREE_PER_EXTRA_SECTION != 0 or z.size < FREE_FIRST_SECTION:
        raise ValueError(f"free coefficient vector has invalid length {z.size}")
    m = (z.size - FREE_FIRST_SECTION) // FREE_PER_EXTRA_SECTION + 1
    ctrl = z[:FREE_FIRST_SECTION].reshape(5, 4)
    sections = []
    p0 = np.asarray(p_initial, dtype=float)
    for k in range(m):
        if k > 0:
            zeta4 = z[FREE_FIRST_SECTION + 4 * (k - 1): FREE_FIRST_SECTION + 4 * k]
            ctrl = join_next_coeffs(ctrl, zeta4)
        sec = recover_control_points(QuaternionPoly(ctrl), p0)
        sections.append(sec)
        p0 = sec.curve_ctrl[9]
    return PHSpline(sections, z, p_initial)


def extract_free_coeffs(spline: PHSpline) -> np.ndarray:
    """Inverse of assemble's layout; round-trips exactly."""
    parts = [spline.sections[0].Z.ctrl.reshape(-1)]
    parts += [s.Z.ctrl[4] for s in spline.sections[1:]]
    return np.concatenate(parts)


class SplineBatch:
    """Vectorized path evaluation with parameter derivatives.

    Precomputes stacked per-section coefficient arrays so the controller
    can query many parameter values per cycle at numpy speed. Returns
    first parameter derivatives of speed, frame and angular velocity; the
    frame derivative uses the connection identity R' = R C rather than
    differentiating the rational frame directly.
    """

    _BINOM = {n: np.array([math.comb(n, i) for i in range(n + 1)], dtype=float)
              for n in (2, 3, 4, 9)}

    def __init__(self, spline: PHSpline):
        self.spline = spline
        self.m = spline.m
        Zc = np.stack([s.Z.ctrl for s in spline.sections])          # (m, 5, 4)
        self.Zc = Zc
        self.Zd = 4.0 * (Zc[:, 1:] - Zc[:, :-1])                    # (m, 4, 4)
        self.Zdd = 3.0 * (self.Zd[:, 1:] - self.Zd[:, :-1])         # (m, 3, 4)
        self.ctrl = np.stack([s.curve_ctrl for s in spline.sections])
        # curve control points and arc-length antiderivative share degree 9
        self.ctrl_arc = np.concatenate(
            [self.ctrl, np.stack([s._sigma_anti.coeffs for s in spline.sections])[..., None]],
            axis=-1,
        )
        self.cum_lengths = spline.cum_lengths

    def locate(self, xi_g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = np.clip(np.floor(xi_g).astype(int), 0, self.m - 1)
        return k, xi_g - k

    @classmethod
    def _basis(cls, n: int, t: np.ndarray) -> np.ndarray:
        """Bernstein basis values, shape (B, n+1); local t stays in [0, 1]."""
        s = 1.0 - t
        pow_t = np.ones((t.size, n + 1))
        pow_s = np.ones((t.size, n + 1))
        for i in range(1, n + 1):
            pow_t[:, i] = pow_t[:, i - 1] * t
            pow_s[:, i] = pow_s[:, i - 1] * s
        return cls._BINOM[n] * pow_s[:, ::-1] * pow_t

    def eval(self, xi_g: np.ndarray) -> dict:
        k, t = self.locate(np.asarray(xi_g, dtype=float))
        B4 = self._basis(4, t)
        B3 = self._basis(3, t)
        B2 = self._basis(2, t)
        q = np.einsum("bi,bic->bc", B4, self.Zc[k])
        qd = np.einsum("bi,bic->bc", B3, self.Zd[k])
        qdd = np.einsum("bi,bic->bc", B2, self.Zdd[k])
        sigma = np.sum(q * q, axis=-1)
        sigma_d = 2.0 * np.sum(q * qd, axis=-1)
        R = rotation_columns(q) / sigma[:, None, None]
        u, v, g, h = q.T
        ud, vd, gd, hd = qd.T
        udd, vdd, gdd, hdd = qdd.T
        N = np.stack(
            [
                u * vd - ud * v - g * hd + gd * h,
                u * gd - ud * g + v * hd - vd * h,
                u * hd - ud * h - v * gd + vd * g,
            ],
            axis=-1,
        )
        Nd = np.stack(
            [
                u * vdd - udd * v - g * hdd + gdd * h,
                u * gdd - udd * g + v * hdd - vdd * h,
                u * hdd - udd * h - v * gdd + vdd * g,
            ],
            axis=-1,
        )
        chi = 2.0 * N / sigma[:, None]
        chi_d = (2.0 * Nd - chi * sigma_d[:, None]) / sigma[:, None]
        B9 = self._basis(9, t)
        gamma_arc = np.einsum("bi,bic->bc", B9, self.ctrl_arc[k])
        gamma = gamma_arc[:, :3]
        L = self.cum_lengths[k] + gamma_arc[:, 3]
        return {
            "section": k,
            "q": q,
            "sigma": sigma,
            "sigma_d": sigma_d,
            "R": R,
            "chi": chi,
            "chi_d": chi_d,
            "gamma": gamma,
            "arc_length": L,
        }
