"""Quaternion arithmetic on the basis {1, i, j, k}.

Components are named (u, v, g, h): u is the scalar part, (v, g, h) the
vector part. Two layers are provided: a small value class for readable
call sites, and array helpers operating on trailing-axis-4 ndarrays for
the vectorized evaluation paths.
"""

import numpy as np

AXIS_INDEX = {"i": 0, "j": 1, "k": 2}


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product for arrays of shape (..., 4)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u1, v1, g1, h1 = np.moveaxis(a, -1, 0)
    u2, v2, g2, h2 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            u1 * u2 - v1 * v2 - g1 * g2 - h1 * h2,
            u1 * v2 + v1 * u2 + g1 * h2 - h1 * g2,
            u1 * g2 - v1 * h2 + g1 * u2 + h1 * v2,
            u1 * h2 + v1 * g2 - g1 * v2 + h1 * u2,
        ],
        axis=-1,
    )


def qconj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qnorm(q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(q, dtype=float), axis=-1)


def rotation_columns(q: np.ndarray) -> np.ndarray:
    """Columns [q i q*, q j q*, q k q*] as a (..., 3, 3) matrix.

    For |q| = 1 this is the rotation matrix of q; in general it carries a
    factor |q|^2. Closed forms avoid two quaternion products per column.
    """
    u, v, g, h = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    uu, vv, gg, hh = u * u, v * v, g * g, h * h
    col_i = np.stack([uu + vv - gg - hh, 2 * (v * g + u * h), 2 * (v * h - u * g)], axis=-1)
    col_j = np.stack([2 * (v * g - u * h), uu - vv + gg - hh, 2 * (g * h + u * v)], axis=-1)
    col_k = np.stack([2 * (v * h + u * g), 2 * (g * h - u * v), uu - vv - gg + hh], axis=-1)
    return np.stack([col_i, col_j, col_k], axis=-1)


class Quaternion:
    """Immutable quaternion value."""

    __slots__ = ("q",)

    def __init__(self, u: float, v: float, g: float, h: float):
        self.q = np.array([u, v, g, h], dtype=float)
        self.q.setflags(write=False)

    @classmethod
    def from_array(cls, q) -> "Quaternion":
        q = np.asarray(q, dtype=float)
        return cls(q[0], q[1], q[2], q[3])

    @property
    def u(self) -> float:
        return float(self.q[0])

    @property
    def v(self) -> float:
        return float(self.q[1])

    @property
    def g(self) -> float:
        return float(self.q[2])

    @property
    def h(self) -> float:
        return float(self.q[3])

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion.from_array(qmul(self.q, other.q))

    def conjugate(self) -> "Quaternion":
        return Quaternion.from_array(qconj(self.q))

    def norm(self) -> float:
        return float(np.linalg.norm(self.q))

    def __eq__(self, other) -> bool:
        return isinstance(other, Quaternion) and bool(np.array_equal(self.q, other.q))

    def __repr__(self):
        return "Quaternion({:g}, {:g}, {:g}, {:g})".format(*self.q)


def quat_mul(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product; non-commutative."""
    return a * b


def quat_sandwich(q: Quaternion, axis: str) -> np.ndarray:
    """Vector part of q e q* for a pure basis quaternion e in {i, j, k}.

    The scalar part vanishes identically; it is dropped here.
    """
    idx = AXIS_INDEX[axis]
    return rotation_columns(q.q)[:, idx]
