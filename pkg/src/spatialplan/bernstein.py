"""Polynomials in Bernstein form.

Coefficients are control values: the value at 0 is the first coefficient,
the value at 1 is the last, and values in between stay inside the convex
hull of the coefficients. All production code keeps polynomials in this
basis; monomial conversion is reserved for test oracles because it loses
accuracy at higher degrees.
"""

import math

import numpy as np


def decasteljau(coeffs: np.ndarray, xi) -> np.ndarray:
    """Evaluate Bernstein coefficients at ``xi`` by de Casteljau recursion.

    ``coeffs`` has shape (n+1,) or (n+1, d); ``xi`` may be a scalar or a
    1-D array. No range check: the recursion is valid (if no longer a
    convex combination) outside [0, 1].
    """
    c = np.asarray(coeffs, dtype=float)
    xi = np.asarray(xi, dtype=float)
    scalar_xi = xi.ndim == 0
    t = xi.reshape(-1, *([1] * c.ndim))           # (B, 1[, 1])
    work = np.broadcast_to(c, (t.shape[0],) + c.shape).copy()
    for _ in range(c.shape[0] - 1):
        work = (1.0 - t) * work[:, :-1] + t * work[:, 1:]
    out = work[:, 0]
    return out[0] if scalar_xi else out


def decasteljau_batch(coeffs: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Evaluate per-row coefficient sets at per-row parameters.

    ``coeffs`` has shape (B, n+1, d) and ``xi`` shape (B,); returns (B, d).
    This is the hot path used by the batched spline evaluator.
    """
    t = xi[:, None, None]
    work = coeffs
    for _ in range(coeffs.shape[1] - 1):
        work = (1.0 - t) * work[:, :-1] + t * work[:, 1:]
    return work[:, 0]


class BernsteinPoly:
    """A degree-n polynomial stored as n+1 Bernstein coefficients.

    Coefficients may be scalars or vectors (shape (n+1,) or (n+1, d)).
    Instances are immutable; all operations return new polynomials.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.ndim > 2:
            raise ValueError("coefficients must be scalars or flat vectors")
        self.coeffs = c
        self.coeffs.setflags(write=False)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, xi, extrapolate: bool = False):
        xi_arr = np.asarray(xi, dtype=float)
        if not extrapolate and (np.any(xi_arr < 0.0) or np.any(xi_arr > 1.0)):
            raise ValueError(f"parameter out of range [0, 1]: {xi}")
        return decasteljau(self.coeffs, xi_arr)

    def derivative(self) -> "BernsteinPoly":
        n = self.degree
        if n == 0:
            return BernsteinPoly(np.zeros_like(self.coeffs))
        return BernsteinPoly(n * (self.coeffs[1:] - self.coeffs[:-1]))

    def antiderivative(self) -> "BernsteinPoly":
        """Antiderivative with value 0 at 0; degree rises by one."""
        n = self.degree
        prefix = np.concatenate(
            [np.zeros_like(self.coeffs[:1]), np.cumsum(self.coeffs, axis=0)]
        )
        return BernsteinPoly(prefix / (n + 1))

    def __mul__(self, other: "BernsteinPoly") -> "BernsteinPoly":
        return bernstein_product(self, other)

    def __add__(self, other: "BernsteinPoly") -> "BernsteinPoly":
        if self.degree != other.degree:
            raise ValueError("degree mismatch; elevate first")
        return BernsteinPoly(self.coeffs + other.coeffs)

    def __sub__(self, other: "BernsteinPoly") -> "BernsteinPoly":
        if self.degree != other.degree:
            raise ValueError("degree mismatch; elevate first")
        return BernsteinPoly(self.coeffs - other.coeffs)

    def __repr__(self):
        return f"BernsteinPoly(degree={self.degree}, coeffs={self.coeffs!r})"


def bernstein_eval(p: BernsteinPoly, xi):
    """Value of ``p`` at ``xi`` with the standard [0, 1] range check."""
    return p(xi)


def bernstein_derivative(p: BernsteinPoly) -> BernsteinPoly:
    return p.derivative()


def bernstein_antiderivative(p: BernsteinPoly) -> BernsteinPoly:
    return p.antiderivative()


def bernstein_product(a: BernsteinPoly, b: BernsteinPoly) -> BernsteinPoly:
    """Exact product of two scalar polynomials, degree na+nb.

    c_r = sum_{i+j=r} C(na,i) C(nb,j) / C(na+nb,r) * a_i b_j
    """
    if a.coeffs.ndim != 1 or b.coeffs.ndim != 1:
        raise ValueError("product requires scalar coefficients")
    na, nb = a.degree, b.degree
    out = np.zeros(na + nb + 1)
    for i in range(na + 1):
        wi = math.comb(na, i)
        for j in range(nb + 1):
            out[i + j] += wi * math.comb(nb, j) * a.coeffs[i] * b.coeffs[j]
    scale = np.array([math.comb(na + nb, r) for r in range(na + nb + 1)], dtype=float)
    return BernsteinPoly(out / scale)
