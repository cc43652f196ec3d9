"""Polyhedral free-space corridors in half-space representation.

The free space is a union of convex polyhedra {p : A p <= b}. Rows of A
are unit-normalized on construction so margins are plain distances in
meters. Vertex enumeration never appears here; small-instance oracles in
the test suite use it to cross-check containment.
"""

import json
from dataclasses import dataclass

import numpy as np

from .nlp import NlpOptions, NlpProblem, solve_nlp

HARD_TOL = 1e-8
ACCEPT_TOL = 1e-6
# Chebyshev-style solves need a bounded feasible set; corridors live at
# desk scale so a generous box cap is harmless.
SLACK_CAP = 1e3


class InfeasibleRegionError(ValueError):
    """The (intersection of) polyhedra has no strictly interior point."""


class Polyhedron:
    """Convex set {p : A p <= b} with unit outward normals."""

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[0] != b.shape[0] or A.shape[1] != 3:
            raise ValueError(f"half-space shapes mismatch: A{A.shape}, b{b.shape}")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero row in half-space matrix")
        self.A = A / norms[:, None]
        self.b = b / norms
        self.A.setflags(write=False)
        self.b.setflags(write=False)

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    def margin(self, p) -> float:
        """Worst signed distance to the faces; <= 0 means inside."""
        return float(np.max(self.A @ np.asarray(p, dtype=float) - self.b))

    def margins(self, pts: np.ndarray) -> np.ndarray:
        return np.max(pts @ self.A.T - self.b, axis=-1)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}


def contains(poly: Polyhedron, p, tol: float = HARD_TOL) -> tuple[bool, float]:
    """Membership test plus the worst face margin for diagnostics."""
    m = poly.margin(p)
    return m <= tol, m


def _max_slack_point(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Point maximizing the minimum slack min(b - A p), via a small LP.

    Decision vector (p, r): minimize -r subject to A p + r <= b and a box
    cap on r (the LP is unbounded for unbounded sets otherwise).
    """
    r0 = A.shape[0]
    prob = NlpProblem(
        n=4,
        objective=lambda x: -x[3],
        gradient=lambda x: np.array([0.0, 0.0, 0.0, -1.0]),
        ineq_constraints=lambda x: A @ x[:3] + x[3] - b,
        ineq_jacobian=lambda x: np.hstack([A, np.ones((r0, 1))]),
        lower=np.array([-SLACK_CAP, -SLACK_CAP, -SLACK_CAP, -SLACK_CAP]),
        upper=np.array([SLACK_CAP, SLACK_CAP, SLACK_CAP, SLACK_CAP]),
    )
    x0 = np.zeros(4)
    x, report = solve_nlp(prob, x0, NlpOptions(feas_tol=1e-9, opt_tol=1e-9))
    if not report.converged:
        # retry from a crude least-squares center before giving up
        x0[:3] = np.linalg.lstsq(A, b, rcond=None)[0]
        x, report = solve_nlp(prob, x0, NlpOptions(feas_tol=1e-9, opt_tol=1e-9))
    return x[:3], float(x[3])


def interior_point(poly: Polyhedron) -> np.ndarray:
    """Deepest point of the polyhedron (maximum margin to all faces)."""
    p, slack = _max_slack_point(poly.A, poly.b)
    if slack <= HARD_TOL:
        raise InfeasibleRegionError(f"no strictly interior point (slack {slack:.3e})")
    return p


def overlap_point(a: Polyhedron, b: Polyhedron) -> np.ndarray:
    """Deepest point of the intersection; errors if the overlap is empty."""
    A = np.vstack([a.A, b.A])
    bb = np.concatenate([a.b, b.b])
    p, slack = _max_slack_point(A, bb)
    if slack <= HARD_TOL:
        raise InfeasibleRegionError(f"polyhedra do not overlap (slack {slack:.3e})")
    return p


@dataclass
class Corridor:
    """Ordered overlapping polyhedra with designated entry and exit."""

    polys: list[Polyhedron]
    start: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)

    @property
    def m(self) -> int:
        return len(self.polys)

    def validate(self) -> None:
        if not self.polys:
            raise InfeasibleRegionError("corridor has no polyhedra")
        ok, margin = contains(self.polys[0], self.start, ACCEPT_TOL)
        if not ok:
            raise InfeasibleRegionError(f"start outside first polyhedron by {margin:.3e} m")
        ok, margin = contains(self.polys[-1], self.goal, ACCEPT_TOL)
        if not ok:
            raise InfeasibleRegionError(f"goal outside last polyhedron by {margin:.3e} m")
        for poly in self.polys:
            interior_point(poly)
        for k in range(self.m - 1):
            overlap_point(self.polys[k], self.polys[k + 1])

    def union_margin(self, p) -> float:
        """Distance-style margin to the union; <= 0 means inside free space."""
        return min(poly.margin(p) for poly in self.polys)

    def union_margins(self, pts: np.ndarray) -> np.ndarray:
        return np.min(np.stack([poly.margins(pts) for poly in self.polys]), axis=0)

    def to_dict(self) -> dict:
        return {
            "polyhedra": [poly.to_dict() for poly in self.polys],
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "Corridor":
        try:
            polys = [Polyhedron(item["A"], item["b"]) for item in data["polyhedra"]]
            return cls(polys, np.asarray(data["start"], dtype=float),
                       np.asarray(data["goal"], dtype=float))
        except KeyError as exc:
            raise ValueError(f"corridor JSON missing field {exc}") from exc

    @classmethod
    def load_json(cls, path) -> "Corridor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def box(center, half_extents) -> Polyhedron:
    """Axis-aligned box as six half-spaces."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(half_extents, dtype=float)
    A = np.vstack([np.eye(3), -np.eye(3)])
    b = np.concatenate([c + h, -(c - h)])
    return Polyhedron(A, b)
