"""Built-in corridors and scenario file handling.

The canonical corridor is four overlapping boxes sweeping through all
three axes with different sizes, at desk scale (meters). It stands in for
the unpublished geometry behind the reference results; twist-cost values
depend on the geometry, so targets on this corridor are repo-specific.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Corridor, box


def canonical_corridor() -> Corridor:
    polys = [
        box([1.0, 0.0, 0.0], [1.4, 0.7, 0.6]),
        box([2.8, 1.1, 0.5], [0.9, 1.2, 0.7]),
        box([4.4, 2.0, 1.2], [1.2, 0.8, 0.5]),
        box([6.3, 1.2, 1.8], [1.1, 1.0, 0.6]),
    ]
    return Corridor(polys, start=np.array([0.0, 0.0, 0.0]),
                    goal=np.array([7.0, 1.0, 1.8]))


def straight_corridor(length=4.0, half_width=0.5) -> Corridor:
    polys = [box([length / 2, 0.0, 0.0], [length / 2 + half_width, half_width, half_width])]
    return Corridor(polys, start=np.zeros(3), goal=np.array([length, 0.0, 0.0]))


def two_box_corridor() -> Corridor:
    polys = [
        box([1.0, 0.0, 0.0], [1.2, 0.6, 0.6]),
        box([2.6, 0.8, 0.3], [1.0, 1.0, 0.6]),
    ]
    return Corridor(polys, start=np.array([0.1, 0.0, 0.0]),
                    goal=np.array([3.3, 1.2, 0.5]))


def random_corridor(rng, m=3, scale=1.0) -> Corridor:
    """Chain of overlapping boxes taking random turns; always valid."""
    centers = [np.zeros(3)]
    halves = [rng.uniform(0.6, 1.2, 3) * scale]
    for _ in range(m - 1):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        prev_c, prev_h = centers[-1], halves[-1]
        h = rng.uniform(0.6, 1.2, 3) * scale
        # step short enough that consecutive boxes keep a chunky overlap
        step = 0.6 * (np.min(prev_h) + np.min(h))
        centers.append(prev_c + direction * step)
        halves.append(h)
    polys = [box(c, h) for c, h in zip(centers, halves)]
    start = centers[0] - 0.5 * halves[0] * np.array([1.0, 0, 0])
    goal = centers[-1] + 0.5 * halves[-1] * np.array([1.0, 0, 0])
    corridor = Corridor(polys, start=start, goal=goal)
    corridor.validate()
    return corridor


BUILTIN_CORRIDORS = {
    "canonical": canonical_corridor,
    "straight": straight_corridor,
    "two-box": two_box_corridor,
}


def resolve_corridor(ref: str) -> Corridor:
    """A corridor JSON path or the name of a built-in scenario."""
    if ref in BUILTIN_CORRIDORS:
        return BUILTIN_CORRIDORS[ref]()
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(f"corridor file not found: {ref}")
    return Corridor.load_json(path)


@dataclass
class Scenario:
    """One planner run: corridor, controller overrides, outputs, seed."""

    corridor: str
    out_dir: str = "out"
    seed: int = 0
    mpc: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    @classmethod
    def load_json(cls, path) -> "Scenario":
        with open(path) as fh:
            data = json.load(fh)
        known = {"corridor", "out_dir", "seed", "mpc", "solver"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        if "corridor" not in data:
            raise ValueError("scenario JSON missing field 'corridor'")
        return cls(**data)
