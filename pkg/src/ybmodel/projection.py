"""Three-number summaries of states for plotting the attractor."""
from __future__ import annotations

import math

import numpy as np

from .model import ModelParams

WIDTH = 10


def windows(params: ModelParams) -> dict[str, tuple[int, int]]:
    """Inclusive coordinate ranges: year start, mid-year, and just after winter."""
    p = params.steps_per_year
    spring = math.ceil((params.winter_fraction + 0.05) * p - 1e-9)
    starts = {"x": 0, "y": p // 2, "z": spring}
    return {k: (s, s + WIDTH - 1) for k, s in starts.items()}


def header(params: ModelParams) -> list[str]:
    return [f"{k}_mean_N{lo}_N{hi}" for k, (lo, hi) in windows(params).items()]


def project(states, params: ModelParams) -> np.ndarray:
    """One ``(x, y, z)`` row per state."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("nothing to project")
    cols = [states[:, lo:hi + 1].mean(axis=1) for lo, hi in windows(params).values()]
    return np.column_stack(cols)


def bounding_box(points) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=float)
    return points.min(axis=0), points.max(axis=0)


def box_overlap(points, reference) -> float:
    """Share of the reference bounding box volume covered by the box of ``points``."""
    lo_a, hi_a = bounding_box(points)
    lo_b, hi_b = bounding_box(reference)
    inter = np.clip(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0, None)
    vol = np.prod(hi_b - lo_b)
    if vol == 0:
        raise ValueError("reference box is degenerate")
    return float(np.prod(inter) / vol)


def write_csv(path, rows, params: ModelParams) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header(params)) + "\n")
        for r in rows:
            fh.write(",".join(format(v, ".17g") for v in r) + "\n")
