"""Pseudo-random trajectory ensembles: generation, perturbation and statistics."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, storage
from .model import (ModelParams, as_state, close_window, close_window_extended,
                    iterate_extended)

SNAPSHOT_PATTERN = "datos_{:04d}.ybv"
INDIVIDUALS_PER_UNIT = 55_000
MIN_INDIVIDUALS = 500
RANDOM_SPAN = 200_000


class ClampWarning(UserWarning):
    pass


@dataclass
class SnapshotFile:
    """One trajectory: the raw initial state followed by post-burn-in snapshots.

    ``labels`` count applications of the one-year map T; row 0 is the raw
    initial state (label 0).
    """

    file_id: int
    seed: int
    labels: np.ndarray
    states: np.ndarray
    params: ModelParams = field(default_factory=ModelParams, repr=False)

    @property
    def post_burn(self) -> np.ndarray:
        return self.states[1:]

    @property
    def post_burn_labels(self) -> np.ndarray:
        return self.labels[1:]

    def write(self, path) -> None:
        storage.write_snapshots(path, self.params.steps_per_year, self.labels, self.states)

    @classmethod
    def read(cls, path, file_id: int, seed: int = 0,
             params: ModelParams | None = None) -> "SnapshotFile":
        params = params or ModelParams()
        p, labels, states = storage.read_snapshots(path)
        if p != params.steps_per_year:
            raise storage.FormatError(f"{path}: p={p} does not match params p={params.steps_per_year}")
        return cls(file_id, seed, labels, states, params)


@dataclass(frozen=True)
class SensitivityReport:
    per_file_b: np.ndarray
    mean_b: float
    d0: float
    perturbation_magnitude: np.ndarray
    realized_norms: np.ndarray


@dataclass(frozen=True)
class DispersionReport:
    grand_mean: float
    abs_deviation: float
    per_file_means: np.ndarray


def file_seed(master_seed: int, file_id: int) -> int:
    """Independent 64-bit seed for one file, derived from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(file_id),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    # Philox: counter-based, 256-bit key/counter state
    return np.random.Generator(np.random.Philox(int(seed)))


def random_initial(rng: np.random.Generator, params: ModelParams) -> np.ndarray:
    """At least 500 animals per slot, up to ~200500, normalised by 55000."""
    p2 = 2 * params.steps_per_year
    counts = MIN_INDIVIDUALS + rng.integers(0, RANDOM_SPAN, size=p2)
    return close_window(counts / INDIVIDUALS_PER_UNIT, params)


def generate_file(file_id: int, seed: int, params: ModelParams,
                  burn_pairs: int = 10_000, snapshot_count: int = 1024) -> SnapshotFile:
    if burn_pairs < 1 or snapshot_count < 1:
        raise ValueError("burn_pairs and snapshot_count must be at least 1")
    x0 = random_initial(make_rng(seed), params)
    span = 2 * params.steps_per_year
    snaps = _kernels.snapshots(x0, burn_pairs, snapshot_count, span, *params._tables.args())
    labels = np.concatenate(([0], 2 * burn_pairs + 2 * np.arange(snapshot_count)))
    states = np.vstack([x0[None, :], snaps])
    return SnapshotFile(file_id, seed, labels.astype(np.int64), states, params)


def generate_ensemble(master_seed: int, size: int, params: ModelParams,
                      burn_pairs: int = 10_000, snapshot_count: int = 1024,
                      out_dir=None, progress=None) -> list[SnapshotFile]:
    """Files ``1..size``; each uses its own stream derived from ``master_seed``.

    When ``out_dir`` is given the files and an ``ensemble.json`` index are written.
    """
    files = []
    for fid in range(1, size + 1):
        f = generate_file(fid, file_seed(master_seed, fid), params, burn_pairs, snapshot_count)
        if out_dir is not None:
            f.write(Path(out_dir) / SNAPSHOT_PATTERN.format(fid))
        files.append(f)
        if progress:
            progress(fid, size)
    if out_dir is not None:
        index = {
            "master_seed": int(master_seed),
            "burn_pairs": burn_pairs,
            "snapshot_count": snapshot_count,
            "files": {str(f.file_id): str(f.seed) for f in files},
        }
        (Path(out_dir) / "ensemble.json").write_text(json.dumps(index, indent=2) + "\n")
    return files


def load_ensemble(directory, params: ModelParams) -> list[SnapshotFile]:
    directory = Path(directory)
    index_path = directory / "ensemble.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no ensemble index in {directory}")
    index = json.loads(index_path.read_text())
    files = []
    for fid, seed in sorted(index["files"].items(), key=lambda kv: int(kv[0])):
        path = directory / SNAPSHOT_PATTERN.format(int(fid))
        files.append(SnapshotFile.read(path, int(fid), int(seed), params))
    return files


def perturb(state, magnitude: float, rng: np.random.Generator,
            params: ModelParams, extended: bool = False) -> np.ndarray:
    """Uniform noise in [-u, u] on the first 2p coordinates; last one recomputed.

    With ``extended`` the result is a ``np.longdouble`` vector, so that
    perturbations far below the binary64 spacing of the coordinates survive.
    """
    x = as_state(state, params)
    if magnitude < 0:
        raise ValueError("perturbation magnitude must be non-negative")
    p2 = 2 * params.steps_per_year
    head = x[:p2].astype(np.longdouble if extended else float)
    new = head + rng.uniform(-magnitude, magnitude, size=p2)
    # rounding of head + noise may overshoot u by half an ulp; pull back one ulp
    over = np.abs(new - head) > magnitude
    new[over] = np.nextafter(new[over], head[over])
    bad = new <= 0
    if np.any(bad):
        warnings.warn(f"{bad.sum()} perturbed coordinates non-positive; clamped", ClampWarning)
        new[bad] = head[bad] / 2
    if extended:
        return close_window_extended(new, params)
    return close_window(new, params)


def sup_distance(a, b, params: ModelParams) -> float:
    """Sup norm over coordinates 0..2p-1; the last coordinate is deliberately left out."""
    p2 = 2 * params.steps_per_year
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype == np.longdouble or b.dtype == np.longdouble:
        return float(np.max(np.abs(a[:p2] - b[:p2])))
    return float(_kernels.sup_dist(a.astype(float), b.astype(float), p2))


def divergence_time(a, b, d0: float, cap: int, params: ModelParams,
                    extended: bool = False) -> int:
    """Least number of T^2 steps after which the pair is more than ``d0`` apart.

    Returns ``cap + 1`` when the pair stays within ``d0`` for ``cap`` steps.
    """
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    if extended:
        x = np.array(a, dtype=np.longdouble)
        y = np.array(b, dtype=np.longdouble)
        for step in range(1, cap + 1):
            x = iterate_extended(x, params)
            y = iterate_extended(y, params)
            if sup_distance(x, y, params) > d0:
                return step
        return cap + 1
    a = as_state(a, params)
    b = as_state(b, params)
    return int(_kernels.divergence(a, b, d0, cap, 2 * params.steps_per_year,
                                   2 * params.steps_per_year, *params._tables.args()))


def sensitivity(files, magnitude, d0: float, cap: int, seed: int,
                params: ModelParams, extended: bool = False) -> SensitivityReport:
    """Perturb each file's first post-burn state and time the divergence.

    ``magnitude`` is a scalar or one value per file.
    """
    mags = np.broadcast_to(np.asarray(magnitude, dtype=float), (len(files),))
    bs, norms = [], []
    for f, u in zip(files, mags):
        base = f.states[1]
        pert = perturb(base, u, make_rng(file_seed(seed, f.file_id)), params, extended)
        start = base.astype(pert.dtype)
        norms.append(sup_distance(start, pert, params))
        bs.append(divergence_time(start, pert, d0, cap, params, extended))
    bs = np.array(bs)
    return SensitivityReport(bs, float(bs.mean()), d0, np.array(mags), np.array(norms))


def dispersion(files) -> DispersionReport:
    if not files:
        raise ValueError("dispersion needs at least one file")
    p2 = files[0].states.shape[1] - 1
    per_file = np.array([f.post_burn[:, :p2].mean(axis=1).mean() for f in files])
    grand = float(per_file.mean())
    total = 0.0
    count = 0
    for f in files:
        block = f.post_burn[:, :p2]
        total += float(np.abs(block - grand).sum())
        count += block.size
    return DispersionReport(grand, total / count, per_file)
