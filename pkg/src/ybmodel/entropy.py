"""Order-2 entropy from escape times of close pairs of attractor snapshots.

Pairs of post-burn snapshots from different files that are within ``d`` of
each other (sup norm over coordinates ``0..2p-1``) are followed jointly under
T^2 until they separate.  The mean escape time gives a maximum-likelihood
estimate of the entropy per T^2 step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ModelParams

DEFAULT_CAP = 10_000


@dataclass(frozen=True)
class MatchRecord:
    file_j: int
    iter_j: int
    state_j: np.ndarray
    file_i: int
    iter_i: int
    state_i: np.ndarray

    def key(self):
        return (self.file_j, self.iter_j, self.file_i, self.iter_i)


@dataclass(frozen=True)
class Sample:
    record: MatchRecord
    escape: int


@dataclass(frozen=True)
class EntropyEstimate:
    d: float
    sample_count: int
    mean_escape: float
    k_hat: float
    sigma_k: float
    tau_s: float = 1.0
    capped: int = 0
    analytic_sigma: bool = False

    @property
    def per_year(self) -> float:
        """Entropy of the one-year map (one sample step is two years)."""
        return self.k_hat / 2


def within(a, b, d: float, params: ModelParams) -> bool:
    """True iff every coordinate but the last differs by less than ``d``."""
    if d <= 0:
        raise ValueError("d must be positive")
    return bool(_kernels.within(np.asarray(a, float), np.asarray(b, float), d,
                                2 * params.steps_per_year))


def collect_matches(files, d: float, params: ModelParams) -> list[MatchRecord]:
    """All cross-file pairs of post-burn snapshots closer than ``d``.

    Records come out ordered by (file_j, snapshot of j, file_i, snapshot of i)
    with file_j < file_i.
    """
    if d <= 0:
        raise ValueError("d must be positive")
    if not files:
        return []
    ncoord = 2 * params.steps_per_year
    blocks = [f.post_burn for f in files]
    points = np.ascontiguousarray(np.vstack(blocks))
    owner = np.concatenate([np.full(len(b), k) for k, b in enumerate(blocks)])
    row = np.concatenate([np.arange(len(b)) for b in blocks])
    # sweep along the most spread-out coordinate to keep the candidate band thin
    key = int(np.argmax(points[:, :ncoord].std(axis=0)))
    order = np.argsort(points[:, key], kind="stable")
    left, right = _kernels.close_pairs(points, owner, order, key, d, ncoord)
    swap = owner[left] > owner[right]
    a = np.where(swap, right, left)
    b = np.where(swap, left, right)
    ranks = np.lexsort((row[b], owner[b], row[a], owner[a]))
    out = []
    for k in ranks:
        fj, fi = files[owner[a[k]]], files[owner[b[k]]]
        out.append(MatchRecord(
            fj.file_id, int(fj.post_burn_labels[row[a[k]]]), points[a[k]].copy(),
            fi.file_id, int(fi.post_burn_labels[row[b[k]]]), points[b[k]].copy(),
        ))
    return out


def escape_time(record: MatchRecord, d: float, params: ModelParams,
                cap: int = DEFAULT_CAP) -> int:
    """Joint T^2 steps until the pair is no longer ``d``-close; ``cap + 1`` if never."""
    span = 2 * params.steps_per_year
    return int(_kernels.escape(np.asarray(record.state_j, float), np.asarray(record.state_i, float),
                               d, cap, span, span, *params._tables.args()))


def escape_times(records, d: float, params: ModelParams,
                 cap: int = DEFAULT_CAP) -> list[Sample]:
    return [Sample(r, escape_time(r, d, params, cap)) for r in records]


def dedup(samples) -> list[Sample]:
    """Drop samples that continue the previously retained close run.

    A sample is dropped when it shares file_i with the last retained one and
    ``last.iter_i + last.escape >= iter_i``, or the same holds for file_j.
    Only consecutive retained records are compared, so input order matters.
    """
    kept: list[Sample] = []
    for s in samples:
        if kept:
            prev, r = kept[-1], s.record
            pr = prev.record
            if pr.file_i == r.file_i and pr.iter_i + prev.escape >= r.iter_i:
                continue
            if pr.file_j == r.file_j and pr.iter_j + prev.escape >= r.iter_j:
                continue
        kept.append(s)
    return kept


def k_from_mean(mean_escape: float, tau_s: float = 1.0) -> float:
    return -math.log(abs(1 - 1 / mean_escape)) / tau_s


def mean_from_k(k_hat: float, tau_s: float = 1.0) -> float:
    return 1 / (1 - math.exp(-k_hat * tau_s))


def estimate_from_mean(mean_escape: float, count: int, d: float = float("nan"),
                       tau_s: float = 1.0, analytic_sigma: bool = False,
                       capped: int = 0) -> EntropyEstimate:
    if count < 1:
        raise ValueError("no samples to estimate from")
    if not mean_escape > 1:
        raise ValueError(f"mean escape time must exceed 1, got {mean_escape}")
    k = k_from_mean(mean_escape, tau_s)
    sigma = 1 / (math.sqrt(count) * k * math.sqrt(mean_escape * (mean_escape - 1)))
    if analytic_sigma:
        # error propagation of the sample mean through the estimator
        sigma *= k
    return EntropyEstimate(d, count, mean_escape, k, sigma, tau_s, capped, analytic_sigma)


def estimate(samples, d: float = float("nan"), tau_s: float = 1.0,
             cap: int = DEFAULT_CAP, analytic_sigma: bool = False) -> EntropyEstimate:
    """Maximum-likelihood entropy per ``tau_s`` from retained samples.

    Samples that hit the escape cap are excluded and counted in ``capped``.
    """
    times = [s.escape for s in samples if s.escape <= cap]
    capped = len(samples) - len(times)
    if not times:
        raise ValueError("no uncapped samples")
    return estimate_from_mean(float(np.mean(times)), len(times), d, tau_s,
                              analytic_sigma, capped)


def sweep_grid() -> list[float]:
    """32 radii: k/2048 and then k/65536 for k = 16..1."""
    return [k / 2048 for k in range(16, 0, -1)] + [k / 65536 for k in range(16, 0, -1)]


@dataclass(frozen=True)
class SweepRow:
    d: float
    estimate: EntropyEstimate | None
    matches: int
    note: str = ""


def run(files, d: float, params: ModelParams, cap: int = DEFAULT_CAP,
        tau_s: float = 1.0, analytic_sigma: bool = False):
    """Collect, time, deduplicate and estimate at one radius."""
    records = collect_matches(files, d, params)
    samples = dedup(escape_times(records, d, params, cap))
    return records, samples, estimate(samples, d, tau_s, cap, analytic_sigma)


def sweep(files, params: ModelParams, grid=None, cap: int = DEFAULT_CAP,
          tau_s: float = 1.0) -> list[SweepRow]:
    rows = []
    for d in grid or sweep_grid():
        records = collect_matches(files, d, params)
        samples = dedup(escape_times(records, d, params, cap))
        try:
            est = estimate(samples, d, tau_s, cap)
            rows.append(SweepRow(d, est, len(records)))
        except ValueError as exc:
            rows.append(SweepRow(d, None, len(records), str(exc)))
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("entropy,sigma,d\n")
        for r in rows:
            if r.estimate is None:
                fh.write(f"nan,nan,{r.d:.17g}\n")
            else:
                fh.write(f"{r.estimate.k_hat:.17g},{r.estimate.sigma_k:.17g},{r.d:.17g}\n")
