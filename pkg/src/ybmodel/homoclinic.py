"""Numerical evidence for a transversal homoclinic point of the period-2 point.

A short arc of iterates of the period-2 point stands in for its local
unstable manifold.  Lattice points on that arc are followed under T^2 to find
the one returning closest to the point.  A tiny sub-arc around it is then
marched forward in guarded chunks, re-centred after every chunk, and the
angle between the vectors from the point to the two marched endpoints is
tracked: opening towards pi means the endpoints straddle the stable manifold.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import ModelParams, advance_two, as_state, iterate, iterate_extended

CROSSING = "CROSSING_EVIDENCE"
SAME_SIDE = "SAME_SIDE"
INCONCLUSIVE = "INCONCLUSIVE"

# Euclidean length bounds for the unstable arc at the usual depths
SEGMENT_LENGTH_BOUND = {19: 1e-2, 15: 1e-4}


class HomoclinicError(RuntimeError):
    pass


class GapTooSmall(HomoclinicError):
    pass


class GuardViolation(HomoclinicError):
    pass


class ZeroVectorWarning(UserWarning):
    pass


def scaled_distance(a, b) -> float:
    """Euclidean distance, computed after dividing by the largest difference."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("points must have the same length")
    if a.dtype == np.longdouble or b.dtype == np.longdouble:
        diff = np.abs(a - b)
        big = diff.max()
        if big == 0:
            return 0.0
        r = diff / big
        return float(big * np.sqrt((r * r).sum()))
    return float(_kernels.scaled_dist(a.astype(float), b.astype(float)))


def _unit_scaled(u):
    big = np.max(np.abs(u))
    return u / big if big > 0 else None


def angle(u, v) -> float:
    """Angle in [0, pi] between two vectors; 0 (with a warning) for a zero vector."""
    u = np.asarray(u)
    v = np.asarray(v)
    un = _unit_scaled(u if u.dtype == np.longdouble else u.astype(float))
    vn = _unit_scaled(v if v.dtype == np.longdouble else v.astype(float))
    if un is None or vn is None:
        warnings.warn("angle with a zero vector taken as 0", ZeroVectorWarning)
        return 0.0
    c = (un @ vn) / np.sqrt((un @ un) * (vn @ vn))
    return float(np.arccos(np.clip(c, -1, 1)))


@dataclass(frozen=True)
class UnstableSegment:
    left: np.ndarray
    right: np.ndarray
    s: int
    length: float

    @property
    def direction(self) -> np.ndarray:
        return self.right - self.left

    def point(self, m: int, subdivisions: int) -> np.ndarray:
        return self.left + (m / subdivisions) * (self.right - self.left)


def unstable_segment(p_hat, params: ModelParams, s: int = 19,
                     residual_tol: float = 1e-10) -> UnstableSegment:
    """The arc [T^(2s)(p), T^(2s+2)(p)] as a proxy for the local unstable manifold."""
    x = as_state(p_hat, params)
    res = float(np.max(np.abs(advance_two(x, params) - x)))
    if res > residual_tol:
        raise HomoclinicError(f"period-2 residual {res:.3g} exceeds {residual_tol:.3g}")
    left = iterate(x, params, s)
    right = advance_two(left, params)
    length = scaled_distance(left, right)
    bound = SEGMENT_LENGTH_BOUND.get(s)
    if bound is not None and not length < bound:
        raise HomoclinicError(f"arc length {length:.3g} for s={s} is not below {bound:g}")
    return UnstableSegment(left, right, s, length)


@dataclass(frozen=True)
class ReturnCandidate:
    subdivision_index: int
    min_distance: float
    j0: int
    subdivisions: int


def return_table(segment: UnstableSegment, p_hat, params: ModelParams,
                 subdivisions: int = 10_000, max_pairs: int = 1024, skip: int = 20):
    """Per lattice point: closest distance to ``p_hat`` over steps ``skip < j <= max_pairs``."""
    if subdivisions < 1 or max_pairs <= skip:
        raise ValueError("need subdivisions >= 1 and max_pairs > skip")
    if not segment.length > 1e-12:
        # every lattice point is p itself: each step is an equally good "return"
        raise HomoclinicError(f"degenerate segment of length {segment.length:.3g}")
    target = as_state(p_hat, params)
    span = 2 * params.steps_per_year
    return _kernels.return_scan(segment.left, segment.right, subdivisions, target, skip,
                                max_pairs, span, *params._tables.args())


def pick_candidate(best, best_j, subdivisions: int, skip: int = 20,
                   j_limit: int = 700) -> ReturnCandidate:
    """Global closest return with ``skip < j0 < j_limit``; ties go to the lowest index."""
    ok = (best_j > skip) & (best_j < j_limit)
    if not np.any(ok):
        raise HomoclinicError("no lattice point returns within the accepted window")
    masked = np.where(ok, best, np.inf)
    m = int(np.argmin(masked))
    return ReturnCandidate(m, float(best[m]), int(best_j[m]), subdivisions)


def scan_returns(segment: UnstableSegment, p_hat, params: ModelParams,
                 subdivisions: int = 10_000, max_pairs: int = 1024, skip: int = 20,
                 j_limit: int = 700) -> ReturnCandidate:
    best, best_j = return_table(segment, p_hat, params, subdivisions, max_pairs, skip)
    return pick_candidate(best, best_j, subdivisions, skip, j_limit)


@dataclass(frozen=True)
class RefinementState:
    L: np.ndarray
    Lq: np.ndarray
    Mid: np.ndarray
    Rq: np.ndarray
    R: np.ndarray
    iterations_done: int
    budget_remaining: int


@dataclass(frozen=True)
class ChunkRecord:
    start: int
    steps: int
    length_before: float
    length: float
    arc_sum: float
    accepted: bool

    @property
    def ratio(self) -> float:
        return self.arc_sum / self.length if self.length > 0 else math.inf


@dataclass(frozen=True)
class AngleDiagnostics:
    far_from_tangency_angle: float
    per_iterate_angles: tuple
    verdict: str
    distance_to_L: float = math.nan
    distance_to_R: float = math.nan
    expansion: float = math.nan


@dataclass
class Refinement:
    state: RefinementState
    diagnostics: AngleDiagnostics
    log: list = field(default_factory=list)
    gap_exponent: float = 0.0
    initial_length: float = 0.0
    candidate: ReturnCandidate | None = None


def classify(angles, high: float = 3.0, low: float = 1e-2, by: int = 3,
             through: int = 7) -> str:
    """Verdict from the angle sequence for j = 0, 1, ...

    Crossing: the angle exceeds ``high`` at some j <= ``by`` and stays at or
    above ``high`` through ``through``.  Same side: strictly decreasing up to
    ``by`` and below ``low`` there.
    """
    a = list(angles)
    if len(a) <= through:
        raise ValueError(f"need angles for j = 0..{through}")
    for j in range(by + 1):
        if a[j] > high:
            if all(x >= high for x in a[j:through + 1]):
                return CROSSING
            break
    if all(a[k + 1] < a[k] for k in range(by)) and a[by] < low:
        return SAME_SIDE
    return INCONCLUSIVE


def check_guards(log, max_length: float = 1e-4, ratio_tol: float = 1.0001) -> None:
    """Raise if any accepted chunk broke the length or straightness guard."""
    for rec in log:
        if not rec.accepted:
            continue
        if not rec.length <= max_length:
            raise GuardViolation(f"chunk at {rec.start}: length {rec.length:.3g} > {max_length:g}")
        if not rec.ratio <= ratio_tol:
            raise GuardViolation(f"chunk at {rec.start}: straightness {rec.ratio:.8f} > {ratio_tol}")


def _endpoints(mid, direction, gap):
    return (mid - direction / gap, mid - direction / (2 * gap), mid,
            mid + direction / (2 * gap), mid + direction / gap)


def refine(segment: UnstableSegment, candidate: ReturnCandidate, p_hat, params: ModelParams,
           gap_exponent: float, plan=(10, 8, 2), ratio_tol: float = 1.0001,
           max_length: float = 1e-4, min_length: float = 1e-16,
           n_angles: int = 8, extended: bool = True) -> Refinement:
    """March a sub-arc around the candidate up to its closest return, then classify.

    The sub-arc is ``mid -/+ step / gap`` with ``gap = 2**gap_exponent`` and
    ``step`` one lattice spacing.  After every accepted chunk the arc is
    rebuilt around the new midpoint from the imaged endpoint difference,
    again divided by ``gap``.

    The midpoint follows the binary64 orbit the scan found, bit for bit.  The
    arc itself gets as short as 1e-13 between chunks, where binary64 rounding
    of attractor-scale coordinates already breaks the straightness guard, so
    with ``extended`` the five arc points are imaged in extended precision and
    their offsets from the imaged midpoint are attached to the binary64 one.
    """
    if not 3 < gap_exponent <= 20:
        raise ValueError("gap_exponent must lie in (3, 20]")
    p_hat = as_state(p_hat, params)
    dtype = np.longdouble if extended else float
    gap = 2.0 ** gap_exponent
    n = candidate.subdivisions
    mid = segment.point(candidate.subdivision_index, n)
    direction = segment.direction.astype(dtype) / n
    j0 = candidate.j0
    done = 0
    log: list[ChunkRecord] = []
    initial_length = None
    pts = None
    while done < j0:
        pts = _endpoints(mid.astype(dtype), direction, gap)
        before = scaled_distance(pts[0], pts[4])
        if initial_length is None:
            initial_length = before
        if before <= min_length:
            raise GapTooSmall(f"arc collapsed to {before:.3g} at step {done}; reduce the exponent")
        remaining = j0 - done
        sizes = sorted({min(c, remaining) for c in plan}, reverse=True)
        for steps in sizes:
            new_mid = iterate(mid, params, steps)
            if extended:
                raw = [iterate_extended(x, params, steps) for x in pts]
                shift = new_mid.astype(dtype) - raw[2]
                images = [x + shift for x in raw]
                images[2] = new_mid.astype(dtype)
            else:
                raw = [iterate(x, params, steps) for x in pts]
                images = raw
            length = scaled_distance(raw[0], raw[4])
            arcs = sum(scaled_distance(raw[k], raw[k + 1]) for k in range(4))
            ok = length <= max_length and arcs <= ratio_tol * length
            log.append(ChunkRecord(done, steps, before, length, arcs, ok))
            if ok:
                break
        else:
            raise HomoclinicError(
                f"guards fail at step {done} even for {sizes[-1]} steps "
                f"(length {length:.3g}, straightness {arcs / length:.8f})"
            )
        done += steps
        pts = images
        mid = new_mid
        direction = raw[4] - raw[0]
    check_guards(log, max_length, ratio_tol)

    def step(x):
        return iterate_extended(x, params) if extended else advance_two(x, params)

    L, R = pts[0], pts[4]
    target = p_hat.astype(dtype)
    angles = []
    a, b = L, R
    for _ in range(n_angles):
        angles.append(angle(target - a, target - b))
        a, b = step(a), step(b)
    diag = AngleDiagnostics(
        far_from_tangency_angle=angle(R - L, segment.direction),
        per_iterate_angles=tuple(angles),
        verdict=classify(angles),
        distance_to_L=scaled_distance(target, L),
        distance_to_R=scaled_distance(target, R),
        expansion=scaled_distance(step(L), step(R)) / scaled_distance(L, R),
    )
    state = RefinementState(pts[0], pts[1], pts[2], pts[3], pts[4], done, j0 - done)
    return Refinement(state, diag, log, gap_exponent, initial_length, candidate)


def expansion_rate(L, R, params: ModelParams) -> float:
    """Growth of the distance between two points under one T^2 step."""
    d = scaled_distance(L, R)
    if d == 0:
        raise ValueError("expansion rate of coincident points is undefined")
    return scaled_distance(advance_two(L, params), advance_two(R, params)) / d


def write_transcript(path, ref: Refinement) -> None:
    c = ref.candidate
    d = ref.diagnostics
    lines = [
        f"gap exponent = {ref.gap_exponent:.8f}  gap = {2.0 ** ref.gap_exponent:.8f}",
    ]
    if c is not None:
        lines.append(f"candidate m = {c.subdivision_index} of {c.subdivisions}, "
                     f"j0 = {c.j0}, min distance = {c.min_distance:.11g}")
    lines.append(f"initial arc length = {ref.initial_length:.6e}")
    for rec in ref.log:
        status = "accepted" if rec.accepted else "rejected (too long or bent)"
        lines.append(
            f"iter= {rec.start}, dist(L,R) before = {rec.length_before:.16e}, "
            f"after {rec.steps} steps = {rec.length:.16e}, arc sum = {rec.arc_sum:.16e}, {status}"
        )
    lines += [
        f"iterations done = {ref.state.iterations_done}",
        f"Euclidean distance from p to L = {d.distance_to_L:.11f}",
        f"Euclidean distance from p to R = {d.distance_to_R:.11f}",
        f"expansion rate of [L, R] under one step = {d.expansion:.8f}",
        f"angle between unstable arc and [L, R] = {d.far_from_tangency_angle:.5e} rad, "
        f"~{round(math.degrees(d.far_from_tangency_angle))} deg",
    ]
    for j, a in enumerate(d.per_iterate_angles):
        lines.append(f"angle after {j} steps = {a:.5f} rad, ~{round(math.degrees(a))} deg")
    lines.append(f"verdict = {d.verdict}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_angles_csv(path, ref: Refinement) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "angle_rad", "angle_deg"])
        for j, a in enumerate(ref.diagnostics.per_iterate_angles):
            w.writerow([j, format(a, ".17g"), format(math.degrees(a), ".17g")])
