"""Compiled inner loops for the renewal recursion.

Every routine here works on plain arrays and scalars so numba can compile it.
The public wrappers live in :mod:`ybmodel.model`, :mod:`ybmodel.entropy` and
:mod:`ybmodel.homoclinic`.

Summation order is fixed (ascending lag, plain accumulation, division by ``p``
at the end) so that any two code paths computing the same iterate agree
bit-for-bit.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def birth_term(v, m0, gamma):
    # N * m(N); m is flat below 1 and decays as N**-gamma above.
    if v > 1.0:
        return v * (m0 * v ** (-gamma))
    return v * m0


@njit(cache=True)
def fill(buf, g, start, stop, lag_lo, lag_hi, surv, gate, p, m0, gamma):
    """Compute ``buf[start:stop]`` from earlier entries; keeps ``g`` in sync."""
    for t in range(start, stop):
        s = 0.0
        phase = (t - lag_lo) % p
        for h in range(lag_lo, lag_hi + 1):
            if gate[phase]:
                s += g[t - h] * surv[h]
            phase -= 1
            if phase < 0:
                phase = p - 1
        v = s / p
        buf[t] = v
        g[t] = birth_term(v, m0, gamma)


@njit(cache=True)
def step_inplace(x, n, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma):
    """Apply the ``span``-step shift map ``n`` times to ``x`` in place.

    ``span == p`` is one year (T), ``span == 2p`` is two years (T^2).
    ``buf`` and ``g`` are scratch arrays of length ``len(x) + span``.
    """
    dim = x.shape[0]
    if n <= 0:
        return
    for k in range(dim):
        buf[k] = x[k]
        g[k] = birth_term(x[k], m0, gamma)
    for it in range(n):
        if it > 0:
            for k in range(dim):
                buf[k] = buf[span + k]
                g[k] = g[span + k]
        fill(buf, g, dim, dim + span, lag_lo, lag_hi, surv, gate, p, m0, gamma)
    for k in range(dim):
        x[k] = buf[span + k]


@njit(cache=True)
def snapshots(x, burn, count, span, lag_lo, lag_hi, surv, gate, p, m0, gamma):
    """Burn ``x`` in for ``burn`` steps, then record ``count`` successive states.

    Row 0 of the result is the state after the burn-in.
    """
    dim = x.shape[0]
    buf = np.empty(dim + span)
    g = np.empty(dim + span)
    cur = x.copy()
    step_inplace(cur, burn, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
    out = np.empty((count, dim))
    for r in range(count):
        if r > 0:
            step_inplace(cur, 1, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
        out[r, :] = cur
    return out


@njit(cache=True)
def sup_dist(a, b, ncoord):
    m = 0.0
    for k in range(ncoord):
        d = abs(a[k] - b[k])
        if d > m:
            m = d
    return m


@njit(cache=True)
def within(a, b, d, ncoord):
    for k in range(ncoord):
        if abs(a[k] - b[k]) >= d:
            return False
    return True


@njit(cache=True)
def scaled_dist(a, b):
    n = a.shape[0]
    big = 0.0
    for k in range(n):
        d = abs(a[k] - b[k])
        if d > big:
            big = d
    if big == 0.0:
        return 0.0
    acc = 0.0
    for k in range(n):
        r = abs(a[k] - b[k]) / big
        acc += r * r
    return big * np.sqrt(acc)


@njit(cache=True)
def divergence(a, b, d0, cap, ncoord, span, lag_lo, lag_hi, surv, gate, p, m0, gamma):
    """First step count at which the sup distance exceeds ``d0`` (cap+1 if never)."""
    dim = a.shape[0]
    buf = np.empty(dim + span)
    g = np.empty(dim + span)
    x = a.copy()
    y = b.copy()
    for step in range(1, cap + 1):
        step_inplace(x, 1, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
        step_inplace(y, 1, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
        if sup_dist(x, y, ncoord) > d0:
            return step
    return cap + 1


@njit(cache=True)
def escape(a, b, d, cap, ncoord, span, lag_lo, lag_hi, surv, gate, p, m0, gamma):
    """First step count at which the pair stops being ``d``-close (cap+1 if never)."""
    dim = a.shape[0]
    buf = np.empty(dim + span)
    g = np.empty(dim + span)
    x = a.copy()
    y = b.copy()
    for step in range(1, cap + 1):
        step_inplace(x, 1, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
        step_inplace(y, 1, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
        if not within(x, y, d, ncoord):
            return step
    return cap + 1


@njit(cache=True)
def close_pairs(points, owner, order, key, d, ncoord):
    """All index pairs (a, b) of different owners with every coordinate closer than d.

    ``order`` sorts ``points`` by the column ``key``; a sweep over that order
    only compares rows whose key coordinates differ by less than ``d``.
    Returned pairs are unordered; the caller canonicalises them.
    """
    n = order.shape[0]
    cap = 1024
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    count = 0
    for ia in range(n):
        a = order[ia]
        xa = points[a, key]
        for ib in range(ia + 1, n):
            b = order[ib]
            if points[b, key] - xa >= d:
                break
            if owner[a] == owner[b]:
                continue
            if within(points[a], points[b], d, ncoord):
                if count == cap:
                    cap *= 2
                    nl = np.empty(cap, dtype=np.int64)
                    nr = np.empty(cap, dtype=np.int64)
                    nl[:count] = left[:count]
                    nr[:count] = right[:count]
                    left = nl
                    right = nr
                left[count] = a
                right[count] = b
                count += 1
    return left[:count], right[:count]


@njit(cache=True)
def return_scan(left, right, subdivisions, target, skip, max_pairs, span,
                lag_lo, lag_hi, surv, gate, p, m0, gamma):
    """Closest approach to ``target`` of each lattice point on [left, right].

    Lattice point ``m`` is ``left + (m / subdivisions) (right - left)``.  Only
    step counts ``skip < j <= max_pairs`` compete; ties keep the smaller ``j``.
    Returns ``(best_distance, best_j)`` per lattice point.
    """
    dim = left.shape[0]
    buf = np.empty(dim + span)
    g = np.empty(dim + span)
    npts = subdivisions + 1
    best = np.full(npts, np.inf)
    best_j = np.zeros(npts, dtype=np.int64)
    y = np.empty(dim)
    for m in range(npts):
        frac = m / subdivisions
        for k in range(dim):
            y[k] = left[k] + frac * (right[k] - left[k])
        step_inplace(y, skip, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
        for j in range(skip + 1, max_pairs + 1):
            step_inplace(y, 1, span, buf, g, lag_lo, lag_hi, surv, gate, p, m0, gamma)
            dist = scaled_dist(y, target)
            if dist < best[m]:
                best[m] = dist
                best_j[m] = j
    return best, best_j
