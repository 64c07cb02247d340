"""Period-2 point of the yearly map, Jacobian of T^2 and its spectrum."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model import ModelParams, advance_two, as_state


class NewtonError(RuntimeError):
    pass


class KinkWarning(UserWarning):
    """A finite-difference stencil straddles the fecundity kink at N = 1."""


@dataclass(frozen=True)
class FixedPointResult:
    point: np.ndarray
    sup_residual: float
    l1_residual: float
    iterations_used: int
    converged: bool = True

    def recompute_residual(self, params: ModelParams) -> float:
        return float(np.max(np.abs(advance_two(self.point, params) - self.point)))


@dataclass(frozen=True)
class SpectrumReport:
    dominant: float
    subdominant_modulus: float
    all_moduli: np.ndarray
    power_iterations: int
    used_fallback: bool = False


def load_reference_point(path=None) -> np.ndarray:
    """The bundled reference period-2 point for the default parameters (201 coordinates)."""
    if path is None:
        path = resources.files("ybmodel") / "data" / "period2_point.txt"
    with open(path) as fh:
        values = [float(line) for line in fh if line.strip() and not line.startswith("#")]
    return np.array(values)


def _residuals(x, params):
    r = advance_two(x, params) - x
    return float(np.max(np.abs(r))), float(np.sum(np.abs(r)))


def find_period2_point(seed, params: ModelParams, tol: float = 1e-12,
                       max_iter: int = 1000) -> FixedPointResult:
    """Plain forward iteration of T^2 until successive iterates stop moving.

    The period-2 point is a saddle, so this lands on the attractor rather than
    on the point itself unless ``seed`` is already there.
    """
    x = as_state(seed, params)
    used = 0
    converged = False
    for used in range(1, max_iter + 1):
        y = advance_two(x, params)
        change = float(np.max(np.abs(y - x)))
        if change < tol:
            converged = True
            break
        x = y
    if max_iter == 0:
        used = 0
    sup, l1 = _residuals(x, params)
    return FixedPointResult(x, sup, l1, used, converged)


def h_derivative(n: float, params: ModelParams) -> float:
    """d(N m(N))/dN; at the kink N = 1 the left-hand value m0 is returned."""
    if n <= 0:
        raise ValueError(f"h_derivative needs N > 0, got {n}")
    m0, gamma = params.fecundity_cap, params.decay_exponent
    if n <= 1:
        return float(m0)
    return m0 * (1 - gamma) * n ** (-gamma)


def _h_vec(v, params):
    m0, gamma = params.fecundity_cap, params.decay_exponent
    out = np.full(v.shape, float(m0))
    hi = v > 1
    out[hi] = m0 * (1 - gamma) * v[hi] ** (-gamma)
    return out


def _lag_weights(t, params):
    """Weights gate(t-h)*S(h)/p for h = last_lag..first_lag (ascending source index)."""
    tab = params._tables
    hs = np.arange(tab.lag_hi, tab.lag_lo - 1, -1)
    gate = tab.gate[(t - hs) % tab.p]
    return np.where(gate, tab.surv[hs], 0.0) / tab.p


def jacobian_T2(point, params: ModelParams, scheme: str = "analytic_chain",
                step: float = 1e-6) -> np.ndarray:
    """Jacobian of T^2 at ``point``.

    ``analytic_chain`` pushes the identity through the recursion with the
    chain rule; ``finite_difference`` uses central differences per coordinate.
    """
    x = as_state(point, params)
    p, dim = params.steps_per_year, params.dim
    if scheme == "finite_difference":
        if step <= 0:
            raise ValueError("finite-difference step must be positive")
        if np.any(np.abs(x - 1.0) <= step):
            warnings.warn("coordinate within one step of the kink at N = 1", KinkWarning)
        jac = np.empty((dim, dim))
        for k in range(dim):
            xp = x.copy()
            xm = x.copy()
            xp[k] += step
            xm[k] -= step
            jac[:, k] = (advance_two(xp, params) - advance_two(xm, params)) / (2 * step)
        return jac
    if scheme != "analytic_chain":
        raise ValueError(f"unknown scheme {scheme!r}")

    n = dim + 2 * p
    lo, hi = params.maturation_steps, params.max_lag
    series = np.empty(n)
    series[:dim] = x
    # values first, so the derivative factors are known
    series[dim:] = _extend_values(x, params)
    hder = _h_vec(series, params)
    d = np.zeros((n, dim))
    d[:dim] = np.eye(dim)
    for t in range(dim, n):
        w = _lag_weights(t, params) * hder[t - hi : t - lo + 1]
        d[t] = w @ d[t - hi : t - lo + 1]
    return d[2 * p :]


def _extend_values(x, params):
    from .model import trajectory

    return trajectory(x, params, 2)[params.dim :]


def fresh_block_direct(point, params: ModelParams) -> np.ndarray:
    """Direct (one-lag) sensitivities of the first ``p`` fresh values of T.

    Entry ``[r, j]`` is the partial derivative of ``N_{2p+1+r}`` with respect
    to ``N_{1+j}`` through the explicit sum only, ignoring the dependence
    carried by earlier fresh values.  The matrix is upper triangular.
    """
    x = as_state(point, params)
    p = params.steps_per_year
    tab = params._tables
    hder = _h_vec(x, params)
    out = np.zeros((p, p))
    for r in range(p):
        t = 2 * p + 1 + r
        for j in range(r, p):
            lag = t - (1 + j)
            if tab.lag_lo <= lag <= tab.lag_hi and tab.gate[(1 + j) % p]:
                out[r, j] = hder[1 + j] * tab.surv[lag] / p
    return out


def spectrum(matrix, tol: float = 1e-10, max_iter: int = 10_000) -> SpectrumReport:
    """Dominant eigenvalue by power iteration plus all moduli from a dense solve."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("spectrum needs a square matrix")
    moduli = np.sort(np.abs(np.linalg.eigvals(a)))[::-1]

    v = np.ones(a.shape[0]) / np.sqrt(a.shape[0])
    rq_prev = np.nan
    rq = np.nan
    used = 0
    converged = False
    for used in range(1, max_iter + 1):
        w = a @ v
        rq = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0:
            break
        v = w / norm
        if abs(rq - rq_prev) < tol:
            converged = True
            break
        rq_prev = rq
    fallback = not converged or abs(abs(rq) - moduli[0]) > 1e-6
    if fallback:
        eig = np.linalg.eigvals(a)
        rq = float(eig[np.argmax(np.abs(eig))].real)
    return SpectrumReport(
        dominant=rq,
        subdominant_modulus=float(moduli[1]) if len(moduli) > 1 else 0.0,
        all_moduli=moduli,
        power_iterations=used,
        used_fallback=fallback,
    )


def newton_polish(guess, params: ModelParams, tol: float = 1e-12,
                  max_iter: int = 20) -> FixedPointResult:
    """Damped Newton on T^2(x) - x = 0 with the chain-rule Jacobian."""
    x = as_state(guess, params)
    eye = np.eye(params.dim)
    sup, l1 = _residuals(x, params)
    for it in range(1, max_iter + 1):
        if sup <= tol:
            return FixedPointResult(x, sup, l1, it - 1, True)
        r = advance_two(x, params) - x
        jac = jacobian_T2(x, params) - eye
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular Newton system at iteration {it}") from exc
        lam = 1.0
        while lam >= 1 / 64:
            trial = x + lam * delta
            if np.all(trial > 0):
                t_sup, t_l1 = _residuals(trial, params)
                if t_sup < sup:
                    break
            lam /= 2
        else:
            return FixedPointResult(x, sup, l1, it, False)
        x, sup, l1 = trial, t_sup, t_l1
    return FixedPointResult(x, sup, l1, max_iter, sup <= tol)
