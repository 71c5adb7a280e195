"""Information projections onto superlevel sets of a q-statistic.

Forward projections ``argmin_{q(f) >= c} I(f||f0)`` give the most likely
outlier distribution.  Reverse projections ``min_{q(f1) >= c} I(fhat||f1)``
are the inner step of the generalized likelihood ratio.  Both are solved
through their exponential-family KKT forms with scalar bisection.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .simplex import LLR, MEAN, VARIANCE, Pmf, QFunction, kl_array

MAX_ITER = 200
RESIDUAL_TOL = 1e-10
# bracket expansion stops once r * span(values) exceeds this
MAX_EXPONENT_SPAN = 1e4
GRID_MAX_POINTS = 5_000_000


class InfeasibleError(ValueError):
    """The constraint set is empty (or touches the simplex boundary only)."""


class ConvergenceError(RuntimeError):
    pass


@dataclass
class ProjectionResult:
    f_star: Pmf
    kl_value: float
    multipliers: dict = field(default_factory=dict)
    active: bool = False

    def to_dict(self) -> dict:
        return {
            "f_star": self.f_star.probs.tolist(),
            "kl_value": self.kl_value,
            "multipliers": self.multipliers,
            "active": self.active,
        }


def log_mgf(f0: Pmf, r: float, values: np.ndarray | None = None) -> float:
    """Cumulant generating function ln E_f0 exp(r X), computed with a max shift."""
    v = f0.alphabet.letters if values is None else np.asarray(values, dtype=float)
    if not math.isfinite(r):
        raise ValueError("r must be finite")
    return _log_mgf(f0.probs, v, r)


def _log_mgf(p: np.ndarray, v: np.ndarray, r: float) -> float:
    support = p > 0
    return float(logsumexp(r * v[support], b=p[support]))


def _tilted(p: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    support = p > 0
    logw = np.full(p.shape, -np.inf)
    logw[support] = np.log(p[support]) + r * v[support]
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def _solve_tilt(p: np.ndarray, v: np.ndarray, target: float) -> tuple[np.ndarray, float]:
    """Exponential tilt of p whose v-expectation equals ``target``.

    The tilted expectation is strictly increasing in r, so a doubling bracket
    followed by bisection finds the unique root.
    """
    base = float(p @ v)
    if target <= base:
        return p.copy(), 0.0
    support = p > 0
    if target >= v[support].max():
        raise InfeasibleError(f"target {target!r} is not below the largest reachable value")
    span = max(float(np.ptp(v[support])), 1e-300)
    lo, hi = 0.0, 1.0 / span
    while _tilted(p, v, hi) @ v < target:
        lo, hi = hi, 2 * hi
        if hi * span > MAX_EXPONENT_SPAN:
            raise ConvergenceError("tilt bracket expansion did not reach the target")
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _tilted(p, v, mid) @ v < target:
            lo = mid
        else:
            hi = mid
    f = _tilted(p, v, hi)
    if abs(f @ v - target) > RESIDUAL_TOL * max(1.0, abs(target)):
        raise ConvergenceError(f"tilt residual {f @ v - target:.3e} after bisection")
    return f, hi


def tilt_to_mean(f0: Pmf, target_mean: float) -> ProjectionResult:
    """I-projection of f0 onto {mean >= target_mean}: f0(a) exp(r a - Lambda(r))."""
    a = f0.alphabet.letters
    if not a[0] < target_mean < a[-1]:
        raise InfeasibleError(f"target mean {target_mean!r} outside ({a[0]}, {a[-1]})")
    if target_mean <= f0.mean():
        return ProjectionResult(f0, 0.0, {"r": 0.0, "log_mgf": 0.0}, active=False)
    probs, r = _solve_tilt(f0.probs, a, target_mean)
    f_star = Pmf(probs, f0.alphabet)
    lam = _log_mgf(f0.probs, a, r)
    kl = float(max(0.0, r * (probs @ a) - lam))
    return ProjectionResult(f_star, kl, {"r": r, "log_mgf": lam}, active=True)


def i_project(f0: Pmf, q: QFunction, c: float) -> ProjectionResult:
    """Forward I-projection of f0 onto {q >= c}, c in centered units."""
    if f0.alphabet != q.alphabet:
        raise ValueError("f0 and q use different alphabets")
    if q.centered(f0.probs) >= c:
        return ProjectionResult(f0, 0.0, {}, active=False)
    if q.kind == MEAN:
        return tilt_to_mean(f0, c + q.offset)
    if q.kind == LLR:
        probs, theta = _solve_tilt(f0.probs, q.values, c + q.offset)
        f_star = Pmf(probs, f0.alphabet)
        return ProjectionResult(f_star, kl_array(probs, f0.probs), {"theta": theta}, active=True)
    if q.kind == VARIANCE:
        return _project_variance(f0, c + q.offset)
    raise ValueError(f"unsupported q kind {q.kind!r}")


def _variance_family(p: np.ndarray, a: np.ndarray, lam1: float, lam2: float) -> np.ndarray:
    support = p > 0
    logw = np.full(p.shape, -np.inf)
    logw[support] = np.log(p[support]) + lam1 * a[support] + lam2 * a[support] ** 2
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def _variance_stationary(p: np.ndarray, a: np.ndarray, lam2: float) -> tuple[np.ndarray, float]:
    """Member of f0 exp(l1 a + l2 a^2) whose mean equals -l1 / (2 l2)."""
    support = p > 0
    a_lo, a_hi = a[support].min(), a[support].max()
    lo, hi = -2 * lam2 * a_hi, -2 * lam2 * a_lo
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = _variance_family(p, a, mid, lam2)
        if f @ a + mid / (2 * lam2) < 0:
            lo = mid
        else:
            hi = mid
    lam1 = 0.5 * (lo + hi)
    return _variance_family(p, a, lam1, lam2), lam1


def _var(f: np.ndarray, a: np.ndarray) -> float:
    mu = f @ a
    return float(f @ (a * a) - mu * mu)


def _project_variance(f0: Pmf, target_var: float) -> ProjectionResult:
    p, a = f0.probs, f0.alphabet.letters
    support = p > 0
    sup_var = (a[support].max() - a[support].min()) ** 2 / 4
    if target_var >= sup_var:
        raise InfeasibleError(f"variance {target_var!r} is not below the supremum {sup_var!r}")
    span2 = float(np.ptp(a[support]) ** 2)
    lo, hi = 0.0, 1.0 / span2
    while _var(_variance_stationary(p, a, hi)[0], a) < target_var:
        lo, hi = hi, 2 * hi
        if hi * span2 > MAX_EXPONENT_SPAN:
            raise ConvergenceError("variance bracket expansion did not reach the target")
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _var(_variance_stationary(p, a, mid)[0], a) < target_var:
            lo = mid
        else:
            hi = mid
    f, lam1 = _variance_stationary(p, a, hi)
    if abs(_var(f, a) - target_var) > RESIDUAL_TOL * max(1.0, target_var):
        raise ConvergenceError(f"variance residual {_var(f, a) - target_var:.3e}")
    return ProjectionResult(Pmf(f, f0.alphabet), kl_array(f, p),
                            {"lambda1": lam1, "lambda2": hi}, active=True)


# ---------------------------------------------------------------------------
# reverse projections


def _reverse_linear_rows(P: np.ndarray, V: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """min_{f1 . V[i] >= c} I(P[i] || f1) for every row; V is (m,) or one row per P row.

    Stationarity gives f1 = p / (1 - lam (v - c)) with a single multiplier,
    and lam maximizes the concave g(lam) = sum p log(1 - lam (v - c)), whose
    maximum is the divergence.  Solved by Newton steps on g' kept inside a
    sign bracket.  If the best letter is outside the support of p the optimum
    may instead park the missing mass on that letter, which happens exactly
    when lam reaches 1 / (v_max - c).

    Returns (values, lam, top_mass) with top_mass the total mass the
    solution puts on the letters attaining max v (0 for inactive rows).
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    B, m = P.shape
    V = np.broadcast_to(np.asarray(V, dtype=float), (B, m))
    v_max = V.max(axis=1)
    if np.any(c >= v_max):
        raise InfeasibleError(f"constraint {c!r} is not below the largest letter value")
    values = np.zeros(B)
    lam = np.zeros(B)
    top_mass = np.zeros(B)
    active = np.einsum("ij,ij->i", P, V) < c
    if not np.any(active):
        return values, lam, top_mass
    Pa = P[active]
    D = V[active] - c
    supp = Pa > 0
    d_top = np.where(supp, D, -np.inf).max(axis=1)
    cap = 1.0 / (v_max[active] - c)

    def h(x, rows=slice(None)):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.where(supp[rows], Pa[rows] / (1.0 - x[:, None] * D[rows]), 0.0).sum(axis=1)

    x = np.zeros(Pa.shape[0])
    capped = (d_top < 1.0 / cap) & (h(cap) <= 1.0)
    x[capped] = cap[capped]
    run = np.flatnonzero(~capped)
    if run.size:
        lo = np.zeros(run.size)
        hi = np.minimum(np.where(d_top[run] > 0, 1.0 / np.maximum(d_top[run], 1e-300), np.inf), cap[run])
        xr = np.zeros(run.size)
        for _ in range(MAX_ITER):
            p, d = Pa[run], D[run]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                r = np.where(supp[run], d / (1.0 - xr[:, None] * d), 0.0)
                g1 = -(p * r).sum(axis=1)
                g2 = -(p * r * r).sum(axis=1)
                lo = np.where(g1 > 0, xr, lo)
                hi = np.where(g1 < 0, xr, hi)
                step = g1 / g2
                xn = xr - step
            inside = (xn > lo) & (xn < hi) & np.isfinite(xn)
            xn = np.where(inside, xn, 0.5 * (lo + hi))
            done = (np.abs(xn - xr) <= 4e-16 * np.abs(xn)) | (hi - lo <= 4e-16 * hi) | (g1 == 0)
            xr = np.where(g1 == 0, xr, xn)
            x[run[done]] = xr[done]
            keep = ~done
            if not np.any(keep):
                break
            run, lo, hi, xr = run[keep], lo[keep], hi[keep], xr[keep]
        else:
            x[run] = xr
    # letters at the largest value share one denominator; their total mass is
    # taken from normalization, which stays accurate when the multiplier sits
    # closer to their pole than floats resolve (tiny weight on the top letter)
    grp = V[active] == v_max[active][:, None]
    other = supp & ~grp
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(other, Pa / (1.0 - x[:, None] * D), 0.0)
        top = np.maximum(1.0 - F.sum(axis=1), 0.0)
        pg = np.where(grp, Pa, 0.0).sum(axis=1)
        logs = np.where(other, Pa * np.log1p(-x[:, None] * D), 0.0).sum(axis=1)
        logs = logs + np.where(pg > 0, pg * np.log(pg / top), 0.0)
    values[active] = np.maximum(logs, 0.0)
    lam[active] = x
    top_mass[active] = top
    return values, lam, top_mass


def _solution_rows(P: np.ndarray, V: np.ndarray, c: float, lam: np.ndarray,
                   top_mass: np.ndarray) -> np.ndarray:
    """Reverse-projection solutions rebuilt from (lam, top_mass); inactive rows (lam 0) return P."""
    P = np.atleast_2d(P)
    V = np.broadcast_to(V, P.shape)
    v_max = V.max(axis=1, keepdims=True)
    grp = V == v_max
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where((P > 0) & ~grp, P / (1.0 - lam[:, None] * (V - c)), 0.0)
    pg = np.where(grp, P, 0.0).sum(axis=1)
    first = grp & (np.cumsum(grp, axis=1) == 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(pg[:, None] > 0, np.where(grp, P, 0.0) / pg[:, None], first)
    F = F + share * top_mass[:, None]
    return np.where(lam[:, None] > 0, F, P)


def _reverse_linear_batch(P: np.ndarray, v: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _reverse_linear_rows(P, v, c)


def _reverse_linear_point(p: np.ndarray, v: np.ndarray, c: float) -> tuple[np.ndarray, float, float]:
    values, lam, top = _reverse_linear_rows(p[None, :], v, c)
    if lam[0] == 0.0:
        return p.copy(), 0.0, 0.0
    f1 = _solution_rows(p[None, :], v, c, lam, top)[0]
    return f1 / f1.sum(), float(values[0]), float(lam[0])


def _variance_reverse_batch(P: np.ndarray, a: np.ndarray, c: float,
                            rel_tol: float = 1e-11) -> tuple[np.ndarray, np.ndarray]:
    """min_{var(f1) >= c} I(P[i] || f1) through a centre t.

    var(f) = min_t E_f (X - t)^2, so each halfspace {E (X - t)^2 >= c}
    contains the feasible set and its reverse projection is a lower bound.
    A centre equal to the mean of its own solution gives a KKT point of the
    full (convex) problem, hence the optimum; such a centre is found by
    bisection on the sign of mean(solution) - t, which is positive at the
    smallest letter and negative at the largest.  Where the sign jumps (the
    farthest letter switches ends) the top mass can be split between both ends,
    which is again a KKT point.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    B = P.shape[0]
    out = np.zeros(B)
    mu = P @ a
    var = P @ (a * a) - mu * mu
    t_best = mu.copy()
    active = var < c
    if not np.any(active):
        return out, t_best
    if c >= (a[-1] - a[0]) ** 2 / 4:
        raise InfeasibleError(f"variance {c!r} is not below the supremum")
    Pa = P[active]
    lo = np.full(Pa.shape[0], float(a[0]))
    hi = np.full(Pa.shape[0], float(a[-1]))
    tol = rel_tol * float(a[-1] - a[0])
    while np.any(hi - lo > tol):
        t = 0.5 * (lo + hi)
        V = (a[None, :] - t[:, None]) ** 2
        _, lam, top = _reverse_linear_rows(Pa, V, c)
        right = _solution_rows(Pa, V, c, lam, top) @ a > t
        lo = np.where(right, t, lo)
        hi = np.where(right, hi, t)
    t = 0.5 * (lo + hi)
    out[active] = _reverse_linear_rows(Pa, (a[None, :] - t[:, None]) ** 2, c)[0]
    t_best[active] = t
    return out, t_best


def reverse_project(f_hat: Pmf, q: QFunction, c: float) -> ProjectionResult:
    """Reverse KL projection of f_hat onto {q >= c}, c in centered units.

    The result's ``kl_value`` is I(f_hat || f1*).
    """
    if f_hat.alphabet != q.alphabet:
        raise ValueError("f_hat and q use different alphabets")
    p = f_hat.probs
    if q.centered(p) >= c:
        return ProjectionResult(f_hat, 0.0, {}, active=False)
    if q.linear:
        f1, value, lam = _reverse_linear_point(p, q.values, c + q.offset)
        return ProjectionResult(Pmf(f1, f_hat.alphabet), value, {"lambda": lam}, active=True)
    a = f_hat.alphabet.letters
    values, t = _variance_reverse_batch(p[None, :], a, c + q.offset)
    f1, value, lam = _reverse_linear_point(p, (a - t[0]) ** 2, c + q.offset)
    return ProjectionResult(Pmf(f1, f_hat.alphabet), float(values[0]),
                            {"t": float(t[0]), "lambda": lam}, active=True)


def reverse_kl_batch(P: np.ndarray, q: QFunction, c: float) -> np.ndarray:
    """Vectorized ``reverse_project(...).kl_value`` over rows of P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if q.linear:
        return _reverse_linear_batch(P, q.values, c + q.offset)[0]
    return _variance_reverse_batch(P, q.alphabet.letters, c + q.offset)[0]


# ---------------------------------------------------------------------------
# brute-force oracle


def simplex_lattice(m: int, K: int) -> np.ndarray:
    """All non-negative integer vectors of length m summing to K."""
    rows = []
    for cut in itertools.combinations(range(K + m - 1), m - 1):
        bounds = (-1,) + cut + (K + m - 1,)
        rows.append([bounds[i + 1] - bounds[i] - 1 for i in range(m)])
    return np.array(rows, dtype=np.int64).reshape(-1, m)


def _lattice(m: int, K: int) -> np.ndarray:
    if m == 2:
        k = np.arange(K + 1)
        return np.stack([k, K - k], axis=1)
    if m == 3:
        i, j = np.triu_indices(K + 1)
        # i <= j: parts i, j - i, K - j
        return np.stack([i, j - i, K - j], axis=1)
    return simplex_lattice(m, K)


def grid_oracle_project(p: Pmf, q: QFunction, c: float, step: float,
                        direction: str = "forward") -> ProjectionResult:
    """Exhaustive search over the simplex lattice with resolution ``step``."""
    m = p.alphabet.m
    if m > 4:
        raise ValueError("the grid oracle only supports m <= 4")
    if not 1e-3 <= step <= 0.1:
        raise ValueError("step must lie in [1e-3, 0.1]")
    K = int(round(1.0 / step))
    if math.comb(K + m - 1, m - 1) > GRID_MAX_POINTS:
        raise ValueError("lattice too large")
    F = _lattice(m, K) / K
    feasible = q.centered(F) >= c - 1e-12
    if not np.any(feasible):
        raise InfeasibleError("no lattice point satisfies the constraint")
    F = F[feasible]
    if direction == "forward":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(F > 0, F * (np.log(F) - np.log(p.probs)), 0.0)
        kl = terms.sum(axis=1)
    elif direction == "reverse":
        s = p.probs > 0
        with np.errstate(divide="ignore"):
            kl = np.sum(p.probs[s] * (np.log(p.probs[s]) - np.log(F[:, s])), axis=1)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    best = int(np.argmin(kl))
    f = F[best]
    return ProjectionResult(Pmf(f / f.sum(), p.alphabet), float(max(kl[best], 0.0)),
                            {"step": step}, active=bool(q.centered(p.probs) < c))


class ProjectionCache:
    """Memo of f*_n = argmin_{q >= c_s / n} I(f||f0), keyed by window size n.

    Read-mostly and safe to share between detectors running in different
    threads: inserts are insert-if-absent under a lock, values are immutable.
    ``get`` returns None when the constraint is infeasible for that n.
    """

    def __init__(self, f0: Pmf, q: QFunction, c_s: float):
        self.f0, self.q, self.c_s = f0, q, c_s
        self._table: dict[int, tuple[ProjectionResult | None, np.ndarray | None]] = {}
        self._lock = threading.Lock()

    def _compute(self, n: int):
        try:
            res = i_project(self.f0, self.q, self.c_s / n)
        except InfeasibleError:
            return None, None
        with np.errstate(divide="ignore"):
            logp = np.log(res.f_star.probs)
        return res, logp

    def entry(self, n: int):
        hit = self._table.get(n)
        if hit is not None:
            return hit
        value = self._compute(n)
        with self._lock:
            return self._table.setdefault(n, value)

    def get(self, n: int) -> ProjectionResult | None:
        return self.entry(n)[0]

    def log_probs(self, n: int) -> np.ndarray | None:
        return self.entry(n)[1]

    def __len__(self) -> int:
        return len(self._table)
