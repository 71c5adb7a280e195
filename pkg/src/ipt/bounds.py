"""Closed-form performance bounds for the two-threshold test.

All inputs use the centered convention q0 < 0 < q_floor.  Raw bound values
may exceed one; ``BoundValue.clamped`` is the probability-scale report.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .simplex import MEAN, Pmf, QFunction


class BoundPreconditionError(ValueError):
    """The bound's hypotheses do not hold for these inputs."""


@dataclass(frozen=True)
class BoundInputs:
    """Thresholds and problem constants, centered so that q0 < 0 < q_floor."""

    n: int
    m: int
    c_s: float
    c_d: float
    q0: float
    q_floor: float
    L: float
    rho: float = 1.0
    n_alpha: int = 0
    gamma: float = math.e

    def __post_init__(self):
        if self.n < 1 or self.m < 2:
            raise ValueError("need n >= 1 and m >= 2")
        if self.L <= 0 or self.c_d < 0:
            raise ValueError("need L > 0 and c_d >= 0")
        if not self.q0 < 0 < self.q_floor:
            raise ValueError("need q0 < 0 < q_floor (centered)")

    @property
    def excess(self) -> float:
        """(c_s - q0)^+"""
        return max(self.c_s - self.q0, 0.0)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundInputs":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundValue:
    name: str
    raw: float
    preconditions_ok: bool = True
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def clamped(self) -> float:
        return min(1.0, self.raw)

    @property
    def vacuous(self) -> bool:
        return not self.raw < 1.0

    def row(self) -> dict:
        return {"bound": self.name, "raw": self.raw, "clamped": self.clamped,
                "preconditions_ok": self.preconditions_ok, "warnings": list(self.warnings)}


def _exp(x: float) -> float:
    return math.exp(x) if x < 709 else math.inf


def fa_bound(b: BoundInputs) -> BoundValue:
    """Single-window false-alarm probability bound."""
    rate = b.c_d + b.excess**2 / (2 * b.L**2)
    return BoundValue("false_alarm", _exp(b.m * math.log(b.n + 1) - b.n * rate))


def _md_gap(b: BoundInputs) -> float:
    return b.q_floor - b.q0 - b.excess - math.sqrt(2 * b.L**2 * b.c_d)


def md_bound(b: BoundInputs) -> BoundValue:
    """Worst-case single-window misdetection bound over the post-change set."""
    if _md_gap(b) <= 0:
        raise BoundPreconditionError(
            "need (c_s - q0)^+ + sqrt(2 L^2 c_d) < q_floor - q0 for the misdetection bound")
    root = (b.q_floor - b.q0 - b.excess) / (math.sqrt(2) * b.L) - math.sqrt(b.c_d)
    return BoundValue("misdetection", _exp(b.m * math.log(b.n + 1) - b.n * root**2))


@dataclass(frozen=True)
class TcdBounds:
    false_alarm: BoundValue
    misdetection: BoundValue
    nu: float
    eta: float
    epochs: int

    @property
    def vacuous(self) -> bool:
        return self.nu <= 0 or self.eta <= 0 or not self.misdetection.preconditions_ok


def tcd_bounds(b: BoundInputs) -> TcdBounds:
    """Transient-detection bounds for windows of (n+1)/2 samples over n_alpha steps.

    nu and eta are always evaluated; when the threshold condition fails the
    misdetection value is flagged rather than raised, so callers can still
    inspect the exponents.
    """
    ok = _md_gap(b) > 0
    penalty = b.m * math.log((b.n + 3) / 2) / (b.n + 1)
    nu = b.c_d / 2 + b.excess**2 / (4 * b.L**2) - penalty
    eta = ((b.q_floor - b.q0 - b.excess) / (2 * b.L) - math.sqrt(b.c_d / 2)) ** 2 - penalty
    epochs = math.ceil(2 * b.n_alpha / (b.n + 1))
    warn = ()
    if nu <= 0:
        fa_raw = 1.0
        warn = ("nu <= 0: false-alarm bound is vacuous",)
    else:
        # 1 - (1 - e^{-nu n})^epochs, computed without cancellation
        fa_raw = -math.expm1(epochs * math.log1p(-math.exp(-nu * b.n))) if epochs else 0.0
    md_warn = ("eta <= 0: misdetection bound is vacuous",) if eta <= 0 else ()
    if not ok:
        md_warn += ("(c_s - q0)^+ + sqrt(2 L^2 c_d) >= q_floor - q0: threshold condition fails",)
    return TcdBounds(
        BoundValue("tcd_false_alarm", fa_raw, True, warn),
        BoundValue("tcd_misdetection", _exp(-eta * b.n) if ok else 1.0, ok, md_warn),
        nu, eta, epochs,
    )


def wald_root(f0: Pmf, q: QFunction, tol: float = 1e-14) -> float:
    """Positive root of sum f0(a) exp(v (a - offset)) = 1."""
    if q.kind != MEAN:
        raise ValueError("the Wald root is defined for the mean statistic")
    y = q.alphabet.letters - q.offset
    p = f0.probs
    support = p > 0
    y, p = y[support], p[support]
    if p @ y >= 0:
        raise ValueError("need a negative centered mean under f0")
    if y.max() <= 0:
        raise ValueError("no letter has a positive centered value; psi never returns to 1")

    def log_psi(v):
        z = v * y
        top = z.max()
        return top + math.log(float(p @ np.exp(z - top)))

    hi = 1.0
    while log_psi(hi) < 0:
        hi *= 2
    # psi is convex with psi(0) = 1 and psi'(0) < 0, so on (0, hi] it dips
    # below 1 and crosses back once; bracket the crossing from the minimum
    lo = _argmin_convex(log_psi, 0.0, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo < tol * hi:
            break
        if log_psi(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _argmin_convex(fn, lo: float, hi: float) -> float:
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    for _ in range(200):
        x1, x2 = b - g * (b - a), a + g * (b - a)
        if fn(x1) < fn(x2):
            b = x2
        else:
            a = x1
        if b - a < 1e-15 * max(1.0, hi):
            break
    return 0.5 * (a + b)


@dataclass(frozen=True)
class ArlBound:
    value: float
    asymptote: float
    warnings: tuple[str, ...]


def arl_bound(b: BoundInputs, v_star: float, kind: str = MEAN) -> ArlBound:
    """Lower bound on the average run length of the quickest detector (mean statistic)."""
    if kind != MEAN:
        raise NotImplementedError("the run-length bound is only available for the mean statistic")
    q0, qf, L, rho, c_s, c_d, m = abs(b.q0), b.q_floor, b.L, b.rho, b.c_s, b.c_d, b.m
    if c_d < 2 * q0 * qf / ((1 + rho) * L**2):
        raise BoundPreconditionError("need c_d >= 2 |q0| q_floor / ((1 + rho) L^2)")
    base = (1 + rho) * c_s / qf + 1
    ratio = base ** (m * qf / ((1 + rho) * c_s)) * math.exp(-c_d)
    if ratio >= 1:
        raise BoundPreconditionError("the geometric tail in the denominator diverges")
    head = 2.0**m * math.exp(-2 * q0 / L**2 * c_s)
    tail = base**m * math.exp(-(1 + rho) * c_d / qf * c_s) / (1 - ratio)
    warnings = ()
    if q0 < (1 + rho) * qf:
        warnings = ("|q0| < (1 + rho) q_floor: outside the regime assumed by the derivation",)
    log_value = v_star * c_s - math.log(head + tail)
    return ArlBound(_exp(log_value), _exp((v_star + 2 * q0 / L**2) * c_s), warnings)


def wadd_bound(c_s: float, q_floor: float) -> float:
    """Asymptotic worst-case average delay bound 2 c_s / q_floor."""
    if c_s < 0 or q_floor <= 0:
        raise ValueError("need c_s >= 0 and q_floor > 0")
    return 2.0 * c_s / q_floor


def lorden_wadd(gamma: float, v_star: float, q_floor: float, q0: float, L: float) -> float:
    """Delay attained at run-length level gamma, from the run-length and delay bounds."""
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    return math.log(gamma) / (q_floor * (v_star / 2 + abs(q0) / L**2))


def bounds_table(b: BoundInputs, v_star: float | None = None) -> list[dict]:
    """Every applicable bound as rows (name, raw, clamped, preconditions flag)."""
    rows = [fa_bound(b).row()]
    for name, fn in (("misdetection", lambda: [md_bound(b)]),
                     ("tcd", lambda: [(t := tcd_bounds(b)).false_alarm, t.misdetection])):
        try:
            rows.extend(v.row() for v in fn())
        except BoundPreconditionError as exc:
            rows.append({"bound": name, "raw": None, "clamped": None,
                         "preconditions_ok": False, "warnings": [str(exc)]})
    if v_star is not None:
        try:
            arl = arl_bound(b, v_star)
            rows.append({"bound": "arl_lower", "raw": arl.value, "clamped": arl.value,
                         "preconditions_ok": True, "warnings": list(arl.warnings)})
            rows.append({"bound": "arl_asymptote", "raw": arl.asymptote, "clamped": arl.asymptote,
                         "preconditions_ok": True, "warnings": []})
        except BoundPreconditionError as exc:
            rows.append({"bound": "arl_lower", "raw": None, "clamped": None,
                         "preconditions_ok": False, "warnings": [str(exc)]})
        if b.gamma > 1:
            rows.append({"bound": "lorden_wadd", "raw": lorden_wadd(b.gamma, v_star, b.q_floor, b.q0, b.L),
                         "clamped": None, "preconditions_ok": True, "warnings": []})
    rows.append({"bound": "wadd", "raw": wadd_bound(max(b.c_s, 0.0), b.q_floor), "clamped": None,
                 "preconditions_ok": True, "warnings": []})
    return rows


def bounds_json(b: BoundInputs, v_star: float | None = None) -> str:
    return json.dumps({"inputs": b.to_dict(), "bounds": bounds_table(b, v_star)})
