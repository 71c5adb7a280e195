"""Finite alphabets, probability mass functions and statistics on the simplex."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

NORMALIZATION_TOL = 1e-12

MEAN = "mean"
VARIANCE = "variance"
LLR = "llr"
Q_KINDS = (MEAN, VARIANCE, LLR)


class AlphabetMismatch(ValueError):
    pass


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class Alphabet:
    """Ordered set of distinct real letters a_1 < ... < a_m, m >= 2."""

    __slots__ = ("letters", "_index")

    def __init__(self, letters: Iterable[float]):
        arr = _frozen(list(letters))
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("an alphabet needs at least two letters")
        if not np.all(np.isfinite(arr)):
            raise ValueError("alphabet letters must be finite")
        if np.any(np.diff(arr) <= 0):
            raise ValueError("alphabet letters must be strictly increasing")
        self.letters = arr
        self._index = {float(a): i for i, a in enumerate(arr)}

    @property
    def m(self) -> int:
        return int(self.letters.size)

    def __len__(self) -> int:
        return self.m

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and np.array_equal(self.letters, other.letters)

    def __hash__(self) -> int:
        return hash(self.letters.tobytes())

    def __repr__(self) -> str:
        return f"Alphabet({self.letters.tolist()})"

    def index_of(self, x: float) -> int:
        try:
            return self._index[float(x)]
        except KeyError:
            raise ValueError(f"{x!r} is not a letter of {self!r}") from None

    def indices(self, samples: Sequence[float]) -> np.ndarray:
        """Map letters to their positions; raises on anything outside the alphabet."""
        xs = np.asarray(samples, dtype=float).ravel()
        idx = np.searchsorted(self.letters, xs)
        idx = np.clip(idx, 0, self.m - 1)
        bad = self.letters[idx] != xs
        if np.any(bad):
            raise ValueError(f"{xs[bad][0]!r} is not a letter of {self!r}")
        return idx

    def to_json(self) -> str:
        return json.dumps(self.letters.tolist())

    @classmethod
    def from_json(cls, text: str) -> "Alphabet":
        return cls(json.loads(text))

    @classmethod
    def integers(cls, lo: int, hi: int) -> "Alphabet":
        return cls(range(lo, hi + 1))


class Pmf:
    """Probability mass function over an :class:`Alphabet`.

    Inputs must already be normalized to within 1e-12; they are never
    renormalized silently.
    """

    __slots__ = ("probs", "alphabet")

    def __init__(self, probs: Iterable[float], alphabet: Alphabet):
        p = np.array(list(probs) if not isinstance(probs, np.ndarray) else probs, dtype=float)
        if p.shape != (alphabet.m,):
            raise ValueError(f"expected {alphabet.m} probabilities, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        self.probs = p
        self.alphabet = alphabet

    @classmethod
    def uniform(cls, alphabet: Alphabet) -> "Pmf":
        return cls(np.full(alphabet.m, 1.0 / alphabet.m), alphabet)

    @classmethod
    def point_mass(cls, alphabet: Alphabet, letter: float) -> "Pmf":
        p = np.zeros(alphabet.m)
        p[alphabet.index_of(letter)] = 1.0
        return cls(p, alphabet)

    @classmethod
    def from_weights(cls, weights: Iterable[float], alphabet: Alphabet) -> "Pmf":
        """Normalize non-negative weights (explicit, unlike the constructor)."""
        w = np.asarray(list(weights), dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with a positive sum")
        return cls(w / w.sum(), alphabet)

    @classmethod
    def discrete_gaussian(cls, alphabet: "Alphabet", variance: float, center: float = 0.0) -> "Pmf":
        """Gaussian weights on the letters, scaled so the pmf has exactly ``variance``.

        Only defined for a center at which the truncated family is symmetric
        enough to reach the target; raises if no scale does.
        """
        a = alphabet.letters

        def make(s):
            z = -((a - center) ** 2) / (2 * s * s)
            return cls.from_weights(np.exp(z - z.max()), alphabet)

        def gap(s):
            return make(s).variance() - variance

        lo, hi = 1e-3 * np.ptp(a), 1e3 * np.ptp(a)
        if gap(lo) > 0 or gap(hi) < 0:
            raise ValueError(f"variance {variance!r} unreachable on this alphabet")
        return make(brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15))

    def __len__(self) -> int:
        return self.alphabet.m

    def __repr__(self) -> str:
        return f"Pmf({np.round(self.probs, 6).tolist()})"

    def mean(self) -> float:
        return float(self.probs @ self.alphabet.letters)

    def variance(self) -> float:
        a = self.alphabet.letters
        mu = self.probs @ a
        return float(self.probs @ (a * a) - mu * mu)

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        """Draw letters (not indices)."""
        return self.alphabet.letters[sample_indices(self.probs, size, rng)]

    def to_lines(self) -> str:
        return "\n".join(repr(float(p)) for p in self.probs) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.probs.tolist())

    @classmethod
    def parse(cls, text: str, alphabet: Alphabet) -> "Pmf":
        """Read a JSON array or one probability per line."""
        text = text.strip()
        if text.startswith("["):
            values = json.loads(text)
        else:
            values = [float(line) for line in text.splitlines() if line.strip()]
        return cls(values, alphabet)


def sample_indices(probs: np.ndarray, size, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling of letter indices; cheaper than ``rng.choice``."""
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, probs.size - 1)


@dataclass(frozen=True)
class EmpiricalPmf:
    counts: np.ndarray
    alphabet: Alphabet

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (self.alphabet.m,) or np.any(c < 0):
            raise ValueError("counts must be m non-negative integers")
        if c.sum() < 1:
            raise ValueError("an empirical pmf needs at least one sample")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def pmf(self) -> Pmf:
        return Pmf(self.counts / self.n, self.alphabet)


def empirical_pmf(samples: Sequence[float], alphabet: Alphabet) -> EmpiricalPmf:
    idx = alphabet.indices(samples)
    if idx.size == 0:
        raise ValueError("need at least one sample")
    return EmpiricalPmf(np.bincount(idx, minlength=alphabet.m), alphabet)


def _check_same(f: Pmf, g: Pmf) -> None:
    if f.alphabet != g.alphabet:
        raise AlphabetMismatch("pmfs are over different alphabets")


def kl_divergence(f: Pmf, g: Pmf) -> float:
    """I(f||g) in nats; ``math.inf`` when f puts mass where g has none."""
    _check_same(f, g)
    return kl_array(f.probs, g.probs)


def kl_array(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    ps = p[support]
    return float(max(0.0, np.sum(ps * (np.log(ps) - np.log(q[support])))))


def kl_rows(P: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise I(P[i] || q) for a stack of pmfs against one reference."""
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * (np.log(P) - np.log(q)), 0.0)
    out = terms.sum(axis=-1)
    return np.maximum(out, 0.0)


def l1_distance(f: Pmf, g: Pmf) -> float:
    _check_same(f, g)
    return float(np.abs(f.probs - g.probs).sum())


@dataclass(frozen=True)
class QFunction:
    """Quasiconcave statistic over the simplex, evaluated *centered*.

    ``q(f) = raw(f) - offset`` where ``raw`` is the mean, the variance or the
    expected log-likelihood ratio ``sum f log(f1/f0)``.  The offset lets raw,
    user-facing thresholds be stated in the data's own units while the
    detectors work with the sign convention ``q(f0) < 0 < q_floor``.
    ``q_floor`` is stored in raw units.
    """

    kind: str
    alphabet: Alphabet
    offset: float = 0.0
    f0: Pmf | None = None
    f1: Pmf | None = None
    lipschitz_override: float | None = None
    q_floor: float | None = None
    _values: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in Q_KINDS:
            raise ValueError(f"unknown q kind {self.kind!r}")
        a = self.alphabet.letters
        if self.kind == MEAN:
            values = a
        elif self.kind == VARIANCE:
            values = None
        else:
            if self.f0 is None or self.f1 is None:
                raise ValueError("the LLR statistic needs both f0 and f1")
            if np.any(self.f0.probs <= 0) or np.any(self.f1.probs <= 0):
                raise ValueError("the LLR statistic needs strictly positive f0 and f1")
            values = np.log(self.f1.probs) - np.log(self.f0.probs)
        if values is not None:
            values = _frozen(values)
        object.__setattr__(self, "_values", values)

    @classmethod
    def mean(cls, alphabet: Alphabet, offset: float = 0.0, **kw) -> "QFunction":
        return cls(MEAN, alphabet, offset=offset, **kw)

    @classmethod
    def variance(cls, alphabet: Alphabet, offset: float = 0.0, **kw) -> "QFunction":
        return cls(VARIANCE, alphabet, offset=offset, **kw)

    @classmethod
    def llr(cls, f0: Pmf, f1: Pmf, **kw) -> "QFunction":
        return cls(LLR, f0.alphabet, f0=f0, f1=f1, **kw)

    @property
    def linear(self) -> bool:
        return self._values is not None

    @property
    def values(self) -> np.ndarray:
        """Per-letter values v with raw q(f) = sum f*v (linear kinds only)."""
        if self._values is None:
            raise TypeError(f"q kind {self.kind!r} is not linear in f")
        return self._values

    def __call__(self, f: Pmf) -> float:
        return q_eval(self, f)

    def raw(self, probs: np.ndarray) -> np.ndarray | float:
        """Uncentered statistic for one pmf or a stack of them (last axis)."""
        p = np.asarray(probs, dtype=float)
        if self._values is not None:
            return p @ self._values
        a = self.alphabet.letters
        mu = p @ a
        return p @ (a * a) - mu * mu

    def centered(self, probs: np.ndarray) -> np.ndarray | float:
        return self.raw(probs) - self.offset

    def center(self, raw_value: float) -> float:
        return raw_value - self.offset

    @property
    def q0(self) -> float:
        if self.f0 is None:
            raise ValueError("q0 needs f0")
        return float(self.centered(self.f0.probs))

    @property
    def floor(self) -> float:
        """q_floor in centered units."""
        if self.q_floor is None:
            raise ValueError("no q_floor configured")
        return self.q_floor - self.offset

    @property
    def q1(self) -> float:
        if self.f1 is None:
            raise ValueError("q1 needs a representative f1")
        return float(self.centered(self.f1.probs))

    def sup(self) -> float:
        """Supremum of the centered statistic over the simplex."""
        a = self.alphabet.letters
        if self._values is not None:
            return float(self._values.max() - self.offset)
        return float((a[-1] - a[0]) ** 2 / 4 - self.offset)

    @property
    def lipschitz(self) -> float:
        if self.lipschitz_override is not None:
            return float(self.lipschitz_override)
        return lipschitz_constant(self, self.alphabet)

    def with_offset(self, offset: float) -> "QFunction":
        return QFunction(self.kind, self.alphabet, offset, self.f0, self.f1,
                         self.lipschitz_override, self.q_floor)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "offset": self.offset}
        if self.q_floor is not None:
            d["q_floor"] = self.q_floor
        if self.lipschitz_override is not None:
            d["lipschitz"] = self.lipschitz_override
        if self.kind == LLR:
            d["f1"] = self.f1.probs.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, alphabet: Alphabet, f0: Pmf | None = None) -> "QFunction":
        kind = d.get("kind", MEAN)
        f1 = Pmf(d["f1"], alphabet) if "f1" in d else None
        return cls(kind, alphabet, offset=float(d.get("offset", 0.0)), f0=f0, f1=f1,
                   lipschitz_override=d.get("lipschitz"), q_floor=d.get("q_floor"))


def q_eval(q: QFunction, f: Pmf) -> float:
    if f.alphabet != q.alphabet:
        raise AlphabetMismatch("pmf and statistic use different alphabets")
    return float(q.centered(f.probs))


def lipschitz_constant(q: QFunction, alphabet: Alphabet) -> float:
    """l1-Lipschitz constant of q on the simplex.

    Perturbations inside the simplex sum to zero, so a gradient v contributes
    at most ``(max v - min v) / 2`` per unit of l1 distance.  The variance
    gradient is ``a^2 - 2 mu a``; its span is convex in mu, so the supremum
    over the simplex sits at mu = a_1 or mu = a_m.
    """
    if q.lipschitz_override is not None:
        return float(q.lipschitz_override)
    a = alphabet.letters
    if q.kind == VARIANCE:
        spans = [np.ptp(a * a - 2 * mu * a) for mu in (a[0], a[-1])]
        return float(max(spans) / 2)
    v = q.values
    return float((v.max() - v.min()) / 2)
