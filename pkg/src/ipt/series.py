"""Time-series ingestion, quantization and the rolling outlier-versus-change analysis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detectors import FixedIptConfig, fixed_ipt_statistics, window_counts
from .projection import i_project
from .simplex import Alphabet, Pmf, QFunction, sample_indices


class DataError(ValueError):
    """Input data that cannot be used (missing file or column, bad cells, short series)."""


ABOVE, BELOW = "above", "below"
LONG_TERM, EXPLICIT = "long-term-empirical", "explicit"


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class SeriesSpec:
    """Where a series lives: CSV path, value column (name or 0-based index), optional timestamp column."""

    path: str
    column: str | int = 0
    timestamp: str | int | None = None
    missing: str = "drop"

    def __post_init__(self):
        if self.missing not in ("drop", "error"):
            raise ValueError("missing-value policy must be 'drop' or 'error'")


@dataclass(frozen=True)
class Series:
    values: np.ndarray
    timestamps: list | None
    rows: int
    dropped: int


def _column_index(header: list[str], column: str | int) -> int:
    if isinstance(column, int) or (isinstance(column, str) and column.isdigit() and column not in header):
        i = int(column)
        if not 0 <= i < len(header):
            raise DataError(f"column index {i} out of range (file has {len(header)} columns)")
        return i
    if column not in header:
        raise DataError(f"column {column!r} not found; header is {header}")
    return header.index(column)


def ingest_csv(spec: SeriesSpec) -> Series:
    """Read one numeric column of a headed CSV, in file order.

    A cell is missing when it is blank or not a finite number.  Under the
    ``drop`` policy such rows are skipped and counted; under ``error`` the
    first one raises, naming its line.
    """
    path = Path(spec.path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        col = _column_index(header, spec.column)
        tcol = None if spec.timestamp is None else _column_index(header, spec.timestamp)
        values, stamps, rows, dropped = [], [], 0, 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            rows += 1
            cell = row[col].strip() if col < len(row) else ""
            try:
                x = float(cell)
                ok = math.isfinite(x)
            except ValueError:
                ok = False
            if not ok:
                if spec.missing == "error":
                    raise DataError(f"line {line_no}: column {header[col]!r} has unusable value {cell!r}")
                dropped += 1
                continue
            values.append(x)
            if tcol is not None:
                stamps.append(row[tcol].strip() if tcol < len(row) else "")
    return Series(np.array(values), stamps if tcol is not None else None, rows, dropped)


# ---------------------------------------------------------------------------
# quantization


@dataclass(frozen=True)
class QuantizerSpec:
    """Binning rule.

    mode ``uniform``: m equal bins over [lo, hi]; ``explicit``: the given
    edges; ``quantile``: m bins at the series' empirical quantiles.  Letters
    default to bin midpoints.  Values outside the outer edges go to the
    nearest end bin and are counted as clamped.
    """

    mode: str
    m: int | None = None
    lo: float | None = None
    hi: float | None = None
    edges: tuple | None = None
    letters: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("uniform", "explicit", "quantile"):
            raise ValueError(f"unknown quantizer mode {self.mode!r}")
        if self.mode == "uniform" and (self.m is None or self.lo is None or self.hi is None or not self.hi > self.lo):
            raise ValueError("uniform bins need m and lo < hi")
        if self.mode == "explicit":
            if self.edges is None or len(self.edges) < 3:
                raise ValueError("explicit bins need at least three edges")
            if np.any(np.diff(self.edges) <= 0):
                raise ValueError("bin edges must be strictly increasing")
        if self.mode == "quantile" and (self.m is None or self.m < 2):
            raise ValueError("quantile bins need m >= 2")
        if self.mode == "uniform" and self.m < 2:
            raise ValueError("need at least two bins")

    def bin_edges(self, series: np.ndarray) -> np.ndarray:
        if self.mode == "uniform":
            return np.linspace(self.lo, self.hi, self.m + 1)
        if self.mode == "explicit":
            return np.asarray(self.edges, dtype=float)
        if np.unique(series).size < self.m:
            raise DataError(f"quantile bins need at least {self.m} distinct values")
        edges = np.quantile(series, np.linspace(0, 1, self.m + 1))
        if np.any(np.diff(edges) <= 0):
            raise DataError("repeated values make quantile edges coincide; use fewer bins")
        return edges

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerSpec":
        d = dict(d)
        for key in ("edges", "letters"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Quantized:
    symbols: np.ndarray
    indices: np.ndarray
    alphabet: Alphabet
    clamped: int
    edges: np.ndarray


def quantize(series, spec: QuantizerSpec) -> Quantized:
    """Map each value to its bin's letter; bins are [e_i, e_i+1) with the top bin closed."""
    x = np.asarray(series, dtype=float)
    edges = spec.bin_edges(x)
    m = edges.size - 1
    letters = np.asarray(spec.letters, dtype=float) if spec.letters is not None else (edges[1:] + edges[:-1]) / 2
    if letters.size != m:
        raise ValueError(f"{m} bins but {letters.size} letters")
    idx = np.searchsorted(edges[1:-1], x, side="right")
    clamped = int(np.sum((x < edges[0]) | (x > edges[-1])))
    alphabet = Alphabet(letters)
    return Quantized(letters[idx], idx.astype(np.int64), alphabet, clamped, edges)


# ---------------------------------------------------------------------------
# rolling outlier-versus-change analysis


@dataclass(frozen=True)
class RllfRow:
    """One rolling window.  ``rllf`` is None unless the window crossed c_s."""

    t: int
    moving_avg: float
    s_crossed: bool
    rllf: float | None
    change: bool
    timestamp: str | None = None


def long_term_pmf(indices: np.ndarray, alphabet: Alphabet) -> Pmf:
    """Empirical pmf of the whole series with empty letters raised to 1/(2T), renormalized."""
    T = len(indices)
    p = np.bincount(indices, minlength=alphabet.m) / T
    p[p == 0] = 1 / (2 * T)
    return Pmf(p / p.sum(), alphabet)


@dataclass(frozen=True)
class _Oriented:
    """The mean statistic in q >= c form: letters negated for the ``below`` direction."""

    q: QFunction
    f0: Pmf
    sign: float
    flip: bool

    def map_indices(self, idx: np.ndarray) -> np.ndarray:
        m = self.q.alphabet.m
        return (m - 1 - idx) if self.flip else idx


def _orient(alphabet: Alphabet, f0: Pmf, direction: str) -> _Oriented:
    if direction == ABOVE:
        return _Oriented(QFunction.mean(alphabet), f0, 1.0, False)
    if direction == BELOW:
        neg = Alphabet(-alphabet.letters[::-1])
        return _Oriented(QFunction.mean(neg), Pmf(f0.probs[::-1], neg), -1.0, True)
    raise ValueError("direction must be 'above' or 'below'")


def _resolve_f0(indices: np.ndarray, alphabet: Alphabet, f0_mode: str, f0: Pmf | None) -> Pmf:
    if f0_mode == LONG_TERM:
        return long_term_pmf(indices, alphabet)
    if f0_mode == EXPLICIT:
        if f0 is None:
            raise ValueError("explicit f0 mode needs f0")
        if f0.alphabet != alphabet:
            raise ValueError("f0 uses a different alphabet")
        return f0
    raise ValueError(f"unknown f0 mode {f0_mode!r}")


def rllf_analysis(symbols, alphabet: Alphabet, n: int, c_s: float, c_d: float,
                  f0_mode: str = LONG_TERM, f0: Pmf | None = None, direction: str = ABOVE,
                  timestamps: list | None = None) -> list[RllfRow]:
    """Rolling-window moving average, threshold crossing and RLLF classification.

    A window crosses when its moving average is at or beyond ``c_s`` in the
    given direction.  Crossing windows get the divergence of their empirical
    pmf from the I-projection of f0 onto the crossed set; they count as a
    change when that divergence reaches ``c_d`` and as an outlier otherwise.
    """
    indices = alphabet.indices(symbols)
    if len(indices) < n:
        raise DataError(f"series of length {len(indices)} is shorter than the window {n}")
    base = _resolve_f0(indices, alphabet, f0_mode, f0)
    o = _orient(alphabet, base, direction)
    config = FixedIptConfig(n, o.sign * c_s, c_d, o.q, o.f0)
    ends, counts = window_counts(o.map_indices(indices), alphabet.m, n)
    s, d = fixed_ipt_statistics(config, counts)
    rows = []
    for k, (t, sv, dv) in enumerate(zip(ends.tolist(), s.tolist(), d.tolist())):
        crossed = sv >= config.c_s
        rows.append(RllfRow(int(t), o.sign * sv, bool(crossed), float(dv) if crossed else None,
                            bool(crossed and dv >= c_d), None if timestamps is None else timestamps[t - 1]))
    return rows


def calibrate_cd(f0: Pmf, n: int, c_s: float, percentile: float = 95.0, resamples: int = 20_000,
                 rng: np.random.Generator | None = None, direction: str = ABOVE) -> float:
    """c_d as a percentile of the RLLF over c_s-crossing windows resampled from f0.

    Windows of n letters are drawn from f0 (a bootstrap of the series when f0
    is its long-term pmf); those that cross keep their divergence from the
    projection.  Raises when too few windows cross to estimate the percentile.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    o = _orient(f0.alphabet, f0, direction)
    config = FixedIptConfig(n, o.sign * c_s, 0.0, o.q, o.f0)
    counts = rng.multinomial(n, o.f0.probs, size=resamples)
    s, d = fixed_ipt_statistics(config, counts)
    crossed = d[s >= config.c_s]
    if crossed.size < 20:
        raise DataError(f"only {crossed.size} of {resamples} resampled windows cross c_s; "
                        "raise resamples or lower c_s")
    return float(np.percentile(crossed, percentile))


def most_likely_outlier(f0: Pmf, c_s: float, direction: str = ABOVE) -> Pmf:
    """I-projection of f0 onto the crossed set, on the original alphabet."""
    o = _orient(f0.alphabet, f0, direction)
    f_star = i_project(o.f0, o.q, o.sign * c_s).f_star.probs
    return Pmf(f_star[::-1] if o.flip else f_star, f0.alphabet)


def rllf_csv_rows(rows: list[RllfRow]) -> list[list[str]]:
    out = [["t", "moving_avg", "s_crossed", "rllf", "change"]]
    for r in rows:
        out.append([str(r.t) if r.timestamp is None else r.timestamp, repr(r.moving_avg), str(int(r.s_crossed)),
                    "" if r.rllf is None else repr(r.rllf), str(int(r.change))])
    return out


def planted_series(f0: Pmf, segments: list[tuple[int, Pmf]], length: int, segment_length: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """f0 letters with each (start, pmf) segment overwritten by ``segment_length`` draws from pmf.

    Returns (letters, [(start, stop)]) with 0-based half-open spans.
    """
    idx = sample_indices(f0.probs, length, rng)
    spans = []
    for start, pmf in segments:
        stop = start + segment_length
        if stop > length:
            raise ValueError("segment runs past the end of the series")
        idx[start:stop] = sample_indices(pmf.probs, segment_length, rng)
        spans.append((start, stop))
    return f0.alphabet.letters[idx], spans


def segment_windows(rows: list[RllfRow], span: tuple[int, int], n: int) -> list[RllfRow]:
    """Rows whose window lies entirely inside the 0-based half-open span."""
    start, stop = span
    return [r for r in rows if r.t - n >= start and r.t <= stop]
