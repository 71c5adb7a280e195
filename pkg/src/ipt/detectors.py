"""Fixed-window IPT, quickest-change IPT with restart, and the FMA / GLRT baselines.

Streams are sequences of alphabet letters.  Every detector reports the same
``AlarmReport`` so stopping times can be compared directly.  Window-based
detectors are evaluated in bulk over all windows of a stream; the streaming
variants (``SlidingIpt``, ``QuickestIpt``) keep O(1) state per step for the
linear statistics.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .projection import ProjectionCache, i_project, reverse_kl_batch
from .simplex import Pmf, QFunction, kl_rows

CONTINUE = "continue"
RESTART = "restart"
ALARM = "alarm"


@dataclass(frozen=True)
class TraceRow:
    k: int
    s: float
    d: float | None
    n_k: int


@dataclass
class AlarmReport:
    """Outcome of running one detector over one stream.

    ``restarts`` holds restart times tau = k + 1 of the quickest detector;
    ``suppressed`` holds the indices k at which the statistic crossed its
    first threshold but the divergence test declared an outlier.
    """

    alarm_time: int | None = None
    restarts: list[int] = field(default_factory=list)
    suppressed: list[int] = field(default_factory=list)
    trace: list[TraceRow] | None = None

    @property
    def decision(self) -> str:
        return "change" if self.alarm_time is not None else "no-alarm"

    def to_dict(self, include_trace: bool = False) -> dict:
        d = {
            "alarm_time": self.alarm_time,
            "decision": self.decision,
            "restarts": list(self.restarts),
            "suppressed": list(self.suppressed),
        }
        if include_trace and self.trace is not None:
            d["trace"] = [[r.k, r.s, r.d, r.n_k] for r in self.trace]
        return d

    def to_json(self, include_trace: bool = False) -> str:
        return json.dumps(self.to_dict(include_trace), allow_nan=True)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "S", "D", "n_k"])
        for r in self.trace or []:
            writer.writerow([r.k, repr(r.s), "" if r.d is None else repr(r.d), r.n_k])
        return buf.getvalue()


def _as_indices(stream, q: QFunction) -> np.ndarray:
    return q.alphabet.indices(np.asarray(stream, dtype=float))


def window_counts(idx: np.ndarray, m: int, n: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Letter counts of every length-n window; returns (ends, counts).

    ``ends`` are 1-based indices of the last sample in each window, starting
    at n and advancing by ``stride``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    T = idx.shape[-1]
    if T < n:
        return np.zeros(0, dtype=np.int64), np.zeros((0, m), dtype=np.int64)
    onehot = np.zeros((T + 1, m), dtype=np.int64)
    onehot[np.arange(1, T + 1), idx] = 1
    cum = np.cumsum(onehot, axis=0)
    ends = np.arange(n, T + 1, stride)
    return ends, cum[ends] - cum[ends - n]


def window_statistic(counts: np.ndarray, q: QFunction) -> np.ndarray:
    """Raw q of the empirical pmf of each count row.

    Linear statistics are formed as (counts . values) / n so that integer
    and dyadic data stay exact.
    """
    counts = np.asarray(counts)
    n = counts.sum(axis=-1)
    if q.linear:
        return (counts @ q.values) / n
    a = q.alphabet.letters
    s1 = counts @ a
    s2 = counts @ (a * a)
    return s2 / n - (s1 / n) ** 2


# ---------------------------------------------------------------------------
# fixed-window IPT


@dataclass(frozen=True)
class FixedIptConfig:
    """Two-threshold window test.

    ``c_s`` is in raw q units (before the statistic's offset), ``c_d`` in nats.
    """

    n: int
    c_s: float
    c_d: float
    q: QFunction
    f0: Pmf
    stride: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("window size must be >= 1")
        if not 1 <= self.stride <= self.n:
            raise ValueError("stride must lie in [1, n]")
        if self.c_d < 0:
            raise ValueError("c_d must be non-negative")
        if self.q.center(self.c_s) >= self.q.sup():
            raise ValueError("c_s must lie below the supremum of q")

    @staticmethod
    def epoch_stride(n: int) -> int:
        """Non-overlapping decision epochs used for transient detection."""
        return math.ceil((n + 1) / 2)

    def projection(self):
        return i_project(self.f0, self.q, self.q.center(self.c_s))


def fixed_ipt_statistics(config: FixedIptConfig, counts: np.ndarray,
                         f_star: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(S, D) for each count row; D is NaN where S is below c_s."""
    if f_star is None:
        f_star = config.projection().f_star.probs
    s = window_statistic(counts, config.q)
    crossed = s >= config.c_s
    d = np.full(s.shape, np.nan)
    if np.any(crossed):
        d[crossed] = kl_rows(counts[crossed] / config.n, f_star)
    return s, d


def fixed_ipt_run(config: FixedIptConfig, stream, trace: bool = True) -> AlarmReport:
    idx = _as_indices(stream, config.q)
    ends, counts = window_counts(idx, config.q.alphabet.m, config.n, config.stride)
    report = AlarmReport(trace=[] if trace else None)
    if len(ends) == 0:
        return report
    s, d = fixed_ipt_statistics(config, counts)
    crossed = s >= config.c_s
    alarms = crossed & (d >= config.c_d)
    stop = int(np.argmax(alarms)) if np.any(alarms) else len(ends) - 1
    if np.any(alarms):
        report.alarm_time = int(ends[stop])
    report.suppressed = [int(k) for k in ends[: stop + 1][crossed[: stop + 1] & ~alarms[: stop + 1]]]
    if trace:
        report.trace = [
            TraceRow(int(ends[j]), float(s[j]), None if np.isnan(d[j]) else float(d[j]), config.n)
            for j in range(stop + 1)
        ]
    return report


class SlidingIpt:
    """Rolling fixed-window IPT with O(1) work per sample.

    Keeps letter counts, sum c log c and sum c log f* incrementally, so the
    divergence to f* is (sum c log c - n log n - sum c log f*) / n.  The
    running sums are rebuilt from the counts every n steps to stop rounding
    drift.
    """

    def __init__(self, config: FixedIptConfig):
        if config.stride != 1:
            raise ValueError("the sliding detector is rolling (stride 1)")
        self.config = config
        n, q = config.n, config.q
        self._f_star = config.projection().f_star.probs
        with np.errstate(divide="ignore"):
            log_star = np.log(self._f_star)
        self._log_star = log_star.tolist()
        self._dead = (self._f_star <= 0).tolist()
        self._xlogx = [0.0] + [c * math.log(c) for c in range(1, n + 1)]
        self._nlogn = n * math.log(n)
        if q.linear:
            self._v = q.values.tolist()
            self._v2 = None
        else:
            a = q.alphabet.letters
            self._v = a.tolist()
            self._v2 = (a * a).tolist()
        self.reset()

    def reset(self):
        m = self.config.q.alphabet.m
        self._buf = [0] * self.config.n
        self._counts = [0] * m
        self._filled = 0
        self._pos = 0
        self._clogc = 0.0
        self._cross = 0.0
        self._bad = 0
        self._s1 = 0.0
        self._s2 = 0.0
        self._since_sync = 0
        self.k = 0

    def _resync(self):
        self._clogc = math.fsum(self._xlogx[c] for c in self._counts)
        self._bad = int(sum(cnt for cnt, dead in zip(self._counts, self._dead) if dead))
        self._cross = math.fsum(cnt * lg for cnt, lg, dead in zip(self._counts, self._log_star, self._dead)
                                if cnt and not dead)
        self._s1 = math.fsum(cnt * v for cnt, v in zip(self._counts, self._v))
        if self._v2 is not None:
            self._s2 = math.fsum(cnt * v for cnt, v in zip(self._counts, self._v2))
        self._since_sync = 0

    def _add(self, j: int, sign: int):
        c = self._counts[j]
        new = c + sign
        self._clogc += self._xlogx[new] - self._xlogx[c]
        self._counts[j] = new
        if self._dead[j]:
            self._bad += sign
        else:
            self._cross += sign * self._log_star[j]
        self._s1 += sign * self._v[j]
        if self._v2 is not None:
            self._s2 += sign * self._v2[j]

    def update(self, j: int) -> tuple[float | None, float | None, bool]:
        """Feed one letter index; returns (S, D, alarm) once the window is full."""
        n = self.config.n
        self.k += 1
        if self._filled == n:
            self._add(self._buf[self._pos], -1)
        else:
            self._filled += 1
        self._buf[self._pos] = j
        self._pos = (self._pos + 1) % n
        self._add(j, +1)
        self._since_sync += 1
        if self._since_sync >= n:
            self._resync()
        if self._filled < n:
            return None, None, False
        if self._v2 is None:
            s = self._s1 / n
        else:
            s = self._s2 / n - (self._s1 / n) ** 2
        if s < self.config.c_s:
            return s, None, False
        if self._bad:
            d = math.inf
        else:
            d = max(0.0, (self._clogc - self._nlogn - self._cross) / n)
        return s, d, d >= self.config.c_d

    def run(self, stream) -> AlarmReport:
        self.reset()
        report = AlarmReport(trace=[])
        for j in _as_indices(stream, self.config.q).tolist():
            s, d, alarm = self.update(j)
            if s is None:
                continue
            report.trace.append(TraceRow(self.k, s, d, self.config.n))
            if alarm:
                report.alarm_time = self.k
                break
            if d is not None:
                report.suppressed.append(self.k)
        return report


# ---------------------------------------------------------------------------
# quickest-change IPT


@dataclass(frozen=True)
class QuickestIptConfig:
    """CUSUM-with-restart plus divergence check.

    ``c_s`` applies to the cumulative centered statistic S_k (q units times
    samples), ``c_d`` is the plateau of the divergence threshold schedule.
    ``q.q_floor`` (raw units) must be set.
    """

    c_s: float
    c_d: float
    rho: float
    q: QFunction
    f0: Pmf
    max_lookback: int | None = None

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.c_d < 0:
            raise ValueError("c_d must be non-negative")
        if self.q.q_floor is None or self.q.floor <= 0:
            raise ValueError("q needs a positive centered q_floor")
        if self.max_lookback is not None and self.max_lookback < 1:
            raise ValueError("max_lookback must be >= 1")
        if math.ceil(self.schedule_boundary) < 1:
            raise ValueError("schedule boundary must be >= 1")

    @property
    def schedule_boundary(self) -> float:
        return (1 + self.rho) * self.c_s / self.q.floor


def cd_schedule(n: int, config: QuickestIptConfig) -> float:
    """Divergence threshold for an effective window of n samples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 0.0 if n <= config.schedule_boundary else config.c_d


@dataclass
class DetectorState:
    k: int = 0
    tau: int = 1
    s_stat: float = 0.0
    d_stat: float | None = None
    i_k: int = 1
    counts: np.ndarray | None = None
    history: list[int] = field(default_factory=list)
    last: TraceRow | None = None

    @property
    def n_k(self) -> int:
        return self.k - self.i_k + 1

    @classmethod
    def fresh(cls, m: int) -> "DetectorState":
        return cls(counts=np.zeros(m, dtype=np.int64))

    def restart(self):
        self.tau = self.k + 1
        self.i_k = self.k + 1
        self.s_stat = 0.0
        self.d_stat = None
        self.counts[:] = 0
        self.history.clear()


def _update_linear(state: DetectorState, j: int, config: QuickestIptConfig):
    y = float(config.q.values[j]) - config.q.offset
    total = state.s_stat + y
    if total >= 0:
        state.s_stat = total
        state.counts[j] += 1
    else:
        state.s_stat = 0.0
        state.i_k = state.k + 1
        state.counts[:] = 0


def _update_scan(state: DetectorState, j: int, config: QuickestIptConfig):
    """Backward scan over windows since tau (optionally capped)."""
    state.history.append(j)
    if config.max_lookback is not None and len(state.history) > config.max_lookback:
        del state.history[0]
    a = config.q.alphabet.letters
    x = a[np.asarray(state.history[::-1], dtype=np.int64)]
    sizes = np.arange(1, len(x) + 1)
    s1 = np.cumsum(x)
    s2 = np.cumsum(x * x)
    values = s2 - s1 * s1 / sizes - config.q.offset * sizes
    best = int(np.flatnonzero(values == values.max())[-1]) if len(values) else -1
    if best < 0 or values[best] < 0:
        state.s_stat = 0.0
        state.i_k = state.k + 1
        state.counts[:] = 0
        return
    state.s_stat = float(values[best])
    state.i_k = state.k - best
    window = state.history[len(state.history) - best - 1:]
    state.counts[:] = np.bincount(window, minlength=len(a))


def quickest_ipt_step(state: DetectorState, x: float, config: QuickestIptConfig,
                      cache: ProjectionCache | None = None, index: bool = False) -> tuple[DetectorState, str]:
    """Advance the detector by one sample; the state is updated in place.

    ``x`` is a letter, or a letter index when ``index`` is true.
    """
    j = int(x) if index else config.q.alphabet.index_of(x)
    state.k += 1
    if config.q.linear:
        _update_linear(state, j, config)
    else:
        _update_scan(state, j, config)
    state.d_stat = None
    if state.s_stat < config.c_s:
        state.last = TraceRow(state.k, state.s_stat, None, state.n_k)
        return state, CONTINUE
    if cache is None:
        cache = ProjectionCache(config.f0, config.q, config.c_s)
    n = state.n_k
    logp = cache.log_probs(n)
    if logp is None:
        state.d_stat = math.inf
    else:
        c = state.counts
        live = c > 0
        if np.any(np.isneginf(logp[live])):
            state.d_stat = math.inf
        else:
            p = c[live] / n
            state.d_stat = float(max(0.0, np.sum(p * (np.log(p) - logp[live]))))
    state.last = TraceRow(state.k, state.s_stat, state.d_stat, n)
    if state.d_stat >= cd_schedule(n, config):
        return state, ALARM
    state.restart()
    return state, RESTART


class QuickestIpt:
    """Stateful quickest-change detector with a shared projection cache."""

    def __init__(self, config: QuickestIptConfig, cache: ProjectionCache | None = None):
        self.config = config
        self.cache = cache or ProjectionCache(config.f0, config.q, config.c_s)
        self.state = DetectorState.fresh(config.q.alphabet.m)

    def reset(self):
        self.state = DetectorState.fresh(self.config.q.alphabet.m)

    def step(self, j: int) -> str:
        return quickest_ipt_step(self.state, j, self.config, self.cache, index=True)[1]

    def run_indices(self, idx, trace: bool = False) -> AlarmReport:
        report = AlarmReport(trace=[] if trace else None)
        st = self.state
        for j in np.asarray(idx).tolist():
            decision = self.step(j)
            if trace:
                report.trace.append(st.last)
            if decision == ALARM:
                report.alarm_time = st.k
                break
            if decision == RESTART:
                report.restarts.append(st.tau)
                report.suppressed.append(st.k)
        return report

    def run(self, stream, trace: bool = False) -> AlarmReport:
        return self.run_indices(_as_indices(stream, self.config.q), trace)


def quickest_ipt_run(config: QuickestIptConfig, stream, trace: bool = False,
                     cache: ProjectionCache | None = None) -> AlarmReport:
    return QuickestIpt(config, cache).run(stream, trace)


def quickest_alarm_time(config: QuickestIptConfig, idx: np.ndarray, cache: ProjectionCache) -> int | None:
    """Fast stopping time for linear statistics (no trace, no report).

    Same recursion and decisions as ``quickest_ipt_step``, with the per-step
    work kept in plain Python floats.
    """
    if not config.q.linear:
        rep = QuickestIpt(config, cache).run_indices(idx)
        return rep.alarm_time
    y = (config.q.values - config.q.offset).tolist()
    m = config.q.alphabet.m
    c_s, c_d, boundary = config.c_s, config.c_d, config.schedule_boundary
    s = 0.0
    n = 0
    counts = [0] * m
    for k, j in enumerate(np.asarray(idx).tolist(), start=1):
        t = s + y[j]
        if t >= 0:
            s = t
            n += 1
            counts[j] += 1
        else:
            s = 0.0
            if n:
                n = 0
                counts = [0] * m
        if s < c_s:
            continue
        if n <= boundary:
            return k
        logp = cache.log_probs(n)
        if logp is None:
            return k
        d = 0.0
        for cnt, lg in zip(counts, logp):
            if cnt:
                if lg == -math.inf:
                    d = math.inf
                    break
                d += cnt * (math.log(cnt / n) - lg)
        if d / n >= c_d:
            return k
        s = 0.0
        n = 0
        counts = [0] * m
    return None


# ---------------------------------------------------------------------------
# baselines


def fma_run(window: int, threshold: float, q: QFunction, stream, trace: bool = False) -> AlarmReport:
    """Finite moving average: alarm when raw q of the last ``window`` samples reaches ``threshold``."""
    idx = _as_indices(stream, q)
    ends, counts = window_counts(idx, q.alphabet.m, window)
    report = AlarmReport(trace=[] if trace else None)
    if len(ends) == 0:
        return report
    s = window_statistic(counts, q)
    hits = np.flatnonzero(s >= threshold)
    stop = int(hits[0]) if len(hits) else len(ends) - 1
    if len(hits):
        report.alarm_time = int(ends[stop])
    if trace:
        report.trace = [TraceRow(int(ends[j]), float(s[j]), None, window) for j in range(stop + 1)]
    return report


class SlidingFma:
    """Rolling moving-average detector with O(1) work per sample (linear statistics)."""

    def __init__(self, window: int, threshold: float, q: QFunction):
        if not q.linear:
            raise ValueError("the sliding moving average needs a linear statistic")
        self.window, self.threshold = window, threshold
        self._v = q.values.tolist()
        self.reset()

    def reset(self):
        self._buf = [0] * self.window
        self._pos = 0
        self._filled = 0
        self._sum = 0.0
        self.k = 0

    def update(self, j: int) -> tuple[float | None, bool]:
        self.k += 1
        if self._filled == self.window:
            self._sum -= self._v[self._buf[self._pos]]
        else:
            self._filled += 1
        self._buf[self._pos] = j
        self._pos = (self._pos + 1) % self.window
        self._sum += self._v[j]
        if self._filled < self.window:
            return None, False
        s = self._sum / self.window
        return s, s >= self.threshold


def glrt_statistic(counts: np.ndarray, q: QFunction, q_floor: float, f0: Pmf) -> np.ndarray:
    """n [I(fhat||f0) - min_{q(f1) >= q_floor} I(fhat||f1)] for each count row.

    Identical count rows share one evaluation.
    """
    counts = np.atleast_2d(np.asarray(counts))
    uniq, inv = np.unique(counts, axis=0, return_inverse=True)
    n = uniq.sum(axis=1)
    P = uniq / n[:, None]
    inner = reverse_kl_batch(P, q, q.center(q_floor))
    g = n * (kl_rows(P, f0.probs) - inner)
    return g[np.asarray(inv).reshape(-1)]


def glrt_run(window: int, threshold: float, q: QFunction, q_floor: float, f0: Pmf, stream,
             trace: bool = False) -> AlarmReport:
    """Windowed GLRT against the composite post-change set {raw q >= q_floor}."""
    idx = _as_indices(stream, q)
    ends, counts = window_counts(idx, q.alphabet.m, window)
    report = AlarmReport(trace=[] if trace else None)
    if len(ends) == 0:
        return report
    g = glrt_statistic(counts, q, q_floor, f0)
    hits = np.flatnonzero(g >= threshold)
    stop = int(hits[0]) if len(hits) else len(ends) - 1
    if len(hits):
        report.alarm_time = int(ends[stop])
    if trace:
        report.trace = [TraceRow(int(ends[j]), float(g[j]), None, window) for j in range(stop + 1)]
    return report


def glrt_step_statistic(counts: np.ndarray, q: QFunction, q_floor: float, f0: Pmf) -> float:
    """Single-window GLRT statistic with no sharing (per-step cost reference)."""
    n = counts.sum()
    p = counts / n
    inner = reverse_kl_batch(p[None, :], q, q.center(q_floor))[0]
    return float(n * (kl_rows(p[None, :], f0.probs)[0] - inner))
