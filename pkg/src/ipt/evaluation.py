"""Monte Carlo harnesses for the detection experiments and the per-step timing benchmark.

Every experiment is described by an :class:`ExperimentConfig`.  Random draws
come from ``SeedSequence(seed, spawn_key=(group, ...))`` with a fixed trial
block size, so results depend on the config alone: the worker count only
changes wall time.  All detectors in one experiment read the same sample
paths (paired comparison), which is why detector names never enter a seed.

Fixed-window decisions depend on a window only through its letter counts, so
the window experiments evaluate each detector's statistic once per distinct
count vector in a block and compare against every threshold at once.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .bounds import BoundInputs, BoundPreconditionError, arl_bound, fa_bound, md_bound, wald_root
from .detectors import (
    FixedIptConfig, QuickestIptConfig, SlidingFma, SlidingIpt, glrt_statistic,
    glrt_step_statistic, quickest_alarm_time, window_counts, window_statistic,
)
from .projection import ProjectionCache, i_project, simplex_lattice
from .simplex import Alphabet, Pmf, QFunction, kl_rows, sample_indices

CHT, TCD, QCD, BENCH = "cht", "tcd", "qcd", "bench"
SCENARIOS = (CHT, TCD, QCD, BENCH)
IPT, FMA, GLRT = "ipt", "fma", "glrt"
DETECTORS = (IPT, FMA, GLRT)
SAMPLERS = ("rejection", "boundary")

TRIAL_BLOCK = 1000
CI_LEVEL = 0.99
CENSOR_FLAG = 0.01

# spawn-key groups
_KEY_F1, _KEY_NULL, _KEY_POST, _KEY_ARL, _KEY_DELAY, _KEY_BENCH = range(1, 7)


def z_value(level: float = CI_LEVEL) -> float:
    return float(norm.ppf(0.5 + level / 2))


def wilson_half_width(successes: int, trials: int, level: float = CI_LEVEL) -> float:
    """Half the width of the Wilson score interval."""
    if trials <= 0:
        return 0.0
    z = z_value(level)
    p = successes / trials
    return float(z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / (1 + z * z / trials))


def wilson_interval(successes: int, trials: int, level: float = CI_LEVEL) -> tuple[float, float]:
    z = z_value(level)
    p = successes / trials
    centre = (p + z * z / (2 * trials)) / (1 + z * z / trials)
    hw = wilson_half_width(successes, trials, level)
    return max(0.0, centre - hw), min(1.0, centre + hw)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _run_tasks(fn, tasks: list, workers: int) -> list:
    """Map ``fn`` over tasks into pre-allocated slots (order-independent reduction)."""
    slots = [None] * len(tasks)
    if workers <= 1 or len(tasks) <= 1:
        for i, t in enumerate(tasks):
            slots[i] = fn(t)
        return slots
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [(i, pool.submit(fn, t)) for i, t in enumerate(tasks)]
        for i, fut in futures:
            slots[i] = fut.result()
    return slots


def _blocks(trials: int) -> list[tuple[int, int]]:
    """(block index, size) pairs covering ``trials``; independent of workers."""
    return [(b, min(TRIAL_BLOCK, trials - b * TRIAL_BLOCK)) for b in range(math.ceil(trials / TRIAL_BLOCK))]


# ---------------------------------------------------------------------------
# configuration


def problem_from_dict(d: dict) -> tuple[Alphabet, Pmf, QFunction]:
    """(alphabet, f0, q) from the ``alphabet``, ``f0`` and ``q`` keys of a JSON config.

    f0 is a probability list, ``{"uniform": true}`` or ``{"discrete_gaussian": variance}``;
    q defaults to the mean statistic.
    """
    if "alphabet" not in d:
        raise ValueError("config needs an 'alphabet'")
    alphabet = Alphabet(d["alphabet"])
    f0_spec = d.get("f0", {"uniform": True})
    if isinstance(f0_spec, dict):
        if "discrete_gaussian" in f0_spec:
            f0 = Pmf.discrete_gaussian(alphabet, float(f0_spec["discrete_gaussian"]))
        elif f0_spec.get("uniform"):
            f0 = Pmf.uniform(alphabet)
        else:
            raise ValueError("f0 must be a list of probabilities, {'uniform': true} "
                             "or {'discrete_gaussian': variance}")
    else:
        f0 = Pmf(f0_spec, alphabet)
    q = QFunction.from_dict(d.get("q", {"kind": "mean"}), alphabet, f0)
    return alphabet, f0, q


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  ``q_floor`` and FMA thresholds are raw q units.

    ``threshold_sweep`` maps a detector name to its sweep: (c_s, c_d) pairs
    for IPT, scalar thresholds for FMA and GLRT.  ``window`` is the rolling
    window of the transient experiment and of the sequential FMA / GLRT
    baselines (0 means ``n``).  ``post_change`` fixes f1 explicitly; otherwise
    ``post_change_samples`` draws are taken with ``f1_sampler``.
    """

    scenario: str
    f0: Pmf
    q: QFunction
    q_floor: float
    threshold_sweep: dict
    n: int = 25
    trials: int = 1000
    post_change_samples: int = 100
    seed: int = 0
    window: int = 0
    n_alpha: int = 0
    stride: int = 1
    rho: float = 1.0
    f1_sampler: str = "rejection"
    post_change: tuple = ()
    change_points: tuple = ()
    prefixes: int = 0
    max_steps: int = 100_000
    bench_sizes: tuple = ()
    bench_steps: int = 20_000
    glrt_steps: int = 200
    bench_repeats: int = 3

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.f1_sampler not in SAMPLERS:
            raise ValueError(f"unknown f1 sampler {self.f1_sampler!r}")
        if self.f0.alphabet != self.q.alphabet:
            raise ValueError("f0 and q use different alphabets")
        sweep = {k: tuple(tuple(map(float, t)) if isinstance(t, (list, tuple)) else float(t) for t in v)
                 for k, v in dict(self.threshold_sweep).items()}
        object.__setattr__(self, "threshold_sweep", sweep)
        if self.scenario == BENCH:
            if not self.bench_sizes:
                raise ValueError("bench needs at least one (m, n) size")
            return
        for det, values in sweep.items():
            if det not in DETECTORS:
                raise ValueError(f"unknown detector {det!r}")
            if not values:
                raise ValueError(f"empty threshold sweep for {det}")
        if not sweep:
            raise ValueError("threshold sweep is empty")
        for f1 in self.post_change:
            if float(self.q.raw(f1.probs)) < self.q_floor:
                raise ValueError("explicit post-change pmfs must satisfy q(f1) >= q_floor")
        if self.scenario == TCD and not 1 <= self.rolling_window < (self.n + 1) / 2:
            raise ValueError("the transient window must satisfy 1 <= w < (n + 1) / 2")

    @property
    def rolling_window(self) -> int:
        return self.window or self.n

    @property
    def q_with_floor(self) -> QFunction:
        return dataclasses.replace(self.q, q_floor=self.q_floor, f0=self.q.f0 or self.f0)

    def to_dict(self) -> dict:
        d = {
            "scenario": self.scenario,
            "alphabet": self.f0.alphabet.letters.tolist(),
            "f0": self.f0.probs.tolist(),
            "q": self.q.to_dict(),
            "q_floor": self.q_floor,
            "threshold_sweep": {k: [list(t) if isinstance(t, tuple) else t for t in v]
                                for k, v in self.threshold_sweep.items()},
        }
        for f in dataclasses.fields(self):
            if f.name in d or f.name in ("f0", "q"):
                continue
            value = getattr(self, f.name)
            if f.name == "post_change":
                value = [p.probs.tolist() for p in value]
            elif isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            d[f.name] = value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        alphabet, f0, q = problem_from_dict(d)
        for key in ("alphabet", "f0", "q"):
            d.pop(key, None)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "post_change" in d:
            d["post_change"] = tuple(Pmf(p, alphabet) for p in d["post_change"])
        for key in ("change_points", "bench_sizes"):
            if key in d:
                d[key] = tuple(tuple(v) if isinstance(v, list) else v for v in d[key])
        return cls(f0=f0, q=q, **d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))


@dataclass(frozen=True)
class CurvePoint:
    """One operating point.  ``ci_half_width`` belongs to y, ``x_ci_half_width`` to x."""

    detector: str
    x: float
    y: float
    ci_half_width: float
    threshold: tuple
    x_ci_half_width: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def c_s(self) -> float:
        return self.threshold[0]

    @property
    def c_d(self) -> float | None:
        return self.threshold[1] if len(self.threshold) > 1 else None

    def to_dict(self) -> dict:
        return {"detector": self.detector, "c_s": self.c_s, "c_d": self.c_d, "x": self.x, "y": self.y,
                "ci": self.ci_half_width, "x_ci": self.x_ci_half_width, **self.extra}


def curve_csv(points: list[CurvePoint]) -> str:
    """CSV with header detector,c_s,c_d,x,y,ci (c_s holds the scalar threshold of FMA / GLRT)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["detector", "c_s", "c_d", "x", "y", "ci"])
    for p in points:
        w.writerow([p.detector, repr(p.c_s), "" if p.c_d is None else repr(p.c_d),
                    repr(p.x), repr(p.y), repr(p.ci_half_width)])
    return buf.getvalue()


def curve_json(points: list[CurvePoint]) -> str:
    return json.dumps([p.to_dict() for p in points], indent=1)


# ---------------------------------------------------------------------------
# post-change sampling


def sample_post_change(f0: Pmf, q: QFunction, q_floor: float, count: int, rng: np.random.Generator,
                       method: str = "rejection", max_draws: int | None = None) -> list[Pmf]:
    """Random f1 with raw q(f1) >= q_floor.

    ``rejection`` keeps uniform (Dirichlet(1, ..., 1)) draws that land in the
    post-change set.  ``boundary`` pulls each accepted draw g back towards f0
    along the segment (1 - s) f0 + s g to the smallest s still in the set, so
    every f1 sits on the boundary q = q_floor, where misdetection is largest.
    """
    if method not in SAMPLERS:
        raise ValueError(f"unknown sampler {method!r}")
    m = f0.alphabet.m
    p0 = f0.probs
    if method == "boundary" and float(q.raw(p0)) >= q_floor:
        raise ValueError("f0 already satisfies the post-change constraint")
    limit = max_draws or 1000 * count + 10_000
    out: list[Pmf] = []
    draws = 0
    while len(out) < count:
        draws += 1
        if draws > limit:
            raise RuntimeError("post-change set too small for Dirichlet rejection sampling")
        g = rng.dirichlet(np.ones(m))
        if float(q.raw(g)) < q_floor:
            continue
        if method == "boundary":
            lo, hi = 0.0, 1.0
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if float(q.raw((1 - mid) * p0 + mid * g)) >= q_floor:
                    hi = mid
                else:
                    lo = mid
            g = (1 - hi) * p0 + hi * g
        f1 = Pmf(g, f0.alphabet)
        if float(q.raw(f1.probs)) >= q_floor:
            out.append(f1)
    return out


def post_change_set(config: ExperimentConfig) -> list[Pmf]:
    if config.post_change:
        return list(config.post_change)
    return sample_post_change(config.f0, config.q, config.q_floor, config.post_change_samples,
                              _rng(config.seed, _KEY_F1), config.f1_sampler)


# ---------------------------------------------------------------------------
# window experiments (composite testing and transient detection)


@dataclass
class _Family:
    """A detector statistic and the thresholds it is compared against (alarm iff stat >= thr)."""

    detector: str
    thresholds: np.ndarray
    labels: list
    c_s: float | None = None
    f_star: np.ndarray | None = None


def _families(config: ExperimentConfig) -> list[_Family]:
    fams = []
    q = config.q
    for det, sweep in config.threshold_sweep.items():
        if det == IPT:
            by_cs: dict[float, list[float]] = {}
            for c_s, c_d in sweep:
                by_cs.setdefault(c_s, []).append(c_d)
            for c_s, cds in by_cs.items():
                f_star = i_project(config.f0, q, q.center(c_s)).f_star.probs
                cds = sorted(set(cds))
                fams.append(_Family(IPT, np.array(cds), [(c_s, c) for c in cds], c_s, f_star))
        else:
            thr = sorted(set(sweep))
            fams.append(_Family(det, np.array(thr), [(t,) for t in thr]))
    return fams


def _family_stats(config: ExperimentConfig, fams: list[_Family], counts: np.ndarray) -> list[np.ndarray]:
    """Statistic of every family on each count row (rows share one window size)."""
    q = config.q
    w = int(counts[0].sum())
    s = window_statistic(counts, q)
    out = []
    g = None
    for fam in fams:
        if fam.detector == FMA:
            out.append(s)
        elif fam.detector == GLRT:
            if g is None:
                g = glrt_statistic(counts, q, config.q_floor, config.f0)
            out.append(g)
        else:
            e = np.full(s.shape, -np.inf)
            crossed = s >= fam.c_s
            if np.any(crossed):
                e[crossed] = kl_rows(counts[crossed] / w, fam.f_star)
            out.append(e)
    return out


def _batched_window_counts(idx: np.ndarray, m: int, w: int) -> np.ndarray:
    """Counts of every length-w window of each row of idx: shape (B, T - w + 1, m)."""
    B, T = idx.shape
    onehot = np.zeros((B, T + 1, m), dtype=np.int32)
    onehot[np.arange(B)[:, None], np.arange(1, T + 1)[None, :], idx] = 1
    cum = np.cumsum(onehot, axis=1)
    return cum[:, w:] - cum[:, :-w]


def _window_block(config: ExperimentConfig, fams: list[_Family], counts: np.ndarray,
                  starts: list[int]) -> list[np.ndarray]:
    """Alarm counts per (start position, threshold) for one block of streams.

    counts has shape (B, W, m); a stream alarms from ``start`` (1-based window
    position) on if any window at or after it reaches the threshold.
    """
    B, W, m = counts.shape
    flat = counts.reshape(-1, m)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(B, W)
    stats = _family_stats(config, fams, uniq.astype(np.int64))
    result = []
    pos = np.asarray(starts) - 1
    for fam, st in zip(fams, stats):
        per_window = st[inv]
        suffix = np.maximum.accumulate(per_window[:, ::-1], axis=1)[:, ::-1]
        peak = suffix[:, pos]                                   # (B, P)
        result.append((peak[:, :, None] >= fam.thresholds[None, None, :]).sum(axis=0))
    return result


def _window_experiment(config: ExperimentConfig, workers: int, mode: str) -> list[CurvePoint]:
    fams = _families(config)
    f1s = post_change_set(config)
    m = config.f0.alphabet.m
    if mode == CHT:
        w, W_null, starts = config.n, 1, [1]
        change_points = [1]
    else:
        w = config.rolling_window
        change_points = list(config.change_points or range(1, w + 1))
        if any(not 1 <= t <= w for t in change_points):
            raise ValueError("transient change points must lie in 1..w")
        starts = [w - t + 1 for t in change_points]
        W_null = config.n_alpha

    def draw(task):
        group, i, b, size = task
        p = config.f0.probs if group == _KEY_NULL else f1s[i].probs
        rng = _rng(config.seed, group, i, b)
        if mode == CHT:
            counts = rng.multinomial(w, p, size=size)[:, None, :]
            return _window_block(config, fams, counts, [1])
        if group == _KEY_NULL:
            idx = sample_indices(config.f0.probs, (size, w - 1 + W_null), rng)
            return _window_block(config, fams, _batched_window_counts(idx, m, w), [1])
        pre = sample_indices(config.f0.probs, (size, w - 1), rng)
        post = sample_indices(p, (size, config.n), rng)
        idx = np.concatenate([pre, post], axis=1)
        return _window_block(config, fams, _batched_window_counts(idx, m, w), starts)

    tasks = []
    if W_null > 0:
        tasks += [(_KEY_NULL, 0, b, size) for b, size in _blocks(config.trials)]
    for i in range(len(f1s)):
        tasks += [(_KEY_POST, i, b, size) for b, size in _blocks(config.trials)]
    results = _run_tasks(draw, tasks, workers)

    N = config.trials
    null = [np.zeros(len(f.thresholds), dtype=np.int64) for f in fams]
    post = [[np.zeros((len(starts), len(f.thresholds)), dtype=np.int64) for f in fams] for _ in f1s]
    for task, res in zip(tasks, results):
        group, i, _, _ = task
        for k, arr in enumerate(res):
            if group == _KEY_NULL:
                null[k] += arr[0]
            else:
                post[i][k] += arr
    points = []
    for k, fam in enumerate(fams):
        for j, label in enumerate(fam.labels):
            fa = int(null[k][j])
            # worst misdetection over sampled f1 and change points
            md = np.array([[N - int(post[i][k][p, j]) for p in range(len(starts))] for i in range(len(f1s))])
            i_w, p_w = np.unravel_index(int(np.argmax(md)), md.shape)
            worst = int(md[i_w, p_w])
            extra = {"worst_f1": int(i_w), "worst_t1": int(change_points[p_w])}
            points.append(CurvePoint(fam.detector, fa / N, worst / N, wilson_half_width(worst, N),
                                     label if len(label) == 2 else (label[0], None),
                                     wilson_half_width(fa, N), extra))
    return points


def simulate_roc_cht(config: ExperimentConfig, workers: int = 1) -> list[CurvePoint]:
    """Composite hypothesis test: x = P(alarm on one f0 window), y = worst P(no alarm) over f1."""
    if config.scenario != CHT:
        raise ValueError("simulate_roc_cht needs scenario 'cht'")
    return _window_experiment(config, workers, CHT)


def simulate_roc_tcd(config: ExperimentConfig, workers: int = 1) -> list[CurvePoint]:
    """Transient detection with a rolling window.

    x = P(any alarm among n_alpha consecutive f0 windows).  For each f1 and
    change point t1 the stream is t1 - 1 samples of f0 followed by n samples
    of f1; a misdetection is no alarm in any window that ends after the
    change.  All t1 reuse one path: the t1 stream is the tail of a (w - 1)
    sample f0 prefix followed by the f1 segment.
    """
    if config.scenario != TCD:
        raise ValueError("simulate_roc_tcd needs scenario 'tcd'")
    return _window_experiment(config, workers, TCD)


# ---------------------------------------------------------------------------
# sequential experiments


class _LazyStream:
    """Letter indices drawn on demand in doubling chunks from one generator.

    The content never depends on how much was requested before, so every
    detector reading the stream sees the same path.
    """

    def __init__(self, probs: np.ndarray, rng: np.random.Generator, prefix: np.ndarray | None = None,
                 first_chunk: int = 256):
        self.probs, self.rng = probs, rng
        self.data = np.zeros(0, dtype=np.int64) if prefix is None else np.asarray(prefix, dtype=np.int64)
        self._chunk = first_chunk

    def extend(self):
        self.data = np.concatenate([self.data, sample_indices(self.probs, self._chunk, self.rng)])
        self._chunk *= 2


def _stopping_time(fn, stream: _LazyStream, max_steps: int) -> int | None:
    """First alarm of ``fn`` on the stream, extending it until an alarm or ``max_steps``."""
    while True:
        if len(stream.data) < 1:
            stream.extend()
        t = fn(stream.data[:max_steps])
        if t is not None:
            return t
        if len(stream.data) >= max_steps:
            return None
        stream.extend()


def _sequential_detectors(config: ExperimentConfig) -> list[tuple[str, tuple, object]]:
    """(detector, label, fn(idx) -> alarm time or None) for every threshold."""
    q = config.q_with_floor
    w = config.rolling_window
    m = q.alphabet.m
    out = []
    for det, sweep in config.threshold_sweep.items():
        for thr in sweep:
            if det == IPT:
                c_s, c_d = thr
                cfg = QuickestIptConfig(c_s, c_d, config.rho, q, config.f0)
                cache = ProjectionCache(config.f0, q, c_s)
                out.append((IPT, (c_s, c_d), lambda idx, cfg=cfg, cache=cache: quickest_alarm_time(cfg, idx, cache)))
            elif det == FMA:
                def fma(idx, thr=thr):
                    ends, counts = window_counts(idx, m, w)
                    hits = np.flatnonzero(window_statistic(counts, q) >= thr) if len(ends) else []
                    return int(ends[hits[0]]) if len(hits) else None
                out.append((FMA, (thr, None), fma))
            else:
                def glrt(idx, thr=thr):
                    ends, counts = window_counts(idx, m, w)
                    if not len(ends):
                        return None
                    hits = np.flatnonzero(glrt_statistic(counts, q, config.q_floor, config.f0) >= thr)
                    return int(ends[hits[0]]) if len(hits) else None
                out.append((GLRT, (thr, None), glrt))
    return out


def simulate_arl_wadd(config: ExperimentConfig, workers: int = 1) -> list[CurvePoint]:
    """Quickest detection: x = ARL under f0, y = WADD proxy (worst mean delay over f1 and t1).

    Null runs are censored at ``max_steps``; the censored fraction is
    reported in ``extra`` and flagged when it exceeds 1%.  Delay runs whose
    alarm precedes the change are dropped (the delay is conditional on no
    earlier alarm) and counted in ``extra``.
    """
    if config.scenario != QCD:
        raise ValueError("simulate_arl_wadd needs scenario 'qcd'")
    dets = _sequential_detectors(config)
    f1s = post_change_set(config)
    w = config.rolling_window
    t1_grid = list(config.change_points or sorted({1, max(1, w // 2), w, 2 * w}))
    prefixes = config.prefixes or config.trials
    p0 = config.f0.probs

    def null_task(t):
        stream = _LazyStream(p0, _rng(config.seed, _KEY_ARL, t))
        return [_stopping_time(fn, stream, config.max_steps) for _, _, fn in dets]

    def delay_task(task):
        i, c, r = task
        t1 = t1_grid[c]
        rng = _rng(config.seed, _KEY_DELAY, i, c, r)
        prefix = sample_indices(p0, t1 - 1, rng)
        stream = _LazyStream(f1s[i].probs, rng, prefix)
        return [_stopping_time(fn, stream, t1 - 1 + config.max_steps) for _, _, fn in dets]

    null = _run_tasks(null_task, list(range(config.trials)), workers)
    delay_tasks = [(i, c, r) for i in range(len(f1s)) for c in range(len(t1_grid)) for r in range(prefixes)]
    delays = _run_tasks(delay_task, delay_tasks, workers)
    z = z_value()
    points = []
    for k, (det, label, _) in enumerate(dets):
        times = np.array([row[k] if row[k] is not None else config.max_steps for row in null], dtype=float)
        censored = float(np.mean([row[k] is None for row in null]))
        arl = float(times.mean())
        arl_hw = float(z * times.std(ddof=1) / math.sqrt(len(times))) if len(times) > 1 else 0.0
        cells: dict[tuple[int, int], list[float]] = {}
        early = 0
        for (i, c, _), row in zip(delay_tasks, delays):
            t1 = t1_grid[c]
            ta = row[k]
            if ta is not None and ta < t1:
                early += 1
                continue
            d = (ta if ta is not None else t1 - 1 + config.max_steps) - t1 + 1
            cells.setdefault((i, c), []).append(float(d))
        means = {key: float(np.mean(v)) for key, v in cells.items()}
        if means:
            worst = max(means, key=means.get)
            vals = np.array(cells[worst])
            wadd = means[worst]
            hw = float(z * vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            at_one = max((v for (i, c), v in means.items() if t1_grid[c] == 1), default=float("nan"))
            extra = {"censored": censored, "censored_flag": censored > CENSOR_FLAG, "early_alarms": early,
                     "worst_f1": worst[0], "worst_t1": t1_grid[worst[1]], "delay_t1_1": at_one}
        else:
            wadd, hw = float("nan"), 0.0
            extra = {"censored": censored, "censored_flag": censored > CENSOR_FLAG, "early_alarms": early}
        points.append(CurvePoint(det, arl, wadd, hw, label, arl_hw, extra))
    return points


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class BenchRow:
    detector: str
    m: int
    n: int
    mode: str
    ns_per_step: float


def _bench_problem(m: int, n: int):
    a = Alphabet(range(m))
    f0 = Pmf.uniform(a)
    q = QFunction.mean(a)
    sd = math.sqrt((m * m - 1) / 12 / n)
    c_s = f0.mean() + 0.5 * sd     # crossed on roughly a third of the windows
    return a, f0, q, c_s


def bench_step_time(config: ExperimentConfig) -> list[BenchRow]:
    """Mean wall-clock per detection step (best of ``bench_repeats`` runs).

    IPT and FMA use their O(1) sliding updates; GLRT re-solves the reverse
    projection for each window, timed over ``glrt_steps`` steps.
    """
    rows = []
    for m, n in config.bench_sizes:
        m, n = int(m), int(n)
        a, f0, q, c_s = _bench_problem(m, n)
        rng = _rng(config.seed, _KEY_BENCH, m, n)
        steps = config.bench_steps
        stream = sample_indices(f0.probs, n + steps, rng).tolist()
        ipt = SlidingIpt(FixedIptConfig(n, c_s, math.inf, q, f0))
        fma = SlidingFma(n, c_s, q)
        for name, det in ((IPT, ipt), (FMA, fma)):
            best = math.inf
            for _ in range(config.bench_repeats):
                det.reset()
                for j in stream[:n]:
                    det.update(j)
                update = det.update
                body = stream[n:]
                t0 = time.perf_counter_ns()
                for j in body:
                    update(j)
                best = min(best, (time.perf_counter_ns() - t0) / len(body))
            rows.append(BenchRow(name, m, n, "sliding", best))
        g_steps = min(config.glrt_steps, steps)
        counts = np.bincount(stream[:n], minlength=m).astype(np.int64)
        best = math.inf
        for _ in range(config.bench_repeats):
            c = counts.copy()
            t0 = time.perf_counter_ns()
            for k in range(g_steps):
                c[stream[k]] -= 1
                c[stream[n + k]] += 1
                glrt_step_statistic(c, q, c_s, f0)
            best = min(best, (time.perf_counter_ns() - t0) / g_steps)
        rows.append(BenchRow(GLRT, m, n, "window", best))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["detector", "m", "n", "mode", "ns_per_step"])
    for r in rows:
        w.writerow([r.detector, r.m, r.n, r.mode, f"{r.ns_per_step:.1f}"])
    return buf.getvalue()


def bench_ratios(rows: list[BenchRow]) -> dict[tuple[int, int], float]:
    """GLRT / IPT per-step time for every (m, n)."""
    t = {(r.detector, r.m, r.n): r.ns_per_step for r in rows}
    return {(m, n): t[(GLRT, m, n)] / t[(IPT, m, n)] for (d, m, n) in t if d == IPT}


def simulate(config: ExperimentConfig, workers: int = 1):
    """Dispatch on the scenario; bench returns BenchRow, the others CurvePoint."""
    if config.scenario == CHT:
        return simulate_roc_cht(config, workers)
    if config.scenario == TCD:
        return simulate_roc_tcd(config, workers)
    if config.scenario == QCD:
        return simulate_arl_wadd(config, workers)
    return bench_step_time(config)


# ---------------------------------------------------------------------------
# curve summaries


def lower_envelope(points: list[CurvePoint]) -> list[CurvePoint]:
    """Pareto-optimal points: no other point has both lower x and lower y."""
    ordered = sorted(points, key=lambda p: (p.x, p.y))
    out, best = [], math.inf
    for p in ordered:
        if p.y < best:
            out.append(p)
            best = p.y
    return out


def auc(curve: list[CurvePoint]) -> float:
    """Trapezoidal area over x in [0, 1], carrying endpoint y-values out to 0 and 1.

    Points sharing an x are averaged first.
    """
    if len(curve) < 2:
        raise ValueError("auc needs at least two points")
    return _area([p.x for p in curve], [p.y for p in curve])


def _area(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ux, inv = np.unique(xs, return_inverse=True)
    uy = np.bincount(inv, weights=ys) / np.bincount(inv)
    x = np.concatenate([[0.0], ux, [1.0]])
    y = np.concatenate([[uy[0]], uy, [uy[-1]]])
    return float(np.trapezoid(y, x))


def detector_auc(points: list[CurvePoint], detector: str) -> float:
    """AUC of a detector's Pareto envelope (its best operating points across the sweep)."""
    env = lower_envelope([p for p in points if p.detector == detector])
    if not env:
        raise ValueError(f"no points for detector {detector!r}")
    return _area([p.x for p in env], [p.y for p in env])


def dominance_fraction(inner: list[CurvePoint], outer: list[CurvePoint], trials: int,
                       alpha: float = 0.01) -> tuple[float, int]:
    """Share of ``inner``'s ROC points that are significantly worse than ``outer``.

    Both curves are reduced to their Pareto envelopes.  Every inner envelope
    point whose x lies in the common false-alarm range is compared with
    outer's envelope interpolated at that x, by a one-sided two-proportion
    z-test of H0: y_inner <= y_outer at level alpha.
    Returns (fraction rejected, points tested).
    """
    inner = lower_envelope(inner)
    env = lower_envelope(outer)
    ex = np.array([p.x for p in env])
    ey = np.array([p.y for p in env])
    lo = max(min(p.x for p in inner), ex.min())
    hi = min(max(p.x for p in inner), ex.max())
    z_crit = float(norm.ppf(1 - alpha))
    tested = rejected = 0
    for p in inner:
        if not lo <= p.x <= hi:
            continue
        y_out = float(np.interp(p.x, ex, ey))
        se = math.sqrt(p.y * (1 - p.y) / trials + y_out * (1 - y_out) / trials)
        diff = p.y - y_out
        z = diff / se if se > 0 else (math.inf if diff > 0 else 0.0)
        tested += 1
        rejected += z > z_crit
    return (rejected / tested if tested else 0.0), tested


# ---------------------------------------------------------------------------
# empirical results against the analytic bounds


@dataclass(frozen=True)
class BoundCheck:
    """One (operating point, bound) comparison; ``applicable`` means preconditions hold and the bound is informative."""

    detector: str
    threshold: tuple
    bound: str
    value: float
    empirical: float
    ci_half_width: float
    applicable: bool

    @property
    def holds(self) -> bool:
        if self.bound == "arl_lower":
            return self.empirical >= self.value - self.ci_half_width
        return self.empirical <= self.value + self.ci_half_width


def window_bound_inputs(config: ExperimentConfig, c_s: float, c_d: float) -> BoundInputs:
    """Bound inputs for a single-window test, centered midway between q(f0) and the floor.

    Only the differences c_s - q0 and q_floor - q0 enter the window bounds,
    so the choice of centre is immaterial.
    """
    q0 = float(config.q.raw(config.f0.probs))
    mid = (q0 + config.q_floor) / 2
    return BoundInputs(config.n, config.f0.alphabet.m, c_s - mid, c_d, q0 - mid, config.q_floor - mid,
                       config.q.lipschitz)


def bound_dominance(points: list[CurvePoint], config: ExperimentConfig) -> list[BoundCheck]:
    """Compare IPT and FMA points with the bounds that cover them.

    Composite tests: false alarm and worst misdetection (FMA is the c_d = 0
    test).  Quickest detection: the run-length lower bound for IPT with the
    mean statistic.  GLRT has no bound.
    """
    checks = []
    if config.scenario == CHT:
        for p in points:
            if p.detector == GLRT:
                continue
            c_d = p.c_d if p.detector == IPT else 0.0
            b = window_bound_inputs(config, p.c_s, c_d)
            fa = fa_bound(b)
            checks.append(BoundCheck(p.detector, p.threshold, "false_alarm", fa.raw, p.x, p.x_ci_half_width,
                                     not fa.vacuous))
            try:
                md = md_bound(b)
                checks.append(BoundCheck(p.detector, p.threshold, "misdetection", md.raw, p.y, p.ci_half_width,
                                         not md.vacuous))
            except BoundPreconditionError:
                pass
    elif config.scenario == QCD and config.q.kind == "mean":
        q = config.q
        q0 = q.center(float(q.raw(config.f0.probs)))
        qf = q.center(config.q_floor)
        if q0 < 0 < qf:
            v_star = wald_root(config.f0, q)
            for p in points:
                if p.detector != IPT:
                    continue
                b = BoundInputs(1, config.f0.alphabet.m, p.c_s, p.c_d, q0, qf, q.lipschitz, config.rho)
                try:
                    arl = arl_bound(b, v_star)
                except BoundPreconditionError:
                    continue
                checks.append(BoundCheck(IPT, p.threshold, "arl_lower", arl.value, p.x, p.x_ci_half_width,
                                         arl.value > 1))
    return checks


# ---------------------------------------------------------------------------
# reference experiment settings


def _midpoints(values: np.ndarray) -> list[float]:
    v = np.unique(np.round(values, 12))
    mids = (v[1:] + v[:-1]) / 2
    return [float(v[0] - 1.0)] + mids.tolist() + [float(v[-1] + 1.0)]


def cht_config(trials: int = 10_000, seed: int = 2021, post_change_samples: int = 100,
               sampler: str = "boundary") -> ExperimentConfig:
    """Ternary composite test: uniform f0 on {-1, 0, 1}, mean floor 0.25, n = 25.

    c_s runs over an even grid strictly between q(f0) = 0 and the floor, c_d
    over [2^-8, 2^-3].  GLRT thresholds are the midpoints of its attainable
    values on the count lattice.
    """
    a = Alphabet([-1, 0, 1])
    f0 = Pmf.uniform(a)
    q = QFunction.mean(a)
    n = 25
    c_s = np.linspace(0.0, 0.25, 11)[1:-1].tolist()
    c_d = [float(2.0**e) for e in np.linspace(-8, -3, 11)]
    lattice = simplex_lattice(3, n)
    g = glrt_statistic(lattice, q, 0.25, f0)
    sweep = {IPT: [(s, d) for s in c_s for d in c_d], FMA: c_s, GLRT: _midpoints(g)}
    return ExperimentConfig(CHT, f0, q, 0.25, sweep, n=n, trials=trials,
                            post_change_samples=post_change_samples, seed=seed, f1_sampler=sampler)


def tcd_config(trials: int = 1000, seed: int = 2021, post_change_samples: int = 100,
               sampler: str = "boundary") -> ExperimentConfig:
    """Discrete-Gaussian transient test: {-5..5}, variance 1 -> >= 2, n = 80, n_alpha = 200, w = 20."""
    a = Alphabet.integers(-5, 5)
    f0 = Pmf.discrete_gaussian(a, 1.0)
    q = QFunction.variance(a, offset=1.5)
    w = 20
    # window variances are multiples of 1/400; thresholds sit between them
    c_s = [round(v, 6) + 1 / 800 for v in np.arange(1.0, 6.0, 0.125)]
    c_d = [float(2.0**e) for e in np.linspace(-5, 1, 13)]
    glrt = np.arange(2.0, 20.5, 0.5).tolist()
    sweep = {IPT: [(s, d) for s in c_s for d in c_d], FMA: c_s, GLRT: glrt}
    return ExperimentConfig(TCD, f0, q, 2.0, sweep, n=80, trials=trials, window=w, n_alpha=200,
                            post_change_samples=post_change_samples, seed=seed, f1_sampler=sampler)


def qcd_config(trials: int = 200, seed: int = 2021, post_change_samples: int = 10,
               c_s: tuple = (5.0, 10.0, 15.0, 20.0), c_d: float = 2.0**-5) -> ExperimentConfig:
    """Quickest detection in the ternary setting; the mean is centered at 0.125 (negative drift)."""
    a = Alphabet([-1, 0, 1])
    f0 = Pmf.uniform(a)
    q = QFunction.mean(a, offset=0.125)
    sweep = {IPT: [(s, c_d) for s in c_s], FMA: [0.36, 0.44, 0.52, 0.6], GLRT: [4.0, 6.0, 8.0, 10.0]}
    return ExperimentConfig(QCD, f0, q, 0.25, sweep, n=25, window=25, trials=trials, rho=1.0,
                            post_change_samples=post_change_samples, seed=seed, f1_sampler="boundary",
                            prefixes=20, max_steps=200_000)


def bench_config(sizes=((3, 25), (10, 80), (100, 800), (1000, 8000)), steps: int = 20_000,
                 seed: int = 2021) -> ExperimentConfig:
    a = Alphabet([0, 1])
    return ExperimentConfig(BENCH, Pmf.uniform(a), QFunction.mean(a), 1.0, {}, bench_sizes=tuple(sizes),
                            bench_steps=steps, seed=seed)
