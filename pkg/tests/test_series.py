import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipt.detectors import FixedIptConfig, fixed_ipt_run
from ipt.series import (
    DataError, QuantizerSpec, SeriesSpec, calibrate_cd, ingest_csv, long_term_pmf, most_likely_outlier,
    planted_series, quantize, rllf_analysis, rllf_csv_rows, segment_windows,
)
from ipt.simplex import Alphabet, Pmf, QFunction

TERNARY = Alphabet([-1, 0, 1])
UNIFORM = Pmf.uniform(TERNARY)


@pytest.fixture
def csv_file(tmp_path):
    def write(lines):
        p = tmp_path / "series.csv"
        p.write_text("\n".join(lines) + "\n")
        return str(p)
    return write


class TestIngest:
    def test_ten_rows(self, csv_file):
        path = csv_file(["date,ret"] + [f"d{i},{i * 0.5}" for i in range(10)])
        s = ingest_csv(SeriesSpec(path, "ret", timestamp="date"))
        assert s.values.tolist() == [i * 0.5 for i in range(10)]
        assert s.timestamps[3] == "d3" and s.rows == 10 and s.dropped == 0

    def test_blank_dropped(self, csv_file):
        lines = ["date,ret"] + [f"d{i},{i}" for i in range(10)]
        lines[5] = "d4,"
        s = ingest_csv(SeriesSpec(csv_file(lines), "ret"))
        assert len(s.values) == 9 and s.dropped == 1

    def test_blank_error_names_row(self, csv_file):
        lines = ["date,ret"] + [f"d{i},{i}" for i in range(10)]
        lines[5] = "d4,"
        with pytest.raises(DataError, match="line 6"):
            ingest_csv(SeriesSpec(csv_file(lines), "ret", missing="error"))

    def test_column_by_index(self, csv_file):
        s = ingest_csv(SeriesSpec(csv_file(["a,b", "1,2", "3,4"]), 1))
        assert s.values.tolist() == [2.0, 4.0]

    @pytest.mark.parametrize("column", ["zzz", 7])
    def test_missing_column(self, csv_file, column):
        with pytest.raises(DataError):
            ingest_csv(SeriesSpec(csv_file(["a,b", "1,2"]), column))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            ingest_csv(SeriesSpec(str(tmp_path / "nope.csv")))

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            SeriesSpec("x.csv", missing="fill")


class TestQuantize:
    def test_uniform_midpoints(self):
        q = quantize([-1.0, 0.0, 1.0], QuantizerSpec("uniform", m=3, lo=-1.5, hi=1.5))
        assert q.symbols.tolist() == [-1.0, 0.0, 1.0] and q.clamped == 0

    def test_clamp(self):
        q = quantize([5.0, 0.2], QuantizerSpec("uniform", m=3, lo=-1.5, hi=1.5))
        assert q.symbols.tolist() == [1.0, 0.0] and q.clamped == 1

    def test_quantile_quartiles(self):
        q = quantize(np.arange(100), QuantizerSpec("quantile", m=4))
        assert np.bincount(q.indices).tolist() == [25, 25, 25, 25]

    def test_quantile_needs_distinct_values(self):
        with pytest.raises(DataError):
            quantize([1.0, 1.0, 2.0], QuantizerSpec("quantile", m=3))

    def test_explicit_with_letters(self):
        q = quantize([-3, 0.5, 9], QuantizerSpec("explicit", edges=(-1, 0, 1, 2), letters=(-1, 0, 1)))
        assert q.symbols.tolist() == [-1, 0, 1] and q.clamped == 2

    @pytest.mark.parametrize("kw", [dict(mode="explicit", edges=(0, 2, 1)), dict(mode="uniform", m=3, lo=1, hi=1),
                                    dict(mode="log"), dict(mode="quantile", m=1)])
    def test_bad_specs(self, kw):
        with pytest.raises(ValueError):
            QuantizerSpec(**kw)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200), st.integers(2, 9))
    def test_count_preserved(self, xs, m):
        q = quantize(xs, QuantizerSpec("uniform", m=m, lo=-10, hi=10))
        assert len(q.symbols) == len(xs)
        assert set(q.symbols.tolist()) <= set(q.alphabet.letters.tolist())


class TestLongTerm:
    def test_smoothing(self):
        idx = np.array([0] * 60 + [1] * 40)
        f = long_term_pmf(idx, TERNARY)
        assert np.all(f.probs > 0)
        raw = np.array([0.6, 0.4, 0.0])
        assert np.abs(f.probs - raw).sum() <= 3 / 100


class TestRllf:
    def test_constant_series(self):
        rows = rllf_analysis([0.0] * 50, TERNARY, 10, 0.1, 0.05, "explicit", UNIFORM)
        assert len(rows) == 41 and not any(r.s_crossed or r.change for r in rows)

    def test_rllf_iff_crossed(self):
        rng = np.random.default_rng(0)
        x = rng.choice([-1, 0, 1], 400)
        rows = rllf_analysis(x, TERNARY, 12, 0.2, 0.05)
        assert all((r.rllf is not None) == r.s_crossed for r in rows)
        assert all(r.s_crossed and r.rllf >= 0.05 for r in rows if r.change)

    def test_agrees_with_fixed_detector(self):
        rng = np.random.default_rng(4)
        x = np.concatenate([rng.choice([-1, 0, 1], 300), rng.choice([-1, 0, 1], 60, p=[0.05, 0.15, 0.8])])
        rows = rllf_analysis(x, TERNARY, 20, 0.2, 0.08, "explicit", UNIFORM)
        rep = fixed_ipt_run(FixedIptConfig(20, 0.2, 0.08, QFunction.mean(TERNARY), UNIFORM), x)
        first = next(r.t for r in rows if r.change)
        assert rep.alarm_time == first
        assert rep.suppressed == [r.t for r in rows if r.s_crossed and not r.change and r.t < first]

    def test_below_direction_mirrors(self):
        rng = np.random.default_rng(5)
        x = rng.choice([-1, 0, 1], 300)
        up = rllf_analysis(x, TERNARY, 15, 0.2, 0.05, "explicit", UNIFORM)
        down = rllf_analysis(-x, TERNARY, 15, -0.2, 0.05, "explicit", UNIFORM, direction="below")
        assert [(r.s_crossed, r.change) for r in up] == [(r.s_crossed, r.change) for r in down]
        assert np.allclose([r.rllf or 0 for r in up], [r.rllf or 0 for r in down])
        assert np.allclose([r.moving_avg for r in up], [-r.moving_avg for r in down])

    def test_short_series(self):
        with pytest.raises(DataError):
            rllf_analysis([0, 1], TERNARY, 5, 0.1, 0.1)

    def test_explicit_needs_f0(self):
        with pytest.raises(ValueError):
            rllf_analysis([0] * 10, TERNARY, 5, 0.1, 0.1, "explicit")

    def test_csv_rows(self):
        rows = rllf_analysis([0, 1, 1, 1, 0, -1], TERNARY, 3, 0.5, 0.01, "explicit", UNIFORM)
        table = rllf_csv_rows(rows)
        assert table[0] == ["t", "moving_avg", "s_crossed", "rllf", "change"]
        assert len(table) == len(rows) + 1


class TestCalibration:
    def test_percentile_of_crossing_windows(self):
        cd95 = calibrate_cd(UNIFORM, 25, 0.25, 95, rng=np.random.default_rng(1))
        cd50 = calibrate_cd(UNIFORM, 25, 0.25, 50, rng=np.random.default_rng(1))
        assert 0 < cd50 < cd95 < 0.5

    def test_too_few_crossings(self):
        with pytest.raises(DataError):
            calibrate_cd(UNIFORM, 25, 0.9, resamples=200)

    def test_outlier_direction(self):
        f_star = most_likely_outlier(UNIFORM, -0.25, direction="below")
        assert f_star.mean() == pytest.approx(-0.25)
        assert np.allclose(f_star.probs, most_likely_outlier(UNIFORM, 0.25).probs[::-1])


class TestPlanted:
    def test_segments(self):
        x, spans = planted_series(UNIFORM, [(100, Pmf.point_mass(TERNARY, 1))], 500, 50, np.random.default_rng(0))
        assert spans == [(100, 150)] and np.all(x[100:150] == 1)

    def test_segment_windows(self):
        rows = rllf_analysis(np.zeros(200), TERNARY, 10, 0.5, 0.1)
        inside = segment_windows(rows, (50, 80), 10)
        assert [r.t for r in inside] == list(range(60, 81))
