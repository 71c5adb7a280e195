import json
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from ipt.projection import (
    ConvergenceError,
    InfeasibleError,
    ProjectionCache,
    grid_oracle_project,
    i_project,
    log_mgf,
    reverse_kl_batch,
    reverse_project,
    simplex_lattice,
    tilt_to_mean,
)
from ipt.simplex import Alphabet, Pmf, QFunction, kl_divergence, q_eval

TERNARY = Alphabet([-1, 0, 1])
BINARY = Alphabet([0, 1])
UNIFORM = Pmf.uniform(TERNARY)
MEAN_Q = QFunction.mean(TERNARY)

# s = e^r solves 3 s^2 - s - 5 = 0 for a target mean of 0.25 under the uniform pmf
S_QUARTER = (1 + math.sqrt(61)) / 6
F_QUARTER = np.array([1 / S_QUARTER, 1.0, S_QUARTER]) / (1 / S_QUARTER + 1 + S_QUARTER)


def random_pmf(rng, m, alphabet):
    return Pmf.from_weights(rng.dirichlet(np.ones(m)), alphabet)


class TestLogMgf:
    def test_zero(self):
        assert log_mgf(Pmf([0.2, 0.3, 0.5], TERNARY), 0.0) == 0.0

    def test_uniform_tilt(self):
        expected = math.log((1 / S_QUARTER + 1 + S_QUARTER) / 3)
        assert log_mgf(UNIFORM, math.log(S_QUARTER)) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.048600, abs=1e-6)

    def test_wald_root_example(self):
        assert log_mgf(Pmf([0.5, 0.2, 0.3], TERNARY), math.log(5 / 3)) == pytest.approx(0.0, abs=1e-12)

    def test_no_overflow(self):
        assert math.isfinite(log_mgf(UNIFORM, 5000.0))

    def test_convex(self):
        rs = np.linspace(-3, 3, 61)
        vals = np.array([log_mgf(Pmf([0.5, 0.2, 0.3], TERNARY), r) for r in rs])
        assert np.all(np.diff(vals, 2) >= -1e-12)


class TestTiltToMean:
    def test_inactive(self):
        res = tilt_to_mean(UNIFORM, 0.0)
        assert res.multipliers["r"] == 0.0 and res.kl_value == 0.0 and not res.active
        assert res.f_star is UNIFORM

    def test_quarter(self):
        res = tilt_to_mean(UNIFORM, 0.25)
        assert res.multipliers["r"] == pytest.approx(math.log(S_QUARTER), abs=1e-9)
        assert np.allclose(res.f_star.probs, F_QUARTER, atol=1e-9)
        assert np.allclose(res.f_star.probs, [0.216237, 0.317520, 0.466243], atol=1e-5)
        assert res.f_star.mean() == pytest.approx(0.25, abs=1e-10)
        assert res.kl_value == pytest.approx(kl_divergence(res.f_star, UNIFORM), abs=1e-12)

    def test_zero_target_from_skewed(self):
        res = tilt_to_mean(Pmf([0.5, 0.2, 0.3], TERNARY), 0.0)
        assert res.multipliers["r"] == pytest.approx(0.5 * math.log(5 / 3), abs=1e-9)
        assert res.multipliers["r"] == pytest.approx(0.255413, abs=1e-6)

    @pytest.mark.parametrize("target", [-1.0, 1.0, 2.0])
    def test_infeasible(self, target):
        with pytest.raises(InfeasibleError):
            tilt_to_mean(UNIFORM, target)

    def test_tilt_consistency(self):
        rng = np.random.default_rng(3)
        alphabet = Alphabet([-2, -0.5, 0.3, 1, 4])
        for _ in range(50):
            f0 = random_pmf(rng, 5, alphabet)
            target = rng.uniform(f0.mean(), 3.9)
            res = tilt_to_mean(f0, target)
            r, lam = res.multipliers["r"], res.multipliers["log_mgf"]
            ratio = res.f_star.probs * math.exp(lam) / f0.probs
            assert np.allclose(ratio, np.exp(r * alphabet.letters), rtol=1e-9)


class TestIProject:
    def test_inactive_is_bit_equal(self):
        f0 = Pmf([0.2, 0.3, 0.5], TERNARY)
        res = i_project(f0, MEAN_Q, 0.1)
        assert np.array_equal(res.f_star.probs, f0.probs) and res.kl_value == 0.0

    def test_mean_delegates(self):
        a, b = i_project(UNIFORM, MEAN_Q, 0.25), tilt_to_mean(UNIFORM, 0.25)
        assert np.allclose(a.f_star.probs, b.f_star.probs, atol=1e-9)
        assert a.kl_value == pytest.approx(b.kl_value, abs=1e-9)

    def test_offset_shifts_target(self):
        q = QFunction.mean(TERNARY, offset=0.125)
        res = i_project(UNIFORM, q, 0.125)
        assert res.f_star.mean() == pytest.approx(0.25, abs=1e-10)

    def test_infeasible_above_sup(self):
        with pytest.raises(InfeasibleError):
            i_project(UNIFORM, MEAN_Q, 1.0)

    def test_variance_gaussian_matches_family_grid(self):
        alphabet = Alphabet.integers(-5, 5)
        a = alphabet.letters
        f0 = Pmf.discrete_gaussian(alphabet, 1.0)
        res = i_project(f0, QFunction.variance(alphabet), 2.0)
        assert res.f_star.variance() == pytest.approx(2.0, abs=1e-9)
        # brute force over the exponential family: lambda1 on a 0.005 grid, lambda2
        # solved so that each member sits exactly on the constraint
        def member(l1, l2):
            logw = np.log(f0.probs) + l1 * a + l2 * a * a
            w = np.exp(logw - logw.max())
            return w / w.sum()

        def var(f):
            return f @ (a * a) - (f @ a) ** 2

        best = math.inf
        l2_scan = np.linspace(0.0, 1.0, 1001)
        for l1 in np.arange(-0.5, 0.5 + 1e-9, 0.005):
            gaps = np.array([var(member(l1, x)) for x in l2_scan]) - 2.0
            up = np.flatnonzero((gaps[:-1] < 0) & (gaps[1:] >= 0))
            if len(up) == 0:
                continue
            lo, hi = l2_scan[up[0]], l2_scan[up[0] + 1]
            f = member(l1, brentq(lambda x: var(member(l1, x)) - 2.0, lo, hi, xtol=1e-14))
            best = min(best, float(np.sum(f * (np.log(f) - np.log(f0.probs)))))
        assert res.kl_value <= best + 1e-9
        assert res.kl_value == pytest.approx(best, abs=1e-3)

    def test_llr_hits_constraint(self):
        f0, f1 = Pmf([0.5, 0.2, 0.3], TERNARY), Pmf([0.1, 0.3, 0.6], TERNARY)
        q = QFunction.llr(f0, f1)
        res = i_project(f0, q, 0.1)
        assert q_eval(q, res.f_star) == pytest.approx(0.1, abs=1e-9)
        oracle = grid_oracle_project(f0, q, 0.1, 0.002)
        assert res.kl_value == pytest.approx(oracle.kl_value, abs=1e-3)

    def test_monotone_in_c(self):
        f0 = Pmf([0.3, 0.3, 0.4], TERNARY)
        for q, cs in [(MEAN_Q, np.linspace(-0.5, 0.95, 40)),
                      (QFunction.variance(TERNARY), np.linspace(0.1, 0.99, 40))]:
            vals = [i_project(f0, q, c).kl_value for c in cs]
            assert np.all(np.diff(vals) >= -1e-12)

    def test_pythagorean(self):
        rng = np.random.default_rng(5)
        f0 = Pmf([0.4, 0.35, 0.25], TERNARY)
        for q, c in [(MEAN_Q, 0.3), (QFunction.variance(TERNARY), 0.8)]:
            star = i_project(f0, q, c)
            checked = 0
            while checked < 200:
                f = random_pmf(rng, 3, TERNARY)
                if q_eval(q, f) < c:
                    continue
                checked += 1
                lhs = kl_divergence(f, f0)
                rhs = kl_divergence(f, star.f_star) + star.kl_value
                assert lhs >= rhs - 1e-9

    def test_result_json(self):
        payload = json.loads(json.dumps(i_project(UNIFORM, MEAN_Q, 0.25).to_dict()))
        assert payload["active"] and len(payload["f_star"]) == 3


class TestReverseProject:
    def test_interior(self):
        f = Pmf([0.1, 0.2, 0.7], TERNARY)
        res = reverse_project(f, MEAN_Q, 0.25)
        assert res.kl_value == 0.0 and res.f_star is f

    def test_binary_closed_form(self):
        res = reverse_project(Pmf([0.5, 0.5], BINARY), QFunction.mean(BINARY), 0.75)
        assert np.allclose(res.f_star.probs, [0.25, 0.75], atol=1e-9)
        assert res.kl_value == pytest.approx(0.5 * math.log(4 / 3), abs=1e-12)

    def test_uniform_against_oracle(self):
        res = reverse_project(UNIFORM, MEAN_Q, 0.25)
        oracle = grid_oracle_project(UNIFORM, MEAN_Q, 0.25, 0.01, "reverse")
        assert res.kl_value == pytest.approx(oracle.kl_value, abs=1e-3)
        assert res.f_star.mean() == pytest.approx(0.25, abs=1e-9)

    def test_mass_spills_to_missing_top_letter(self):
        # the top letter is unseen; the optimum puts the missing mass there
        f = Pmf([0.6, 0.4, 0.0], TERNARY)
        res = reverse_project(f, MEAN_Q, 0.2)
        oracle = grid_oracle_project(f, MEAN_Q, 0.2, 0.001, "reverse")
        assert res.kl_value == pytest.approx(oracle.kl_value, abs=1e-3)
        assert res.f_star.mean() == pytest.approx(0.2, abs=1e-9)
        assert res.f_star.probs[2] > 0

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            reverse_project(UNIFORM, MEAN_Q, 1.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_random_instances_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        f = random_pmf(rng, 3, TERNARY)
        for q, c in [(MEAN_Q, rng.uniform(f.mean(), 0.9)),
                     (QFunction.variance(TERNARY), rng.uniform(f.variance(), 0.95))]:
            fwd = i_project(f, q, c).kl_value
            rev = reverse_project(f, q, c).kl_value
            fwd_oracle = grid_oracle_project(f, q, c, 0.002).kl_value
            rev_oracle = grid_oracle_project(f, q, c, 0.002, "reverse").kl_value
            assert fwd <= fwd_oracle + 1e-9 and fwd == pytest.approx(fwd_oracle, abs=1e-3)
            assert rev <= rev_oracle + 1e-9 and rev == pytest.approx(rev_oracle, abs=1e-3)

    def test_variance_four_letters(self):
        alphabet = Alphabet([-1, 0, 1, 2])
        f = Pmf([0.1, 0.4, 0.4, 0.1], alphabet)
        q = QFunction.variance(alphabet)
        res = reverse_project(f, q, 1.2)
        oracle = grid_oracle_project(f, q, 1.2, 0.005, "reverse")
        assert res.kl_value <= oracle.kl_value + 1e-9
        assert res.kl_value == pytest.approx(oracle.kl_value, abs=1e-3)
        assert res.f_star.variance() >= 1.2 - 1e-9

    def test_batch_matches_pointwise(self):
        rng = np.random.default_rng(11)
        P = rng.dirichlet(np.ones(3), size=40)
        P[::5, 2] = 0.0
        P /= P.sum(axis=1, keepdims=True)
        for q, c in [(MEAN_Q, 0.3), (QFunction.variance(TERNARY), 0.8)]:
            batch = reverse_kl_batch(P, q, c)
            single = [reverse_project(Pmf(p, TERNARY), q, c).kl_value for p in P]
            assert np.allclose(batch, single, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda w: sum(w) > 0.05),
           st.floats(-0.9, 0.9))
    def test_reverse_value_is_feasible_minimum(self, w, c):
        f = Pmf(np.asarray(w) / sum(w), TERNARY)
        res = reverse_project(f, MEAN_Q, c)
        assert res.f_star.mean() >= c - 1e-9
        assert res.kl_value == pytest.approx(kl_divergence(f, res.f_star), abs=1e-9)


class TestGridOracle:
    def test_inactive_returns_near_f0(self):
        f0 = Pmf([0.2, 0.3, 0.5], TERNARY)
        res = grid_oracle_project(f0, MEAN_Q, 0.0, 0.01)
        assert np.allclose(res.f_star.probs, f0.probs, atol=1e-9)

    def test_forward_tilt(self):
        res = grid_oracle_project(UNIFORM, MEAN_Q, 0.25, 0.01)
        assert res.kl_value == pytest.approx(tilt_to_mean(UNIFORM, 0.25).kl_value, abs=1e-3)

    def test_reverse_binary(self):
        res = grid_oracle_project(Pmf([0.5, 0.5], BINARY), QFunction.mean(BINARY), 0.75, 0.001, "reverse")
        assert res.kl_value == pytest.approx(0.1438, abs=1e-4)

    def test_rejects_large_alphabet(self):
        alphabet = Alphabet(range(5))
        with pytest.raises(ValueError):
            grid_oracle_project(Pmf.uniform(alphabet), QFunction.mean(alphabet), 3.0, 0.1)

    @pytest.mark.parametrize("step", [5e-4, 0.2])
    def test_rejects_step(self, step):
        with pytest.raises(ValueError):
            grid_oracle_project(UNIFORM, MEAN_Q, 0.25, step)

    @pytest.mark.parametrize("m, K", [(2, 5), (3, 4), (4, 3)])
    def test_lattice_size(self, m, K):
        pts = simplex_lattice(m, K)
        assert len(pts) == math.comb(K + m - 1, m - 1)
        assert np.all(pts.sum(axis=1) == K)


class TestProjectionCache:
    def test_infeasible_small_n(self):
        cache = ProjectionCache(UNIFORM, MEAN_Q, 10.0)
        assert cache.get(5) is None
        assert cache.get(50).f_star.mean() == pytest.approx(0.2, abs=1e-10)

    def test_concurrent_reads_agree(self):
        cache = ProjectionCache(UNIFORM, MEAN_Q, 5.0)
        seen = {}

        def work(tag):
            seen[tag] = [cache.get(n) for n in range(6, 60)]

        threads = [threading.Thread(target=work, args=(t,)) for t in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for tag in range(1, 4):
            assert all(a is b for a, b in zip(seen[0], seen[tag]))
        assert len(cache) == 54


def test_convergence_error_is_runtime_error():
    assert issubclass(ConvergenceError, RuntimeError)
