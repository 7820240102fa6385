import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaincc
from scipy.stats import chi2

from oracles import brier_loop, concordance_pairs, ici_loop, pseudo_value_loop
from probsurv.coxcore import CurveSet, SurvivalCurve, TimeGrid
from probsurv.evalmetrics import (
    MetricError,
    MetricReport,
    c_calibration,
    chi_square_p,
    compute_report,
    concordance_td,
    coverage_counts,
    d_calibration,
    ici,
    integrated_brier,
    mae_hinge,
    mae_pseudo_obs,
    pseudo_observations,
    regularized_upper_gamma,
    reports_to_csv,
)


def _random_case(rng, n=12, k=8, cens=0.4):
    grid = np.sort(rng.choice(np.arange(1, 40), k, replace=False)).astype(float)
    S = np.sort(rng.uniform(0, 1, (n, k)), axis=1)[:, ::-1].copy()
    times = rng.uniform(0.5, 42, n)
    events = (rng.uniform(size=n) > cens).astype(int)
    events[0] = 1
    return grid, S, times, events


class TestChiSquare:
    def test_zero_statistic(self):
        assert chi_square_p(0.0, 5) == 1.0

    def test_dof_two_closed_form(self):
        assert chi_square_p(2.0, 2) == pytest.approx(0.367879, abs=1e-6)
        for s in [0.01, 0.5, 3.0, 10.0, 40.0]:
            assert abs(chi_square_p(s, 2) - math.exp(-s / 2)) < 1e-8

    def test_critical_value(self):
        assert abs(chi_square_p(16.919, 9) - 0.050) < 0.001

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 300), st.integers(1, 60))
    def test_reference_oracle(self, s, dof):
        assert abs(chi_square_p(s, dof) - chi2.sf(s, dof)) < 1e-8

    def test_gamma_oracle(self):
        for a in [0.5, 1.0, 4.5, 20.0]:
            for x in [0.1, 1.0, 5.0, 30.0]:
                assert regularized_upper_gamma(a, x) == pytest.approx(gammaincc(a, x), abs=1e-12)

    def test_monotone(self):
        ps = [chi_square_p(s, 9) for s in np.linspace(0, 50, 101)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            chi_square_p(-1.0, 3)
        with pytest.raises(ValueError):
            chi_square_p(1.0, 0)


class TestConcordance:
    def _pair(self, s_low, s_high):
        grid = TimeGrid([1.0, 2.0])
        return CurveSet(grid, [[s_low, s_low], [s_high, s_high]])

    def test_single_concordant(self):
        assert concordance_td(self._pair(0.3, 0.8), [1.0, 2.0], [1, 1]) == 1.0

    def test_anti_ranked(self):
        assert concordance_td(self._pair(0.8, 0.3), [1.0, 2.0], [1, 1]) == 0.0

    def test_tie_counts_half(self):
        assert concordance_td(self._pair(0.5, 0.5), [1.0, 2.0], [1, 1]) == 0.5

    def test_pair_enumeration(self, rng):
        for _ in range(50):
            grid, S, t, e = _random_case(rng)
            conc, comp = concordance_pairs(grid, S, t, e)
            if comp == 0:
                continue
            assert concordance_td(CurveSet(TimeGrid(grid), S), t, e) == conc / comp

    def test_list_of_curves(self, rng):
        grid, S, t, e = _random_case(rng)
        curves = [SurvivalCurve(TimeGrid(grid), s) for s in S]
        assert concordance_td(curves, t, e) == concordance_td(CurveSet(TimeGrid(grid), S), t, e)

    def test_monotone_transform_invariance(self, rng):
        grid, S, t, e = _random_case(rng, n=30)
        cs = CurveSet(TimeGrid(grid), S)
        assert concordance_td(CurveSet(TimeGrid(grid), S**3), t, e) == concordance_td(cs, t, e)

    def test_permutation_invariance(self, rng):
        grid, S, t, e = _random_case(rng, n=30)
        p = rng.permutation(30)
        a = concordance_td(CurveSet(TimeGrid(grid), S), t, e)
        assert concordance_td(CurveSet(TimeGrid(grid), S[p]), t[p], e[p]) == a

    def test_no_comparable_pairs(self):
        with pytest.raises(MetricError):
            concordance_td(CurveSet(TimeGrid([1.0]), [[0.5], [0.4]]), [1.0, 2.0], [0, 0])


class TestBrier:
    def test_perfect_steps(self):
        t = np.array([1.0, 2.0, 3.0, 4.0])
        grid = TimeGrid(t)
        S = (grid.times[None, :] < t[:, None]).astype(float)
        assert integrated_brier(CurveSet(grid, S), t, np.ones(4)) == 0.0

    def test_constant_half(self, rng):
        grid, _, t, e = _random_case(rng)
        S = np.full((len(t), len(grid)), 0.5)
        assert integrated_brier(CurveSet(TimeGrid(grid), S), t, e, grid) == 0.25

    def test_double_sum_oracle(self, rng):
        for n in (6, 15):
            grid, S, t, e = _random_case(rng, n=n)
            ev = np.unique(rng.uniform(1, 35, 10))
            got = integrated_brier(CurveSet(TimeGrid(grid), S), t, e, ev)
            assert abs(got - brier_loop(grid, S, t, e, ev)) < 1e-12

    def test_ipcw_matches_plain_without_censoring(self, rng):
        grid, S, t, _ = _random_case(rng, n=20)
        e = np.ones(20, dtype=int)
        cs = CurveSet(TimeGrid(grid), S)
        ev = grid[grid < t.max()]
        assert integrated_brier(cs, t, e, ev, ipcw=True) == pytest.approx(integrated_brier(cs, t, e, ev), abs=1e-12)

    def test_empty_grid(self, rng):
        grid, S, t, e = _random_case(rng)
        with pytest.raises(MetricError):
            integrated_brier(CurveSet(TimeGrid(grid), S), t, e, np.array([]))


class TestMae:
    def test_hinge_cases(self):
        assert mae_hinge([7.0], [10.0], [1]) == 3.0
        assert mae_hinge([12.0], [10.0], [0]) == 0.0
        assert mae_hinge([7.0], [10.0], [0]) == 3.0

    def test_no_censoring_pseudo_identity(self, rng):
        t = rng.exponential(2.0, 25)
        np.testing.assert_allclose(pseudo_observations(t, np.ones(25)), t, rtol=1e-10)
        pred = rng.exponential(2.0, 25)
        assert mae_pseudo_obs(pred, t, np.ones(25)) == pytest.approx(np.mean(np.abs(pred - t)), abs=1e-12)

    def test_leave_one_out_oracle_small(self):
        t = [2.0, 5.0, 3.0, 7.0]
        e = [1, 0, 1, 1]
        assert abs(pseudo_observations(t, e, [1])[0] - pseudo_value_loop(t, e, 1)) < 1e-10

    def test_leave_one_out_oracle_random(self, rng):
        for _ in range(10):
            n = int(rng.integers(4, 30))
            t = rng.integers(1, 10, n).astype(float)
            e = rng.integers(0, 2, n)
            e[0] = 1
            pv = pseudo_observations(t, e)
            ref = [pseudo_value_loop(list(t), list(e), i) for i in range(n)]
            np.testing.assert_allclose(pv, ref, rtol=0, atol=1e-10)
            pred = rng.uniform(0, 10, n)
            target = np.where(e == 1, t, ref)
            assert abs(mae_pseudo_obs(pred, t, e) - np.mean(np.abs(pred - target))) < 1e-10

    def test_all_censored(self):
        with pytest.raises(MetricError):
            mae_pseudo_obs([1.0, 2.0], [1.0, 2.0], [0, 0])


class TestIci:
    def test_perfect(self):
        t = np.arange(1.0, 11.0)
        e = np.ones(10)
        # every record in its own group; observed proportion by t*=5.5 is 1 for t<=5
        probs = np.where(t <= 5.5, 1.0, 0.0) + np.linspace(0, 1e-9, 10)
        assert ici(probs, t, e, 5.5) < 1e-8

    def test_single_group(self):
        t = np.arange(1.0, 11.0)
        assert ici(np.full(10, 0.7), t, np.ones(10), 5.5) == pytest.approx(0.2)

    def test_decile_oracle(self, rng):
        for _ in range(10):
            n = 60
            t = rng.exponential(1, n)
            e = rng.integers(0, 2, n)
            p = rng.uniform(0, 1, n)
            t_star = float(np.median(t))
            assert abs(ici(p, t, e, t_star) - ici_loop(p, t, e, t_star)) < 1e-12

    def test_default_t_star(self, rng):
        t = rng.exponential(1, 40)
        e = rng.integers(0, 2, 40)
        p = rng.uniform(size=40)
        assert ici(p, t, e) == ici(p, t, e, float(np.median(t)))

    def test_empty(self):
        with pytest.raises(MetricError):
            ici([], [], [])


class TestDCalibration:
    def test_uniform(self):
        s = (np.arange(100) + 0.5) / 100
        res = d_calibration(s, np.ones(100), np.ones(100))
        assert res.statistic == pytest.approx(0.0, abs=1e-12) and res.p_value == 1.0

    def test_one_bin(self):
        res = d_calibration(np.full(100, 0.95), np.ones(100), np.ones(100))
        assert res.statistic == pytest.approx(900.0)
        assert res.p_value < 1e-6 and res.dof == 9

    def test_censored_mass_conserved(self, rng):
        s = rng.uniform(0, 1, 50)
        e = rng.integers(0, 2, 50)
        res = d_calibration(s, np.ones(50), e)
        counts = self._counts(s, e)
        assert counts.sum() == pytest.approx(50.0)
        assert res.statistic == pytest.approx(np.sum((counts - 5.0) ** 2 / 5.0))

    @staticmethod
    def _counts(s, e, n_bins=10):
        counts = np.zeros(n_bins)
        for si, ei in zip(s, e):
            b = min(int(si * n_bins), n_bins - 1)
            if ei:
                counts[b] += 1
            else:
                counts[b] += (si - b / n_bins) / si
                counts[:b] += 1 / (n_bins * si)
        return counts

    def test_curves_input(self):
        grid = TimeGrid([1.0, 2.0, 3.0])
        cs = CurveSet(grid, np.tile([0.9, 0.5, 0.1], (20, 1)))
        t = np.repeat([1.0, 2.0, 3.0, 2.5], 5)
        direct = d_calibration(cs.at(t), t, np.ones(20))
        assert d_calibration(cs, t, np.ones(20)) == direct

    def test_too_few(self):
        with pytest.raises(MetricError):
            d_calibration(np.full(5, 0.5), np.ones(5), np.ones(5))


class TestCCalibration:
    def test_exact_coverage(self):
        levels = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
        # draws 0..100 for everyone; individual k sits just inside the k-th
        # level's interval, so level j covers exactly j individuals
        draws = np.tile(np.linspace(0, 100, 101)[:, None], (1, 10))
        times = np.array([50.0] + [50.0 + 5.0 * k + 2.5 for k in range(1, 10)])
        res = c_calibration(draws, times, np.ones(10), levels)
        np.testing.assert_array_equal(coverage_counts(draws, times, levels), np.arange(1, 10))
        assert res.statistic == 0.0 and res.p_value == 1.0

    def test_zero_coverage(self, rng):
        draws = rng.uniform(0, 1, (100, 200))
        res = c_calibration(draws, np.full(200, 5.0), np.ones(200))
        assert res.statistic == pytest.approx(900.0)
        assert res.p_value < 1e-6 and res.dof == 9

    def test_uncensored_only(self, rng):
        draws = rng.uniform(0, 1, (100, 30))
        t = rng.uniform(0, 1, 30)
        e = rng.integers(0, 2, 30)
        e[0] = 1
        a = c_calibration(draws, t, e)
        b = c_calibration(draws[:, e == 1], t[e == 1], np.ones(int(e.sum())))
        assert a == b

    def test_errors(self, rng):
        with pytest.raises(MetricError):
            c_calibration(rng.uniform(size=(100, 5)), np.ones(5), np.zeros(5))
        with pytest.raises(MetricError):
            c_calibration(rng.uniform(size=(10, 5)), np.ones(5), np.ones(5))


class TestReport:
    def test_fields_and_serialization(self, rng):
        grid, S, t, e = _random_case(rng, n=40)
        cs = CurveSet(TimeGrid(grid), S)
        pred = rng.uniform(1, 30, 40)
        rep = compute_report(cs, pred, t, e, grid)
        d = rep.to_dict()
        assert list(d) == ["ci_td", "mae_hinge", "mae_po", "ibs", "ici", "dcal_p", "ccal_p"]
        assert d["ccal_p"] is None
        assert all(math.isfinite(v) for k, v in d.items() if k != "ccal_p")
        assert json.loads(rep.to_json()) == d
        rep2 = compute_report(cs, pred, t, e, grid, time_draws=rng.uniform(0, 40, (60, 40)))
        assert 0.0 <= rep2.ccal_p <= 1.0
        text = reports_to_csv([("a", rep), ("b", rep2)])
        lines = text.splitlines()
        assert lines[0] == "model,ci_td,mae_hinge,mae_po,ibs,ici,dcal_p,ccal_p"
        assert lines[1].endswith(",") and len(lines) == 3

    def test_permutation_invariance(self, rng):
        grid, S, t, e = _random_case(rng, n=40)
        pred = rng.uniform(1, 30, 40)
        p = rng.permutation(40)
        a = compute_report(CurveSet(TimeGrid(grid), S), pred, t, e, grid)
        b = compute_report(CurveSet(TimeGrid(grid), S[p]), pred[p], t[p], e[p], grid)
        for k in MetricReport.COLUMNS[:-1]:
            assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-12, abs=1e-15)
