import math

import numpy as np
import pytest
from scipy import stats as sstats

from popdyn import bd
from popdyn.kernel import RngStream


class TestRateSpec:
    def test_bound_violation_rejected(self):
        with pytest.raises(ValueError):
            bd.RateSpec(lam=lambda n: 10.0 * np.asarray(n, dtype=float),
                        mu=lambda n: 0.0 * np.asarray(n, dtype=float),
                        lam_bar=1.0, mu_bar=1.0)

    def test_death_from_zero_rejected(self):
        with pytest.raises(ValueError):
            bd.RateSpec(lam=lambda n: np.asarray(n, dtype=float),
                        mu=lambda n: np.asarray(n, dtype=float) + 1.0,
                        lam_bar=1.0, mu_bar=2.0)

    def test_immigration_not_absorbing(self):
        spec = bd.immigration_rates(2.0, 1.0)
        assert not spec.absorbing_at_zero()
        assert bd.linear_rates(1.0, 1.0).absorbing_at_zero()


class TestSimulate:
    def test_absorbing_start(self):
        tr = bd.simulate_bd(bd.linear_rates(1.0, 1.0), 0, 5.0, RngStream(1))
        assert tr.absorbed and np.all(tr.states == 0)

    def test_yule_mean_growth(self):
        spec = bd.yule_rates(0.8)
        gen = RngStream(2).generator()
        finals = np.array([bd.simulate_bd(spec, 3, 2.0, gen).states[-1]
                           for _ in range(2000)], dtype=float)
        target = 3 * math.exp(0.8 * 2.0)
        se = finals.std(ddof=1) / math.sqrt(len(finals))
        assert abs(finals.mean() - target) < 3 * se

    def test_logistic_always_absorbed(self):
        spec = bd.logistic_rates(1.0, 1.0, 1.0)
        gen = RngStream(3).generator()
        for _ in range(300):
            tr = bd.simulate_bd(spec, 5, 1e6, gen)
            assert tr.absorbed

    def test_event_cap_sets_explosion_flag(self):
        tr = bd.simulate_bd(bd.yule_rates(5.0), 1, 100.0, RngStream(4), event_cap=50)
        assert tr.exploded

    def test_holding_times_exponential(self):
        spec = bd.linear_rates(1.0, 0.7)
        gen = RngStream(5).generator()
        holds = np.concatenate([bd.simulate_bd(spec, 4, 20.0, gen).holding_times(4)
                                for _ in range(600)])
        res = sstats.kstest(holds, "expon", args=(0, 1.0 / (4 * 1.7)))
        assert res.pvalue > 0.01

    def test_batch_matches_single_law(self):
        spec = bd.linear_rates(0.9, 1.0)
        grid = np.array([0.0, 1.0, 2.0])
        batch = bd.simulate_bd_batch(spec, 5, grid, 4000, RngStream(6))
        gen = RngStream(7).generator()
        singles = np.array([bd.simulate_bd(spec, 5, 2.0, gen).value_at(2.0)
                            for _ in range(4000)])
        res = sstats.ks_2samp(batch.states[:, -1], singles)
        assert res.pvalue > 0.01

    def test_martingale_and_quadratic_variation(self):
        spec = bd.linear_rates(1.0, 0.8)
        gen = RngStream(8).generator()
        t_end = 1.5
        mart = np.empty(4000)
        qv = np.empty(4000)
        for i in range(4000):
            tr = bd.simulate_bd(spec, 5, t_end, gen)
            drift = tr.integrate(lambda z: spec.lam(z) - spec.mu(z), t_end)
            mart[i] = tr.value_at(t_end) - 5 - drift
            qv[i] = tr.integrate(lambda z: spec.lam(z) + spec.mu(z), t_end)
        se = mart.std(ddof=1) / math.sqrt(len(mart))
        assert abs(mart.mean()) < 3 * se
        assert abs(np.var(mart, ddof=1) / qv.mean() - 1.0) < 0.05


class TestExplosionSeries:
    def test_linear_birth_diverges(self):
        assert bd.check_explosion(bd.yule_rates(2.0), 4000).verdict == "diverges"
        assert bd.check_explosion(bd.linear_rates(1.0, 1.0), 4000).verdict == "diverges"

    def test_quadratic_birth_converges(self):
        spec = bd.RateSpec(lam=lambda n: np.asarray(n, dtype=float) ** 2,
                           mu=lambda n: 0.0 * np.asarray(n, dtype=float),
                           lam_bar=25000.0, mu_bar=1e-12)
        rep = bd.check_explosion(spec, 4000)
        assert rep.verdict == "converges"
        assert rep.partial_sums[-1] < math.pi ** 2 / 6  # p-series partial sums

    def test_logistic_diverges(self):
        assert bd.check_explosion(bd.logistic_rates(1, 1, 1), 2000).verdict == "diverges"

    def test_zero_birth_rejected(self):
        spec = bd.RateSpec(lam=lambda n: np.where(np.asarray(n) == 3, 0.0, np.asarray(n, dtype=float)),
                           mu=lambda n: 0.0 * np.asarray(n, dtype=float),
                           lam_bar=1.0, mu_bar=1e-12)
        with pytest.raises(ValueError, match="lam"):
            bd.check_explosion(spec, 100)


class TestExtinctionProb:
    def test_state_zero(self):
        assert bd.extinction_prob(bd.linear_rates(2.0, 1.0), 0).value == 1.0

    def test_supercritical_linear_power(self):
        spec = bd.linear_rates(1.5, 1.0)
        for i in (1, 2, 3, 6):
            assert abs(bd.extinction_prob(spec, i).value - (2.0 / 3.0) ** i) < 1e-9

    def test_subcritical_and_critical_certain(self):
        assert bd.extinction_prob(bd.linear_rates(0.8, 1.0), 4).value == 1.0
        assert bd.extinction_prob(bd.linear_rates(1.0, 1.0), 4).value == 1.0

    def test_mc_agreement_for_shipped_presets(self):
        spec = bd.linear_rates(1.3, 1.0)
        target = bd.extinction_prob(spec, 2).value
        batch = bd.simulate_bd_batch(spec, 2, np.array([0.0, 50.0]), 20000,
                                     RngStream(9), state_cap=200)
        freq = np.mean(batch.absorbed)
        se = math.sqrt(target * (1 - target) / 20000)
        assert abs(freq - target) < 3 * se


class TestExtinctionTimes:
    def test_zero_start(self):
        assert bd.mean_extinction_time(bd.logistic_rates(1, 1, 1), 0).value == 0.0

    def test_refuses_supercritical(self):
        with pytest.raises(ValueError, match="diverge"):
            bd.mean_extinction_time(bd.linear_rates(2.0, 1.0), 1)

    def test_logistic_matches_mc(self):
        spec = bd.logistic_rates(1.0, 1.0, 1.0)
        val = bd.mean_extinction_time(spec, 1, 400).value
        gen = RngStream(10).generator()
        t0s = np.array([bd.simulate_bd(spec, 1, 1e9, gen).times[-1] for _ in range(6000)])
        se = t0s.std(ddof=1) / math.sqrt(len(t0s))
        assert abs(t0s.mean() - val) < 3 * se

    def test_higher_moments_busy_period_closed_form(self):
        # constant rates away from 0 reduce to the classical queue busy period
        lam0, mu0 = 0.5, 1.0
        spec = bd.RateSpec(lam=lambda n: np.where(np.asarray(n) >= 1, lam0, 0.0),
                           mu=lambda n: np.where(np.asarray(n) >= 1, mu0, 0.0),
                           lam_bar=lam0, mu_bar=mu0)
        m2, m3 = bd.extinction_time_higher_moments(spec, 1, 3000)
        rho = lam0 / mu0
        assert math.isclose(m2.value, 2 / (mu0 ** 2 * (1 - rho) ** 3), rel_tol=1e-9)
        assert math.isclose(m3.value, 6 * (1 + rho) / (mu0 ** 3 * (1 - rho) ** 5), rel_tol=1e-9)

    def test_higher_moments_match_mc(self):
        spec = bd.linear_rates(0.6, 1.0)
        n = 2
        m2, m3 = bd.extinction_time_higher_moments(spec, n, 3000)
        assert m2.value > bd.mean_extinction_time(spec, n + 1).value ** 2 * 0  # variance > 0
        gen = RngStream(11).generator()
        times = []
        for _ in range(8000):
            tr = bd.simulate_bd(spec, n + 1, 1e9, gen)
            hit = np.nonzero(tr.states == n)[0]
            times.append(tr.times[hit[0]])
        times = np.array(times)
        se2 = (times ** 2).std(ddof=1) / math.sqrt(len(times))
        se3 = (times ** 3).std(ddof=1) / math.sqrt(len(times))
        assert abs((times ** 2).mean() - m2.value) < 3 * se2
        assert abs((times ** 3).mean() - m3.value) < 3 * se3

    def test_variance_positive(self):
        spec = bd.linear_rates(0.5, 1.0)
        m2, _ = bd.extinction_time_higher_moments(spec, 1)
        # first moment of the same passage time (from 2 down to 1) by telescoping
        e = bd.mean_extinction_time(spec, 2).value - bd.mean_extinction_time(spec, 1).value
        # holding times are exponential, the passage time is never deterministic
        assert m2.value - e * e > 0


class TestInvariantMeasure:
    def test_immigration_poisson(self):
        im = bd.invariant_measure(bd.immigration_rates(2.0, 1.0), 60, tol=1e-8)
        assert im.verdict == "normalizable"
        target = sstats.poisson.pmf(np.arange(61), 2.0)
        assert np.max(np.abs(im.weights - target)) < 1e-8

    def test_yule_not_normalizable(self):
        assert bd.invariant_measure(bd.yule_rates(1.0), 300).verdict == "not_normalizable"

    def test_absorbing_degenerate(self):
        im = bd.invariant_measure(bd.linear_rates(0.5, 1.0), 50)
        assert im.verdict == "degenerate"
        assert im.weights[0] == 1.0

    def test_small_statespace_rejected(self):
        with pytest.raises(ValueError):
            bd.invariant_measure(bd.immigration_rates(1.0, 1.0), 1)
