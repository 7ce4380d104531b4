import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from popdyn import catastrophe as cat
from popdyn import csbp
from popdyn.kernel import RngStream


class TestFractionLaw:
    def test_rejects_total_kill(self):
        with pytest.raises(ValueError):
            cat.FractionLaw("atoms", atoms=((0.0, 1.0),))

    def test_rejects_trivial_law(self):
        # F == 1 contradicts the standing assumption P(F in (0,1)) > 0
        with pytest.raises(ValueError):
            cat.FractionLaw("atoms", atoms=((1.0, 1.0),))

    def test_beta_moments_against_sampling(self):
        F = cat.FractionLaw("beta", a=2.0, b=3.0)
        gen = RngStream(1).generator()
        draws = F.sample(gen, 200000)
        assert abs(F.mean() - draws.mean()) < 3e-3
        assert abs(F.mean_log() - np.log(draws).mean()) < 5e-3
        assert abs(F.mean_pow(0.7) - (draws ** 0.7).mean()) < 3e-3
        assert abs(F.mean_pow_log(0.7) - ((draws ** 0.7) * np.log(draws)).mean()) < 5e-3
        assert abs(F.mean_log_sq() - (np.log(draws) ** 2).mean()) < 2e-2


class TestSimulation:
    def test_no_catastrophes_reduces_to_plain_diffusion(self):
        env = cat.CatastropheEnv(F=cat.half_law(), tau=0.0)
        grid = np.array([0.0, 1.0])
        ys = cat.catastrophe_batch(0.5, 1.0, env, 1.0, grid, 8000, RngStream(2))
        mech = csbp.feller_mechanism(0.5, 1.0)
        u = csbp.laplace_exponent(mech, 1.0, 1.0).value
        vals = np.exp(-ys[:, -1])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - math.exp(-u)) < 3 * se

    def test_deterministic_halving(self):
        # gamma = 0 makes the path exactly y0 e^{rt} times the product of fractions
        env = cat.CatastropheEnv(F=cat.half_law(), tau=1.0)
        path, ep = cat.simulate_catastrophe_diffusion(0.4, 0.0, env, 1.0, 5.0, 0.05,
                                                      RngStream(3))
        for t, v in zip(path.times, path.values):
            k = np.searchsorted(ep.times, t, side="right")
            expect = math.exp(0.4 * t) * 0.5 ** k
            assert math.isclose(v, expect, rel_tol=1e-12)

    def test_first_moment_ode(self):
        env = cat.CatastropheEnv(F=cat.half_law(), tau=1.0)
        grid = np.array([0.0, 2.0])
        ys = cat.catastrophe_batch(0.3, 1.0, env, 1.0, grid, 30000, RngStream(4))
        target = math.exp((0.3 + 1.0 * (0.5 - 1.0)) * 2.0)
        se = ys[:, -1].std(ddof=1) / math.sqrt(len(ys))
        assert abs(ys[:, -1].mean() - target) < 3 * se

    def test_rescaled_process_mean_flat(self):
        env = cat.CatastropheEnv(F=cat.half_law(), tau=1.5)
        grid = np.linspace(0.0, 2.0, 5)
        ys, Ks = cat.catastrophe_batch(0.6, 1.0, env, 1.0, grid, 30000,
                                       RngStream(5), return_log_env=True)
        ybar = ys * np.exp(-Ks)
        for j in range(1, 5):
            se = ybar[:, j].std(ddof=1) / math.sqrt(len(ybar))
            assert abs(ybar[:, j].mean() - 1.0) < 3 * se

    def test_state_dependent_rate_thinning(self):
        env = cat.CatastropheEnv(F=cat.half_law(), tau=lambda y: min(y, 2.0),
                                 tau_bound=2.0, monotonicity="non_decreasing")
        path, ep = cat.simulate_catastrophe_diffusion(0.5, 0.5, env, 1.0, 4.0, 0.05,
                                                      RngStream(6))
        assert len(ep.times) >= 0  # runs without bound violations

    def test_unbounded_rate_rejected(self):
        with pytest.raises(ValueError):
            cat.CatastropheEnv(F=cat.half_law(), tau=lambda y: y)


class TestQuenchedLaplace:
    def test_time_zero(self):
        ep = cat.EnvPath(r=0.3, times=np.empty(0), fractions=np.empty(0), horizon=1.0)
        assert cat.quenched_laplace(0.3, 1.0, ep, 2.0, 0.7, 0.0) == math.exp(-0.7 * 2.0)

    def test_no_catastrophes_reduces_to_feller_form(self):
        ep = cat.EnvPath(r=0.0, times=np.empty(0), fractions=np.empty(0), horizon=5.0)
        lam, y0, t, gam = 0.8, 1.5, 2.0, 1.0
        val = cat.quenched_laplace(0.0, gam, ep, y0, lam, t)
        u = lam / (gam * lam * t + 1.0)  # critical-case exponent flow
        assert math.isclose(val, math.exp(-y0 * u), rel_tol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(hst.integers(0, 10 ** 6), hst.floats(0.05, 3.0), hst.floats(0.05, 3.0),
           hst.floats(0.05, 3.0), hst.floats(0.2, 4.0))
    def test_multiplicative_in_start(self, seed, y1, y2, lam, t):
        gen = RngStream(seed).generator()
        ep = cat.sample_env(0.4, 1.2, cat.half_law(), 4.0, gen)
        v = cat.quenched_laplace(0.4, 1.0, ep, y1 + y2, lam, t)
        v12 = (cat.quenched_laplace(0.4, 1.0, ep, y1, lam, t)
               * cat.quenched_laplace(0.4, 1.0, ep, y2, lam, t))
        assert math.isclose(v, v12, rel_tol=1e-12)

    def test_annealed_equals_mean_quenched(self):
        F = cat.half_law()
        env = cat.CatastropheEnv(F=F, tau=1.0)
        t, lam = 1.5, 0.9
        ys, Ks = cat.catastrophe_batch(0.3, 1.0, env, 1.0, np.array([0.0, t]),
                                       20000, RngStream(7), return_log_env=True)
        mc = np.exp(-lam * np.exp(-Ks[:, -1]) * ys[:, -1])
        gen = RngStream(8).generator()
        qs = np.array([cat.quenched_laplace(0.3, 1.0, cat.sample_env(0.3, 1.0, F, t, gen),
                                            1.0, lam, t) for _ in range(20000)])
        se = math.hypot(mc.std(ddof=1) / math.sqrt(len(mc)),
                        qs.std(ddof=1) / math.sqrt(len(qs)))
        assert abs(mc.mean() - qs.mean()) < 3 * se

    def test_integral_dichotomy(self):
        # subcritical log-scale drift: the exponential integral keeps growing;
        # supercritical: it stabilizes
        F = cat.half_law()
        gen = RngStream(9).generator()
        grow, stab = [], []
        for _ in range(200):
            sub = cat.sample_env(0.2, 1.0, F, 120.0, gen)
            sup = cat.sample_env(1.4, 1.0, F, 120.0, gen)
            grow.append(sub.int_exp_neg_K(120.0) / sub.int_exp_neg_K(60.0))
            stab.append(sup.int_exp_neg_K(120.0) / sup.int_exp_neg_K(60.0))
        assert np.median(grow) > 10.0
        assert np.median(stab) < 1.05


class TestCriteriaAndRegimes:
    def test_constant_rate_criterion(self):
        F = cat.half_law()
        env = cat.CatastropheEnv(F=F, tau=1.0)
        assert cat.extinction_criterion(0.1, env) == "a.s.-absorption"
        assert cat.extinction_criterion(1.0, env) == "survival-possible"

    def test_monotone_rates(self):
        F = cat.half_law()
        inc = cat.CatastropheEnv(F=F, tau=lambda y: 2.0 * y / (1.0 + y),
                                 tau_bound=2.0, monotonicity="non_decreasing")
        # criterion holds at large y: absorption
        assert cat.extinction_criterion(0.5, inc) == "a.s.-absorption"
        # above the supremum: survival
        assert cat.extinction_criterion(2.0, inc) == "survival-possible"
        # the open band in between stays undetermined
        env_band = cat.CatastropheEnv(F=F, tau=lambda y: 2.0 - 1.0 / (1.0 + y),
                                      tau_bound=2.0, monotonicity="non_decreasing")
        assert cat.extinction_criterion(2.0 * math.log(2.0), env_band) == "undetermined"
        dec = cat.CatastropheEnv(F=F, tau=lambda y: 1.0 + 1.0 / (1.0 + y),
                                 tau_bound=2.0, monotonicity="non_increasing")
        assert cat.extinction_criterion(0.5, dec) == "a.s.-absorption"
        assert cat.extinction_criterion(0.8, dec) == "survival-possible"

    def test_regime_signs(self):
        F = cat.half_law()
        assert cat.regime_classify(-0.1, 1.0, F).regime == "strongly_subcritical"
        assert abs(cat.regime_classify(-0.1, 1.0, F).exponent - (-0.6)) < 1e-12
        mid = cat.regime_classify(0.5 * math.log(2.0), 1.0, F)
        assert mid.regime == "intermediate_subcritical"
        weak = cat.regime_classify(0.5, 1.0, F)
        assert weak.regime == "weakly_subcritical"
        assert abs(weak.chi - 0.4712336) < 1e-5
        assert cat.regime_classify(math.log(2.0), 1.0, F).regime == "critical"
        assert cat.regime_classify(1.0, 1.0, F).regime == "supercritical"

    def test_supercritical_plateau_matches_limit(self):
        F = cat.half_law()
        env = cat.CatastropheEnv(F=F, tau=1.0)
        grid = np.linspace(0.0, 40.0, 21)
        ys = cat.catastrophe_batch(1.0, 1.0, env, 1.0, grid, 30000, RngStream(10))
        p_inf = np.mean(ys[:, -1] > 0)
        lim, lse = cat.supercritical_survival_limit(1.0, 1.0, 1.0, F, 1.0, 10000,
                                                    80.0, RngStream(11))
        se = math.hypot(math.sqrt(p_inf * (1 - p_inf) / len(ys)), lse)
        assert abs(p_inf - lim) < 4 * se
