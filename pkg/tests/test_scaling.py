import math

import numpy as np
import pytest

from popdyn import csbp, scaling
from popdyn.kernel import RngStream


class TestLimitOde:
    def test_zero_start_stays_zero(self):
        _, xs = scaling.integrate_limit_ode(lambda x: 2.0, lambda x: 1.0, 0.0, 5.0, 0.01)
        assert np.all(xs == 0.0)

    def test_malthus_closed_form(self):
        ts, xs = scaling.integrate_limit_ode(lambda x: 2.0, lambda x: 1.0, 1.0, 5.0, 1e-3)
        assert np.max(np.abs(xs - np.exp(ts))) < 1e-8 * math.exp(5)

    def test_logistic_carrying_capacity(self):
        _, xs = scaling.integrate_limit_ode(lambda x: 2.0, lambda x: 1.0 + 0.5 * x,
                                            0.25, 40.0, 1e-3)
        assert abs(xs[-1] - scaling.logistic_carrying_capacity(2.0, 1.0, 0.5)) < 1e-6

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            scaling.integrate_limit_ode(lambda x: 1.0, lambda x: 1.0, 1.0, 1.0, 0.0)


class TestLogisticFeller:
    def test_gamma_zero_tracks_ode(self):
        path = scaling.simulate_logistic_feller(0.0, 2.0, 1.0, 0.5, 1.0, 5.0, 1e-3,
                                                RngStream(1))
        _, xs = scaling.integrate_limit_ode(lambda x: 2.0, lambda x: 1.0 + 0.5 * x,
                                            1.0, 5.0, 1e-3)
        assert np.max(np.abs(path.values - xs)) < 0.05

    def test_competition_forces_absorption(self):
        vals = scaling.logistic_feller_batch(1.0, 1.0, 1.0, 1.0, 0.5, 60.0, 0.01,
                                             400, RngStream(2))
        assert np.mean(vals[:, -1] == 0.0) > 0.95
        # absorbed paths freeze at exactly zero
        dead = vals[:, -1] == 0.0
        assert np.all(vals[dead, -1] == 0.0)

    def test_feller_laplace_matches_exponent_ode(self):
        gam, lam0, mu0 = 1.0, 1.5, 1.0
        vals = scaling.logistic_feller_batch(gam, lam0, mu0, 0.0, 1.0, 1.0, 5e-4,
                                             6000, RngStream(3))
        mech = csbp.feller_mechanism(lam0 - mu0, gam)
        for lp in (0.5, 2.0):
            u = csbp.laplace_exponent(mech, 1.0, lp).value
            mc = np.exp(-lp * vals[:, -1])
            se = mc.std(ddof=1) / math.sqrt(len(mc))
            assert abs(mc.mean() - math.exp(-u)) < 3 * se

    def test_moment_identity(self):
        # d/dt E X = E[X(lam-mu) - c X^2]
        gam, lam0, mu0, c0 = 0.5, 2.0, 1.0, 0.5
        step, T = 1e-3, 1.0
        vals = scaling.logistic_feller_batch(gam, lam0, mu0, c0, 1.0, T, step,
                                             4000, RngStream(4))
        drift = (lam0 - mu0) * vals - c0 * vals ** 2
        integral = np.sum(0.5 * step * (drift[:, 1:] + drift[:, :-1]), axis=1)
        resid = vals[:, -1] - vals[:, 0] - integral
        se = resid.std(ddof=1) / math.sqrt(len(resid))
        assert abs(resid.mean()) < 3 * se


class TestConvergenceHarness:
    LAM = staticmethod(lambda x: np.full_like(np.asarray(x, dtype=float), 2.0))
    MU = staticmethod(lambda x: 1.0 + 0.5 * np.asarray(x, dtype=float))

    def test_distances_decrease(self):
        rows = scaling.convergence_harness(self.LAM, self.MU, 2.0, 1.5, 1.0, 5.0,
                                           Ks=[20, 80, 320], n_rep=80,
                                           rng=RngStream(5))
        assert rows[0].distance > rows[1].distance > rows[2].distance
        assert rows[0].distance - rows[2].distance > 2 * math.hypot(rows[0].stderr,
                                                                    rows[2].stderr)

    def test_limit_against_itself_is_zero(self):
        ts, xs = scaling.integrate_limit_ode(lambda x: 2.0, lambda x: 1.0 + 0.5 * x,
                                             1.0, 5.0, 1e-3)
        assert np.max(np.abs(xs - xs)) == 0.0

    def test_accelerated_fluctuations_persist(self):
        rows = scaling.convergence_harness(self.LAM, self.MU, 2.0, 1.5, 1.0, 3.0,
                                           Ks=[20, 80, 320], n_rep=60,
                                           rng=RngStream(6),
                                           accelerated=(1.0, 2.0, 1.0, 0.5))
        # diffusive limit: the distance to the deterministic path stays macroscopic
        assert rows[-1].distance > 10 * rows[-1].stderr
        assert rows[-1].distance > 0.3 * rows[0].distance


class TestRandomEnv:
    def test_sigma_zero_reduces_to_ode(self):
        pe = scaling.random_env_paths(1.0, 0.5, 0.0, 0.3, 5.0, 1e-3, RngStream(7))
        _, xs = scaling.integrate_limit_ode(lambda x: 1.0, lambda x: 0.5 * x,
                                            0.3, 5.0, 1e-3)
        assert np.max(np.abs(pe.numeric[0] - xs)) < 1e-2
        assert np.max(np.abs(pe.exact[0] - xs)) < 1e-2

    def test_strong_order_half(self):
        errs = []
        for step in (0.02, 0.005, 0.00125):
            pe = scaling.random_env_paths(1.0, 1.0, 1.0, 0.5, 4.0, step,
                                          RngStream(8), n_rep=8)
            errs.append(np.mean(np.max(np.abs(pe.numeric - pe.exact), axis=1)))
        assert errs[0] > errs[1] > errs[2]
        assert errs[0] / errs[2] > 2.5  # about 4x for order 1/2 over a 16x refinement

    def test_stationary_moments(self):
        k, theta = scaling.stationary_gamma_params(1.0, 1.0, 1.0)
        assert (k, theta) == (1.0, 0.5)
        pe = scaling.random_env_paths(1.0, 1.0, 1.0, 0.5, 150.0, 0.005,
                                      RngStream(9), n_rep=16)
        burn = int(0.2 * pe.numeric.shape[1])
        pool = pe.numeric[:, burn:].ravel()
        assert abs(pool.mean() - 0.5) < 0.05 * 0.5
        assert abs(pool.var() - 0.25) < 0.10 * 0.25

    def test_trichotomy(self):
        # negative long-run growth drives the state to 0
        pe = scaling.random_env_paths(0.3, 1.0, 1.0, 1.0, 60.0, 0.01,
                                      RngStream(10), n_rep=24)
        assert np.median(pe.numeric[:, -1]) < 1e-3
        # positive growth: time averages near the stationary mean
        pe2 = scaling.random_env_paths(1.0, 1.0, 1.0, 1.0, 200.0, 0.005,
                                       RngStream(11), n_rep=8)
        burn = int(0.2 * pe2.numeric.shape[1])
        avg = pe2.numeric[:, burn:].mean()
        assert abs(avg - 0.5) < 0.05 * 0.5

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            scaling.random_env_paths(1.0, 1.0, 1.0, 0.0, 1.0, 0.01, RngStream(12))
        with pytest.raises(ValueError):
            scaling.stationary_gamma_params(0.4, 1.0, 1.0)
