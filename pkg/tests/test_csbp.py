import math

import numpy as np
import pytest
from scipy import stats as sstats

from popdyn import csbp
from popdyn.kernel import RngStream


def riccati_u(r, gamma, t, lam):
    """Closed-form flow of du/dt = r u - gamma u^2 (oracle, derived by hand)."""
    if r == 0.0:
        return lam / (1.0 + gamma * lam * t)
    e = math.exp(r * t)
    return r * lam * e / (r + gamma * lam * (e - 1.0))


class TestMechanism:
    def test_psi_zero(self):
        mech = csbp.stable_mechanism(0.3, 0.2, 0.5, 1.5)
        assert mech.psi(0.0) == 0.0

    def test_feller_polynomial(self):
        mech = csbp.feller_mechanism(0.7, 1.3)
        for lam in (0.1, 1.0, 4.0):
            assert math.isclose(mech.psi(lam), -0.7 * lam + 1.3 * lam * lam, rel_tol=1e-14)

    def test_stable_part_against_gamma_constant(self):
        c, alpha = 0.5, 1.5
        mech = csbp.stable_mechanism(0.0, 0.0, c, alpha)
        for lam in (0.3, 1.0, 2.7):
            assert math.isclose(mech.psi(lam), csbp.stable_psi_closed_form(c, alpha, lam),
                                rel_tol=1e-8)

    def test_atomic_measure(self):
        mech = csbp.BranchingMechanism(0.0, 0.0, csbp.JumpMeasure("atoms", atoms=((2.0, 1.5),)))
        lam = 0.8
        expect = 1.5 * (math.exp(-2.0 * lam) - 1.0 + 2.0 * lam)
        assert math.isclose(mech.psi(lam), expect, rel_tol=1e-14)

    def test_rejects_wide_stable_exponent(self):
        with pytest.raises(ValueError):
            csbp.JumpMeasure("stable", c=1.0, alpha=0.8)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            csbp.feller_mechanism(0.5, 1.0).psi(-1.0)


class TestLaplaceExponent:
    def test_time_zero_identity(self):
        mech = csbp.feller_mechanism(0.5, 1.0)
        assert csbp.laplace_exponent(mech, 0.0, 2.0).value == 2.0

    def test_riccati_oracle(self):
        mech = csbp.feller_mechanism(0.5, 1.0)
        for t in (0.5, 1.0, 2.0):
            for lam in (0.5, 1.0, 2.0):
                u = csbp.laplace_exponent(mech, t, lam, tol=1e-11).value
                assert abs(u - riccati_u(0.5, 1.0, t, lam)) < 1e-9

    def test_integral_identity_residual(self):
        mech = csbp.feller_mechanism(-0.4, 0.8)
        res = csbp.laplace_exponent(mech, 0.7, 2.0)
        assert res.integral_identity_residual is not None
        assert res.integral_identity_residual < 1e-6

    def test_infinity_limit(self):
        mech = csbp.feller_mechanism(1.0, 1.0)
        u, ok = csbp.laplace_exponent_at_infinity(mech, 2.0)
        u_exact = 1.0 * math.exp(2.0) / (1.0 * (math.exp(2.0) - 1.0))
        assert ok and abs(u - u_exact) < 1e-5

    def test_drift_only_no_absorption(self):
        # psi linear: u_t(lam) = lam e^{|r| t} unbounded in lam, never stabilizes
        mech = csbp.BranchingMechanism(-0.5, 0.0)
        _, ok = csbp.laplace_exponent_at_infinity(mech, 1.0)
        assert not ok


class TestClassify:
    def test_subcritical_feller(self):
        c = csbp.classify(csbp.feller_mechanism(-0.3, 1.0))
        assert c.eta == 0.0 and c.extinction_prob(2.0) == 1.0
        assert c.absorption_possible and not c.blowup_possible

    def test_supercritical_feller_root(self):
        c = csbp.classify(csbp.feller_mechanism(0.5, 1.0))
        assert abs(c.eta - 0.5) < 1e-10
        assert abs(c.extinction_prob(1.0) - math.exp(-0.5)) < 1e-10

    def test_drift_only_extinction_without_absorption(self):
        c = csbp.classify(csbp.BranchingMechanism(-0.5, 0.0))
        assert c.eta == 0.0 and not c.absorption_possible

    def test_blowup_predicate_wide_class(self):
        assert csbp.blowup_possible_general(lambda l: -0.5 * l ** 0.5)
        assert not csbp.blowup_possible_general(lambda l: -0.5 * l)
        assert not csbp.blowup_possible_general(csbp.feller_mechanism(0.5, 1.0).psi)


class TestSdeSimulator:
    def test_zero_start_stays_zero(self):
        path = csbp.simulate_csbp_sde(csbp.feller_mechanism(0.5, 1.0), 0.0, 1.0, 0.01,
                                      0.01, RngStream(1))
        assert np.all(path.values == 0.0)

    def test_mean_growth_and_martingale(self):
        mech = csbp.stable_mechanism(0.4, 0.3, 0.3, 1.5)
        paths = csbp.csbp_sde_batch(mech, 1.0, 1.0, 0.001, 0.02, 4000, RngStream(2))
        n = paths.shape[1] - 1
        ts = np.linspace(0, 1.0, n + 1)
        renorm = paths * np.exp(-0.4 * ts)[None, :]
        m_end = renorm[:, -1]
        se = m_end.std(ddof=1) / math.sqrt(len(m_end))
        assert abs(m_end.mean() - 1.0) < 3 * se
        mid = renorm[:, n // 2]
        se_mid = mid.std(ddof=1) / math.sqrt(len(mid))
        assert abs(mid.mean() - 1.0) < 3 * se_mid

    def test_branching_property(self):
        mech = csbp.feller_mechanism(0.3, 1.0)
        a = csbp.csbp_sde_batch(mech, 3.0, 1.0, 0.004, 0.01, 8000, RngStream(3))[:, -1]
        b = (csbp.csbp_sde_batch(mech, 1.0, 1.0, 0.004, 0.01, 8000, RngStream(4))[:, -1]
             + csbp.csbp_sde_batch(mech, 2.0, 1.0, 0.004, 0.01, 8000, RngStream(5))[:, -1])
        assert sstats.ks_2samp(a, b).pvalue > 0.01

    def test_laplace_linear_in_start(self):
        mech = csbp.feller_mechanism(0.2, 0.8)
        lam, t = 0.9, 1.0
        logs = []
        for z in (1.0, 2.0, 4.0):
            vals = np.exp(-lam * csbp.csbp_sde_batch(mech, z, t, 0.002, 0.01, 6000,
                                                     RngStream(int(10 + z)))[:, -1])
            logs.append(-math.log(vals.mean()))
        zs = np.array([1.0, 2.0, 4.0])
        logs = np.array(logs)
        slope = np.sum(zs * logs) / np.sum(zs * zs)
        resid = logs - slope * zs
        r2 = 1.0 - np.sum(resid ** 2) / np.sum((logs - logs.mean()) ** 2)
        assert r2 > 0.999

    def test_unstability_leaves_compacts(self):
        mech = csbp.feller_mechanism(0.8, 1.0)
        paths = csbp.csbp_sde_batch(mech, 1.0, 8.0, 0.004, 0.01, 3000, RngStream(6))
        finals = paths[:, -1]
        inside = np.mean((finals > 0.05) & (finals < 3.0))
        assert inside < 0.05


class TestLamperti:
    def test_deterministic_mechanism_exact(self):
        mech = csbp.BranchingMechanism(0.6, 0.0)
        path = csbp.simulate_csbp_lamperti(mech, 1.0, 2.0, 0.002, 0.01, RngStream(7))
        assert abs(path.values[-1] - math.exp(1.2)) < 1e-2

    def test_absorption_frequency_matches_exponent_limit(self):
        mech = csbp.feller_mechanism(0.3, 1.0)
        t = 1.5
        gen = RngStream(8).generator()
        absorbed = np.array([csbp.simulate_csbp_lamperti(mech, 1.0, t, 0.004, 0.01,
                                                         gen).values[-1] == 0.0
                             for _ in range(3000)])
        u_inf, ok = csbp.laplace_exponent_at_infinity(mech, t)
        assert ok
        target = math.exp(-u_inf)
        se = math.sqrt(target * (1 - target) / len(absorbed))
        assert abs(absorbed.mean() - target) < 3 * se


class TestGwScaling:
    def test_deterministic_offspring_zero_distance(self):
        def unit_offspring(x, gen):
            return x.copy()

        rows = csbp.gw_scaling_demo(unit_offspring, lambda K: K,
                                    lambda t, lam: lam, 1.0, 1.0, [10, 40],
                                    400, RngStream(9))
        assert all(r.distance < 1e-12 for r in rows)

    def test_binary_converges_to_sqrt_diffusion(self):
        # critical binary offspring: variance 1, limit exponent lam/(1+lam t/2)
        def limit_u(t, lam):
            return lam / (1.0 + 0.5 * lam * t)

        rows = csbp.gw_scaling_demo(csbp.binary_offspring_batch, lambda K: K,
                                    limit_u, 1.0, 1.0, [10, 50, 250], 4000,
                                    RngStream(10))
        assert rows[0].distance > rows[-1].distance
        assert rows[-1].distance < 0.02

    def test_heavy_tail_converges_to_stable(self):
        off = csbp.StableOffspring(c=0.5, alpha=1.5)
        alpha, c = 1.5, 0.5

        def limit_u(t, lam):
            return lam * (1.0 + c * (alpha - 1.0) * t * lam ** (alpha - 1.0)) ** (-1.0 / (alpha - 1.0))

        rows = csbp.gw_scaling_demo(off.offspring_batch, lambda K: K ** (alpha - 1.0),
                                    limit_u, 1.0, 1.0, [16, 64, 256], 4000,
                                    RngStream(11))
        assert rows[0].distance > rows[-1].distance

    def test_stable_offspring_mechanism_consistency(self):
        # the tabulated limit exponent equals the exponent-ODE solution of the
        # matching mechanism
        off = csbp.StableOffspring(c=0.5, alpha=1.5)
        mech = off.limit_mechanism()
        lam, t = 1.3, 0.8
        closed = lam * (1.0 + 0.5 * 0.5 * t * lam ** 0.5) ** -2.0
        assert abs(csbp.laplace_exponent(mech, t, lam).value - closed) < 1e-6

    def test_stable_offspring_law_is_critical(self):
        off = csbp.StableOffspring(c=0.5, alpha=1.5)
        gen = RngStream(12).generator()
        draws = off.sample_counts(200000, gen)
        assert abs(draws.mean() - 1.0) < 0.02
