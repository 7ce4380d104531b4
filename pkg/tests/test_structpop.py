import math

import numpy as np
import pytest
from scipy import stats as sstats

from popdyn import structpop as st
from popdyn.kernel import RngStream


def pure_birth_params(b=1.0, K=10):
    zeros = lambda xs: np.zeros_like(np.asarray(xs, dtype=float))
    return st.IbmParams(box=(0.0, 4.0), birth=lambda x: b,
                        birth_vec=lambda xs: np.full_like(np.asarray(xs, dtype=float), b),
                        death=lambda x, z: 0.0, death_vec=lambda xs, zs: zeros(xs),
                        comp=lambda u: zeros(u), p_mut=0.0, sigma=0.1,
                        b_bar=b, d_bar=1e-9, C_bar=1e-12, K=K)


class TestParams:
    def test_kisdi_dominators(self):
        params = st.kisdi_params(100)
        assert params.global_dominator() == pytest.approx(5.12, abs=1e-9)
        assert params.mutation_dominator() == pytest.approx(2.0, rel=1e-3)

    def test_bound_violations_rejected(self):
        import dataclasses
        with pytest.raises(ValueError, match="birth"):
            dataclasses.replace(st.kisdi_params(100), b_bar=1.0)

    def test_eta_range(self):
        with pytest.raises(ValueError):
            st.kisdi_params(100, eta=1.5, gamma_const=1.0)


class TestSimulate:
    def test_empty_population_frozen(self):
        res = st.simulate_ibm(st.kisdi_params(50), [], 1.0, RngStream(1))
        assert len(res.final_traits) == 0 and res.n_effective == 0

    def test_no_mutation_support_fixed(self):
        params = st.kisdi_params(50, p=0.0)
        res = st.simulate_ibm(params, np.full(60, 1.2), 1.0, RngStream(2))
        assert np.all(np.abs(res.final_traits - 1.2) < 1e-12)

    def test_population_scales_with_K(self):
        # equilibrium mass is K-free, so N at time t grows proportionally to K
        means = {}
        for K in (40, 160):
            params = st.kisdi_params(K, p=0.0)
            ns = []
            for i in range(25):
                res = st.simulate_ibm(params, np.full(K, 1.2), 1.5,
                                      RngStream(3).substream(K).replicate(i))
                ns.append(len(res.final_traits))
            means[K] = np.mean(ns)
        assert abs(means[160] / means[40] - 4.0) < 0.5

    def test_pure_birth_mean(self):
        params = pure_birth_params(b=1.0)
        gen_counts = []
        for i in range(300):
            res = st.simulate_ibm(params, np.full(10, 1.0), 2.0, RngStream(4).replicate(i))
            gen_counts.append(len(res.final_traits))
        counts = np.array(gen_counts, dtype=float)
        se = counts.std(ddof=1) / math.sqrt(len(counts))
        assert abs(counts.mean() - 10 * math.exp(2.0)) < 3 * se

    def test_snapshots_record_prelimit_state(self):
        params = st.kisdi_params(50)
        res = st.simulate_ibm(params, np.full(50, 1.2), 1.0, RngStream(5),
                              snapshot_times=[0.25, 0.5, 0.75])
        assert [t for t, _ in res.snapshots] == [0.25, 0.5, 0.75]
        for _, snap in res.snapshots:
            assert np.all((snap >= 0.0) & (snap <= 4.0))

    def test_mutants_stay_in_box(self):
        params = st.kisdi_params(30, p=0.5, sigma=0.5)
        res = st.simulate_ibm(params, np.full(30, 0.1), 1.5, RngStream(6))
        assert np.all((res.final_traits >= 0.0) & (res.final_traits <= 4.0))

    def test_dominator_scaling_invariance(self):
        params = st.kisdi_params(60)
        a = [len(st.simulate_ibm(params, np.full(60, 1.2), 0.4,
                                 RngStream(7).replicate(i)).final_traits)
             for i in range(80)]
        b = [len(st.simulate_ibm(params, np.full(60, 1.2), 0.4,
                                 RngStream(8).replicate(i), chat_factor=2.0).final_traits)
             for i in range(80)]
        assert sstats.ks_2samp(a, b).pvalue > 0.01


class TestGeneratorCheck:
    def test_f1_martingale(self):
        params = st.kisdi_params(60)
        chk = st.generator_moment_check(params,
                                        lambda xs: np.ones_like(np.asarray(xs, dtype=float)),
                                        np.full(60, 1.2), 0.4, 150, RngStream(9),
                                        qv_tol=0.35)
        assert abs(chk.residual) <= 3 * chk.residual_se
        assert abs(chk.qv_ratio - 1.0) < 0.35

    def test_bounded_trait_function(self):
        params = st.kisdi_params(60)
        chk = st.generator_moment_check(params,
                                        lambda xs: np.exp(-np.asarray(xs, dtype=float)),
                                        np.full(60, 1.2), 0.4, 150, RngStream(10),
                                        qv_tol=0.35)
        assert abs(chk.residual) <= 3 * chk.residual_se


class TestLimits:
    def test_monomorphic_equilibrium_value(self):
        params = st.kisdi_params(200, p=0.0)
        ts, ns = st.monomorphic_limit(params, 1.2, 1.0, 8.0)
        C0 = 200 * float(params.comp(np.array([0.0]))[0])
        assert abs(ns[-1] - params.birth(1.2) / C0) < 1e-6

    def test_distances_decrease_with_K(self):
        rows = st.limit_ode_compare(lambda K: st.kisdi_params(K, p=0.0), [1.2], [1.0],
                                    Ks=[30, 120], horizon=1.5, n_rep=25,
                                    rng=RngStream(11))
        assert rows[0].distance > rows[1].distance

    def test_dimorphic_fixation_sign(self):
        # strongly asymmetric competition: the larger-trait type fixes
        params = st.kisdi_params(100, p=0.0)
        _, ns = st.dimorphic_limit(params, 1.0, 2.5, (1.0, 1.0), 60.0)
        n1, n2 = ns[-1]
        assert n2 > 1.0 and n1 < 0.05

    def test_mean_field_logistic(self):
        ts, ns = st.mean_field_limit(2.0, 1.0, 0.5, 0.2, 25.0)
        assert abs(ns[-1] - 2.0) < 1e-8

    def test_requires_no_mutation(self):
        with pytest.raises(ValueError, match="p = 0"):
            st.limit_ode_compare(lambda K: st.kisdi_params(K, p=0.1), [1.2], [1.0],
                                 Ks=[20], horizon=0.5, n_rep=2, rng=RngStream(12))


class TestAccelerated:
    def test_eta_zero_reduces_to_plain_rates(self):
        base = st.kisdi_params(50, p=0.0)
        accel = st.kisdi_params(50, p=0.0, eta=0.5, gamma_const=0.0)
        a = st.simulate_ibm(base, np.full(50, 1.2), 0.5, RngStream(13))
        b = st.simulate_ibm(accel, np.full(50, 1.2), 0.5, RngStream(13))
        assert np.array_equal(a.final_traits, b.final_traits)

    def test_bracket_ratio_scales(self):
        ratios = {}
        for K in (64, 256):
            params = st.kisdi_params(K, p=0.3, sigma=0.3 / K ** 0.25, eta=0.5,
                                     gamma_const=1.0)
            stats = st.accelerated_run(params, np.full(K // 2, 1.2), 0.15, 25,
                                       RngStream(14).substream(K))
            ratios[K] = stats.bracket_ratio
        assert abs(ratios[256] / ratios[64] - 0.5) < 0.15

    def test_diffusive_bracket_at_eta_one(self):
        params = st.kisdi_params(80, p=0.3, sigma=0.3 / 80 ** 0.5, eta=1.0,
                                 gamma_const=1.0)
        stats = st.accelerated_run(params, np.full(40, 1.2), 0.15, 30, RngStream(15))
        assert abs(stats.bracket_ratio - 1.0) < 0.15

    def test_density_spreads_with_K(self):
        # mutation on: the largest trait-bin share shrinks as K grows
        shares = {}
        for K in (40, 160):
            params = st.kisdi_params(K, p=0.3, sigma=0.2)
            res = st.simulate_ibm(params, np.full(K, 1.2), 1.0,
                                  RngStream(16).substream(K))
            hist, _ = np.histogram(res.final_traits, bins=np.arange(0, 4.02, 0.02))
            shares[K] = hist.max() / hist.sum()
        assert shares[160] < shares[40]


class TestMomentStability:
    def test_sup_moments_stable_across_batches(self):
        params = st.kisdi_params(60)
        sups = []
        for i in range(40):
            res = st.simulate_ibm(params, np.full(60, 1.2), 0.5, RngStream(17).replicate(i))
            n_max = max(60, int(res.population.max()) if len(res.population) else 60)
            sups.append((n_max / 60) ** 2)
        first, second = np.mean(sups[:20]), np.mean(sups[20:])
        assert 0.5 < first / second < 2.0
