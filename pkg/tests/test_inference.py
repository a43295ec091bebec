import math

import numpy as np
import pytest

from glmixer.data import inv_logit
from glmixer.design import ModelSpec, build_matrices
from glmixer.errors import SpecMismatchError, ValidationError
from glmixer.gibbs import PriorConfig, Trace, run_chain
from glmixer.inference import (deviances, effective_sample_size,
                               fitted_completeness, predict_new_unit,
                               shrinkage_factors, split_rhat, summarize,
                               theorem2_curve)
from glmixer.simulate import SimConfig, simulate_panel

SPEC = ModelSpec(variant=1, year_offset=2009.5)


def make_trace(draws, chain_id=0, priors=None, spec=SPEC,
               unit_ids=("A", "B"), sizes=(10, 10)):
    k = draws["beta"].shape[0]
    return Trace(draws=draws, seed=0, chain_id=chain_id, n_iter=2 * k,
                 burn_in=k, thin=1, priors=priors or PriorConfig(), spec=spec,
                 unit_ids=unit_ids, sizes=sizes)


def scalar_draws(values, m=2, p=2):
    """Trace draws where every parameter is constant except tau = values."""
    k = len(values)
    return {
        "beta": np.zeros((k, p)),
        "u": np.zeros((k, m)),
        "tau": np.asarray(values, dtype=np.float64),
        "phi": np.ones(k),
        "omega": np.ones((k, m)),
        "lambda": np.ones((k, m)),
    }


class TestEss:
    def test_iid_close_to_n(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 2000))
        ess = effective_sample_size(x)
        assert 0.5 * 8000 < ess <= 8000 * math.log10(8010)

    def test_ar1_much_smaller(self):
        rng = np.random.default_rng(1)
        k = 4000
        x = np.empty((2, k))
        for c in range(2):
            e = rng.standard_normal(k)
            x[c, 0] = e[0]
            for t in range(1, k):
                x[c, t] = 0.95 * x[c, t - 1] + e[t]
        ess = effective_sample_size(x)
        # AR(1) with rho=0.95 has tau ~ (1+rho)/(1-rho) = 39
        assert ess < 0.1 * 2 * k
        assert ess == pytest.approx(2 * k / 39.0, rel=0.6)

    def test_constant_chain(self):
        assert effective_sample_size(np.full((2, 100), 3.0)) == 200.0

    def test_short_chain_passthrough(self):
        assert effective_sample_size(np.array([[1.0, 2.0, 3.0]])) == 3.0


class TestSplitRhat:
    def test_well_mixed_near_one(self):
        rng = np.random.default_rng(2)
        assert split_rhat(rng.standard_normal((4, 1000))) < 1.01

    def test_separated_means_large(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 500))
        x[1] += 5.0
        assert split_rhat(x) > 1.5

    def test_constant_one(self):
        assert split_rhat(np.full((2, 100), 7.0)) == 1.0

    def test_trending_chain_detected(self):
        # a single drifting chain fails the split comparison
        assert split_rhat(np.linspace(0, 1, 1000)[None, :]) > 1.1


class TestSummarize:
    def test_quantile_rule_1_to_100(self):
        tr = make_trace(scalar_draws(np.arange(1.0, 101.0)))
        row = summarize([tr]).lookup("tau")
        assert row.mean == pytest.approx(50.5)
        assert row.q50 == pytest.approx(50.5)
        # numpy linear interpolation: 1 + 0.025 * 99
        assert row.q2_5 == pytest.approx(3.475)
        assert row.q97_5 == pytest.approx(97.525)

    def test_constant_draws(self):
        tr = make_trace(scalar_draws(np.full(50, 2.5)))
        row = summarize([tr]).lookup("tau")
        assert row.mean == 2.5 and row.sd == 0.0
        assert row.rhat == 1.0

    def test_renaming_under_gamma_priors(self):
        priors = PriorConfig(error_prior="gamma", reffect_prior="gamma",
                             a_zeta_eps=1.0, b_zeta_eps=1.0, a_zeta_u=1.0, b_zeta_u=1.0)
        tr = make_trace(scalar_draws(np.arange(10.0)), priors=priors)
        summary = summarize([tr])
        summary.lookup("zeta_eps")
        summary.lookup("zeta_u")
        with pytest.raises(KeyError):
            summary.lookup("tau")

    def test_pooling_two_chains(self):
        t1 = make_trace(scalar_draws(np.full(20, 1.0)), chain_id=0)
        t2 = make_trace(scalar_draws(np.full(20, 3.0)), chain_id=1)
        row = summarize([t1, t2]).lookup("tau")
        assert row.mean == pytest.approx(2.0)
        assert row.rhat > 1.5

    def test_unequal_lengths_rejected(self):
        t1 = make_trace(scalar_draws(np.zeros(10)))
        t2 = make_trace(scalar_draws(np.zeros(12)))
        with pytest.raises(ValidationError):
            summarize([t1, t2])

    def test_vector_params_indexed(self):
        tr = make_trace(scalar_draws(np.zeros(10), m=3, p=2),
                        unit_ids=("A", "B", "C"), sizes=(5, 5, 5))
        summary = summarize([tr])
        for j in range(3):
            assert summary.lookup("u", j).mean == 0.0
        with pytest.raises(KeyError):
            summary.lookup("u", 3)


@pytest.fixture(scope="module")
def fit():
    panel, truth = simulate_panel(SimConfig(m=6, n_i=12, seed=30))
    spec = ModelSpec.from_dict(truth["spec"])
    traces = [run_chain(panel, spec, PriorConfig(), n_iter=300, burn_in=100,
                        thin=2, seed=9, stream_id=c) for c in range(2)]
    return panel, spec, traces


class TestFittedCompleteness:
    def test_brute_force_replay(self, fit):
        panel, spec, traces = fit
        fc = fitted_completeness(traces, panel, spec)
        design = build_matrices(panel, spec, for_fit=False)
        beta = np.concatenate([t.draws["beta"] for t in traces])
        u = np.concatenate([t.draws["u"] for t in traces])
        k = beta.shape[0]
        for j in [0, 17, design.n - 1]:
            vals = np.array([inv_logit(float(beta[d] @ design.X[j]
                                             + u[d, design.group_idx[j]]))
                             for d in range(k)])
            assert fc.mean[j] == pytest.approx(vals.mean(), abs=1e-12)
            assert fc.q2_5[j] == pytest.approx(np.quantile(vals, 0.025), abs=1e-12)
            fixed = np.array([inv_logit(float(beta[d] @ design.X[j])) for d in range(k)])
            assert fc.mean_minus_u[j] == pytest.approx(fixed.mean(), abs=1e-12)

    def test_interval_order_and_range(self, fit):
        panel, spec, traces = fit
        fc = fitted_completeness(traces, panel, spec)
        assert np.all(fc.q2_5 <= fc.mean) and np.all(fc.mean <= fc.q97_5)
        assert np.all((fc.mean > 0) & (fc.mean < 1))

    def test_spec_mismatch(self, fit):
        panel, spec, traces = fit
        with pytest.raises(SpecMismatchError):
            fitted_completeness(traces, panel, ModelSpec(variant=2, sex=spec.sex,
                                                         year_offset=spec.year_offset))


class TestPredictNewUnit:
    def test_zero_beta_gives_half(self):
        tr = make_trace(scalar_draws(np.ones(40)))
        res = predict_new_unit([tr], np.ones((3, 2)), mode="fixed_only")
        np.testing.assert_allclose(res.mean, 0.5, atol=1e-15)
        np.testing.assert_allclose(res.q2_5, 0.5, atol=1e-15)

    def test_fixed_only_matches_manual(self, fit):
        panel, spec, traces = fit
        rows = np.ones((1, spec.p))
        res = predict_new_unit(traces, rows, mode="fixed_only")
        beta = np.concatenate([t.draws["beta"] for t in traces])
        vals = 1.0 / (1.0 + np.exp(-(beta @ rows[0])))
        assert res.mean[0] == pytest.approx(vals.mean(), abs=1e-12)

    def test_integrate_widens_intervals(self, fit):
        panel, spec, traces = fit
        rows = np.ones((1, spec.p))
        fo = predict_new_unit(traces, rows, mode="fixed_only")
        ir = predict_new_unit(traces, rows, mode="integrate_reffect")
        assert (ir.q97_5[0] - ir.q2_5[0]) >= (fo.q97_5[0] - fo.q2_5[0])

    def test_huge_phi_collapses_to_fixed_only(self):
        draws = scalar_draws(np.ones(200))
        rng = np.random.default_rng(4)
        draws["beta"] = rng.normal(size=(200, 2))
        draws["phi"] = np.full(200, 1e16)
        tr = make_trace(draws)
        fo = predict_new_unit([tr], np.ones((1, 2)), mode="fixed_only")
        ir = predict_new_unit([tr], np.ones((1, 2)), mode="integrate_reffect")
        assert ir.mean[0] == pytest.approx(fo.mean[0], abs=1e-6)

    def test_deterministic(self, fit):
        panel, spec, traces = fit
        rows = np.ones((2, spec.p))
        a = predict_new_unit(traces, rows)
        b = predict_new_unit(traces, rows)
        np.testing.assert_array_equal(a.mean, b.mean)

    def test_bad_mode_and_shape(self, fit):
        panel, spec, traces = fit
        with pytest.raises(ValidationError):
            predict_new_unit(traces, np.ones((1, spec.p)), mode="marginal")
        with pytest.raises(SpecMismatchError):
            predict_new_unit(traces, np.ones((1, spec.p + 1)))


class TestShrinkageAndDeviances:
    def test_shrinkage_arithmetic(self):
        draws = scalar_draws(np.full(1, 2.0))
        draws["lambda"] = np.array([[1.0, 3.0]])
        draws["omega"] = np.array([[4.0, 0.5]])
        draws["phi"] = np.array([5.0])
        tr = make_trace(draws, sizes=(10, 4))
        g, mean = shrinkage_factors([tr])
        expect = [2.0 / (2.0 + 20.0 / 10), 6.0 / (6.0 + 2.5 / 4)]
        np.testing.assert_allclose(g[0], expect, atol=1e-14)
        np.testing.assert_allclose(mean, expect, atol=1e-14)

    def test_shrinkage_in_unit_interval(self, fit):
        panel, spec, traces = fit
        g, mean = shrinkage_factors(traces)
        assert np.all((g > 0) & (g < 1))
        assert g.shape == (sum(t.kept for t in traces), panel.m)

    def test_deviances_brute_force(self, fit):
        panel, spec, traces = fit
        country, country_year = deviances(panel, spec)
        design = build_matrices(panel, spec, for_fit=False)
        beta_hat, *_ = np.linalg.lstsq(design.X, design.y, rcond=None)
        for g in range(design.m):
            sel = design.group_idx == g
            r = design.y[sel] - design.X[sel] @ beta_hat
            assert country[g] == pytest.approx(r.mean() ** 2, abs=1e-10)
            assert country_year[g] == pytest.approx(float(r @ r) / sel.sum(), abs=1e-10)


class TestTheorem2Curve:
    def test_probabilities_valid(self):
        phi_grid = np.logspace(0, 3, 6)
        for prior in ("horseshoe", "laplace", "student-t"):
            curve = theorem2_curve(prior, 0.5, n_i=10, resid_mean=0.0,
                                   resid_ss=0.5, phi_grid=phi_grid)
            assert np.all((curve >= 0) & (curve <= 1))

    def test_monotone_decreasing_in_phi(self):
        phi_grid = np.logspace(0, 4, 8)
        curve = theorem2_curve("horseshoe", 0.5, n_i=10, resid_mean=0.0,
                               resid_ss=0.5, phi_grid=phi_grid)
        assert np.all(np.diff(curve) < 0)

    def test_tau_side_monotone(self):
        tau_grid = np.logspace(0, 4, 8)
        curve = theorem2_curve("half-cauchy", 0.5, n_i=10, resid_mean=0.1,
                               resid_ss=0.4, tau_grid=tau_grid)
        assert np.all((curve >= 0) & (curve <= 1))
        assert np.all(np.diff(curve) <= 1e-12)

    def test_signal_slows_concentration(self):
        # a strong group signal keeps gamma large for bigger phi
        phi_grid = np.array([100.0])
        null = theorem2_curve("horseshoe", 0.5, n_i=10, resid_mean=0.0,
                              resid_ss=0.1, phi_grid=phi_grid)
        signal = theorem2_curve("horseshoe", 0.5, n_i=10, resid_mean=1.0,
                                resid_ss=10.5, phi_grid=phi_grid)
        assert signal[0] > null[0]

    def test_argument_validation(self):
        with pytest.raises(ValidationError):
            theorem2_curve("horseshoe", 1.5, n_i=5, resid_mean=0.0,
                           phi_grid=[1.0])
        with pytest.raises(ValidationError):
            theorem2_curve("horseshoe", 0.5, n_i=5, resid_mean=0.0)
        with pytest.raises(ValidationError):
            theorem2_curve("ridge", 0.5, n_i=5, resid_mean=0.0, phi_grid=[1.0])
