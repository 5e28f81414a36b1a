"""
Tests for resampling, the SIR step and the particle likelihood estimators.
"""
import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from pfsgld import kalman
from pfsgld.exceptions import DegenerateFilterError, DomainError, NumericError
from pfsgld.gradient import SubsequenceSpec, buffered_statistic
from pfsgld.model import LatentState, get_model, simulate
from pfsgld.particle import (
    ParticleCloud,
    ProposalKind,
    ResamplingKind,
    heldout_loglik,
    predictive_loglik,
    resample,
    run_filter,
    step,
)


class ZeroStatistic:
    """Pairwise statistic that never contributes"""

    dim = 3

    def initial(self, x0):
        return None

    def __call__(self, k, x, x_prev):
        return None


class TestResample:
    """Test suite for the resampling schemes"""

    @pytest.mark.parametrize("kind", list(ResamplingKind))
    def test_point_mass(self, kind, rng):
        log_w = np.log(np.array([1.0, 0.0, 0.0, 0.0, 0.0]))

        np.testing.assert_array_equal(resample(log_w, kind, rng), np.zeros(5, dtype=int))

    def test_stratified_uniform_weights(self, rng):
        """Equal strata put exactly one offspring on every particle"""
        ancestors = resample(np.zeros(8), ResamplingKind.STRATIFIED, rng)

        np.testing.assert_array_equal(np.sort(ancestors), np.arange(8))

    @pytest.mark.parametrize("kind", list(ResamplingKind))
    def test_offspring_proportions(self, kind):
        """Offspring counts for weights proportional to (1, 2, 3, 4) pass a chi-square test"""
        N = 100_000
        w = np.array([1.0, 2.0, 3.0, 4.0]) / 10.0
        ancestors = resample(np.log(w), kind, np.random.default_rng(123), n=N)
        counts = np.bincount(ancestors, minlength=4)

        assert counts.sum() == N
        if kind == ResamplingKind.MULTINOMIAL:
            assert stats.chisquare(counts, N * w).pvalue > 0.001
        else:
            # stratified and residual counts stay within one of N w
            assert np.all(np.abs(counts - N * w) <= 1.0 + 1e-9)

    def test_residual_keeps_deterministic_copies(self, rng):
        w = np.array([0.55, 0.25, 0.2])
        counts = np.bincount(resample(np.log(w), ResamplingKind.RESIDUAL, rng, n=10), minlength=3)

        assert counts.sum() == 10
        assert np.all(counts >= np.floor(10 * w))

    @pytest.mark.parametrize(
        "log_w",
        [
            np.array([0.0, np.nan]),
            np.array([0.0, np.inf]),
            np.array([-np.inf, -np.inf]),
        ],
    )
    def test_invalid_weights(self, log_w, rng):
        with pytest.raises(NumericError):
            resample(log_w, ResamplingKind.MULTINOMIAL, rng)

    @pytest.mark.parametrize("kind", list(ResamplingKind))
    def test_preserves_expected_statistic(self, kind):
        """The mean of a statistic over resampled particles is unbiased for its weighted mean"""
        rng = np.random.default_rng(99)
        log_w = rng.normal(0.0, 1.5, 20)
        H = rng.normal(size=(20, 3)) + 0.1 * np.arange(20)[:, None]
        target = np.exp(log_w - logsumexp(log_w)) @ H
        means = np.array([H[resample(log_w, kind, rng)].mean(axis=0) for _ in range(4000)])
        se = means.std(axis=0, ddof=1) / np.sqrt(means.shape[0])

        assert np.all(np.abs(means.mean(axis=0) - target) <= 4 * se + 1e-12)


class TestStep:
    """Test suite for one SIR iteration"""

    def test_prior_proposal_weights_are_emissions(self, svm_params, rng):
        model = get_model(svm_params)
        cloud = ParticleCloud.initial(model, svm_params, 50, rng)
        new = step(cloud, model, svm_params, 0.4, proposal=ProposalKind.PRIOR, rng=rng)
        expected = model.emission_logpdf(svm_params, new.particles, 0.4)

        np.testing.assert_allclose(new.log_weights, expected - logsumexp(expected), rtol=1e-12)
        assert new.t == 1

    def test_lgssm_optimal_proposal_weights(self, lgssm_params, rng):
        model = get_model(lgssm_params)
        cloud = ParticleCloud.initial(model, lgssm_params, 50, rng)
        new = step(cloud, model, lgssm_params, 1.3, proposal=ProposalKind.OPTIMAL, rng=rng)
        x_prev = cloud.particles.x[new.ancestors]
        expected = stats.norm.logpdf(1.3, 0.9 * x_prev, np.sqrt(0.49 + 1.0))

        np.testing.assert_allclose(new.log_weights, expected - logsumexp(expected), rtol=1e-12)

    @pytest.mark.parametrize("resampling", list(ResamplingKind))
    def test_weights_stay_normalized(self, garch_params, resampling, rng):
        model = get_model(garch_params)
        y = simulate(garch_params, 15, rng).y
        cloud = ParticleCloud.initial(model, garch_params, 64, rng)
        for y_t in y:
            cloud = step(cloud, model, garch_params, y_t, proposal=ProposalKind.PRIOR, resampling=resampling, rng=rng)
            assert abs(logsumexp(cloud.log_weights)) < 1e-10

    def test_degenerate_weights(self, svm_params, rng, mocker):
        model = get_model(svm_params)
        cloud = ParticleCloud.initial(model, svm_params, 10, rng)
        mocker.patch.object(type(model), "emission_logpdf", return_value=np.full(10, -np.inf))

        with pytest.raises(DegenerateFilterError) as excinfo:
            step(cloud, model, svm_params, 0.0, proposal=ProposalKind.PRIOR, rng=rng)
        assert excinfo.value.t == 1
        assert excinfo.value.exit_code == 4

    def test_nan_weights_treated_as_zero(self, svm_params, rng, mocker):
        model = get_model(svm_params)
        cloud = ParticleCloud.initial(model, svm_params, 4, rng)
        mocker.patch.object(type(model), "emission_logpdf", return_value=np.array([np.nan, 0.0, 0.0, 0.0]))
        new = step(cloud, model, svm_params, 0.0, proposal=ProposalKind.PRIOR, rng=rng)

        assert new.log_weights[0] == -np.inf

    def test_particle_order_does_not_matter(self, lgssm_params):
        """Shuffling the particle indices leaves the law of the next cloud unchanged"""
        model = get_model(lgssm_params)
        rng = np.random.default_rng(5)
        N = 50
        x = rng.normal(0.0, 1.5, N)
        log_w = rng.normal(0.0, 1.0, N)
        log_w -= logsumexp(log_w)
        H = rng.normal(size=(N, 3))
        perm = rng.permutation(N)
        cloud = ParticleCloud(LatentState(x), log_w, H, np.arange(N))
        shuffled = ParticleCloud(LatentState(x[perm]), log_w[perm], H[perm], np.arange(N))

        np.testing.assert_allclose(shuffled.weighted_stats(), cloud.weighted_stats(), rtol=1e-12)

        def h_t(x_t, x_prev):
            return model.complete_data_grad(lgssm_params, x_t, x_prev, 0.8)

        def summaries(start, seed):
            rng = np.random.default_rng(seed)
            rows = []
            for _ in range(1000):
                new = step(start, model, lgssm_params, 0.8, h_t, ProposalKind.PRIOR, rng=rng)
                rows.append(np.append(new.weighted_stats(), new.log_marginal))
            return np.array(rows)

        a, b = summaries(cloud, 1), summaries(shuffled, 2)
        se = np.sqrt(a.var(axis=0, ddof=1) / a.shape[0] + b.var(axis=0, ddof=1) / b.shape[0])

        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 4 * se)

    def test_cloud_needs_two_particles(self, svm_params, rng):
        with pytest.raises(DomainError):
            ParticleCloud.initial(get_model(svm_params), svm_params, 1, rng)


class TestRunFilter:
    """Test suite for filtering a window with a running statistic"""

    def test_zero_statistic_changes_nothing(self, lgssm_params, lgssm_series):
        model = get_model(lgssm_params)
        plain = run_filter(model, lgssm_params, lgssm_series, None, 100, rng=np.random.default_rng(4))
        zero = run_filter(model, lgssm_params, lgssm_series, ZeroStatistic(), 100, rng=np.random.default_rng(4))

        np.testing.assert_array_equal(plain.cloud.log_weights, zero.cloud.log_weights)
        np.testing.assert_array_equal(zero.H, np.zeros(3))
        assert plain.loglik == zero.loglik

    def test_deterministic_under_seed(self, svm_params, svm_series):
        model = get_model(svm_params)
        a = run_filter(model, svm_params, svm_series, None, 200, rng=np.random.default_rng(9))
        b = run_filter(model, svm_params, svm_series, None, 200, rng=np.random.default_rng(9))

        assert a.loglik == b.loglik

    def test_empty_window(self, svm_params, rng):
        with pytest.raises(DomainError):
            run_filter(get_model(svm_params), svm_params, [], None, 10, rng=rng)

    def test_loglik_close_to_kalman(self, lgssm_params):
        y = simulate(lgssm_params, 20, np.random.default_rng(5)).y
        _, exact = kalman.kalman_filter(lgssm_params, y)
        result = run_filter(get_model(lgssm_params), lgssm_params, y, None, 5000, rng=np.random.default_rng(6))

        assert result.loglik == pytest.approx(exact, abs=0.1)

    @pytest.mark.slow
    def test_score_matches_kalman(self, lgssm_params):
        """H of the Fisher statistic averages to the exact score"""
        y = simulate(lgssm_params, 20, np.random.default_rng(8)).y
        model = get_model(lgssm_params)
        statistic = buffered_statistic(SubsequenceSpec.full(20), model, lgssm_params, y)
        rng = np.random.default_rng(10)
        H = np.array([run_filter(model, lgssm_params, y, statistic, 2000, rng=rng).H for _ in range(100)])
        exact = kalman.exact_score(lgssm_params, y).grad
        se = H.std(axis=0, ddof=1) / np.sqrt(H.shape[0])

        assert np.all(np.abs(H.mean(axis=0) - exact) < 4 * se + 0.05 * np.abs(exact) + 0.05)

    @pytest.mark.slow
    def test_marginal_likelihood_is_unbiased(self, lgssm_params):
        y = simulate(lgssm_params, 20, np.random.default_rng(12)).y
        _, exact = kalman.kalman_filter(lgssm_params, y)
        model = get_model(lgssm_params)
        rng = np.random.default_rng(13)
        ratios = np.exp([run_filter(model, lgssm_params, y, None, 2000, rng=rng).loglik - exact for _ in range(200)])
        se = ratios.std(ddof=1) / np.sqrt(ratios.shape[0])

        assert abs(ratios.mean() - 1.0) < 4 * se + 1e-3


class TestPredictiveLoglik:
    """Test suite for heldout and r-step predictive loglikelihoods"""

    def test_empty_series(self, svm_params, rng):
        assert heldout_loglik(get_model(svm_params), svm_params, [], 100, rng) == 0.0

    def test_terms_past_the_end_are_dropped(self, svm_params, rng):
        assert predictive_loglik(get_model(svm_params), svm_params, [0.1, 0.2, 0.3], 5, 100, rng) == 0.0

    def test_heldout_close_to_kalman(self, lgssm_params):
        y = simulate(lgssm_params, 100, np.random.default_rng(14)).y
        _, exact = kalman.kalman_filter(lgssm_params, y)
        value = heldout_loglik(get_model(lgssm_params), lgssm_params, y, 2000, np.random.default_rng(15))

        assert value == pytest.approx(exact, abs=0.5)

    def test_r_step_close_to_kalman(self, lgssm_params):
        y = simulate(lgssm_params, 60, np.random.default_rng(16)).y
        exact = kalman.predictive_loglik(lgssm_params, y, 3)
        value = predictive_loglik(get_model(lgssm_params), lgssm_params, y, 3, 4000, np.random.default_rng(17))

        assert value == pytest.approx(exact, abs=0.5)

    def test_svm_reproducible(self, svm_params, svm_series):
        model = get_model(svm_params)
        a = heldout_loglik(model, svm_params, svm_series, 300, np.random.default_rng(18))
        b = heldout_loglik(model, svm_params, svm_series, 300, np.random.default_rng(18))

        assert np.isfinite(a)
        assert a == b

    def test_invalid_horizon(self, svm_params, rng):
        with pytest.raises(DomainError):
            predictive_loglik(get_model(svm_params), svm_params, [0.0], 0, 100, rng)

    def test_predictive_uses_current_cloud(self, lgssm_params, rng, mocker):
        """Each term mixes the one-step density over the filtered cloud"""
        model = get_model(lgssm_params)
        spy = mocker.spy(type(model), "one_step_predictive_logpdf")
        predictive_loglik(model, lgssm_params, [0.1, 0.2, 0.3, 0.4], 2, 50, rng)

        assert spy.call_count == 3
        assert all(isinstance(call.args[2], LatentState) for call in spy.call_args_list)

    def test_term_is_log_of_mixture(self, lgssm_params, rng, mocker):
        """With uniform weights and densities (0.2, 0.6) the term is log 0.4, not the mean log-density"""
        model = get_model(lgssm_params)
        mocker.patch.object(type(model), "one_step_predictive_logpdf", return_value=np.log([0.2, 0.6]))
        value = heldout_loglik(model, lgssm_params, [0.3], 2, rng)

        assert value == pytest.approx(np.log(0.4), rel=1e-12)
        assert value > 0.5 * (np.log(0.2) + np.log(0.6))
