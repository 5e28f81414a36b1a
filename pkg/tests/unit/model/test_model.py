"""
Tests for the state space models in pfsgld.model.
"""
import numpy as np
import pytest
from scipy import integrate, stats

from pfsgld.exceptions import ContractError, DomainError, UnsupportedModelError
from pfsgld.model import (
    MODELS,
    GarchModel,
    LatentState,
    ModelKind,
    ModelParams,
    Trajectory,
    get_model,
    lipschitz_bound,
    simulate,
)
from tests.mocks.synthetic_data import central_difference

LOG_2PI = np.log(2.0 * np.pi)


def random_params(kind: ModelKind, rng: np.random.Generator) -> ModelParams:
    if kind == ModelKind.GARCH:
        values = [rng.uniform(0.2, 1.5), rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.95), rng.uniform(0.2, 1.0)]
    else:
        values = [rng.uniform(-0.9, 0.9), rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)]
    return ModelParams.from_natural(kind, values)


def random_states(kind: ModelKind, params: ModelParams, rng: np.random.Generator):
    if kind == ModelKind.GARCH:
        x_prev = LatentState(rng.normal(), rng.uniform(0.2, 2.0))
        s = GarchModel.conditional_variance(params, x_prev)
        return LatentState(rng.normal() * np.sqrt(s), s), x_prev
    return LatentState(rng.normal()), LatentState(rng.normal())


class TestModelParams:
    """Test suite for parameter containers and transforms"""

    def test_garch_coefficients_conversion(self):
        """(alpha, beta, gamma) = (0.1, 0.8, 0.05) maps to mu=0.6667, phi=0.85, lambda=0.9412"""
        params = ModelParams.from_garch_coefficients(0.1, 0.8, 0.05, 0.3)

        assert params["mu"] == pytest.approx(0.1 / 0.15)
        assert params["phi"] == pytest.approx(0.85)
        assert params["lambda"] == pytest.approx(0.8 / 0.85)
        assert params["lambda"] == pytest.approx(0.9412, abs=1e-4)
        np.testing.assert_allclose(params.garch_coefficients(), (0.1, 0.8, 0.05), rtol=1e-12)

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_unconstrained_round_trip(self, kind, rng):
        """natural -> unconstrained -> natural is the identity"""
        for _ in range(20):
            params = random_params(kind, rng)
            back = ModelParams.from_unconstrained(kind, params.unconstrained)
            np.testing.assert_allclose(back.natural, params.natural, rtol=1e-12)

    @pytest.mark.parametrize(
        "kind,values",
        [
            (ModelKind.LGSSM, [0.5, -1.0, 1.0]),
            (ModelKind.SVM, [0.5, 1.0, 0.0]),
            (ModelKind.GARCH, [0.5, 1.2, 0.5, 0.3]),
            (ModelKind.GARCH, [-0.5, 0.5, 0.5, 0.3]),
            (ModelKind.LGSSM, [0.5, 1.0]),
        ],
    )
    def test_invalid_values_rejected(self, kind, values):
        """Parameters outside their domain raise DomainError"""
        with pytest.raises(DomainError):
            ModelParams.from_natural(kind, values)

    def test_nonpositive_precision_rejected(self):
        """sigma_inv <= 0 has no natural counterpart"""
        with pytest.raises(DomainError):
            ModelParams.from_unconstrained(ModelKind.LGSSM, [0.5, -2.0, 1.0])

    def test_stationarity_required_for_coefficients(self):
        with pytest.raises(DomainError):
            ModelParams.from_garch_coefficients(0.1, 0.9, 0.2, 0.3)

    def test_equality_and_hash(self):
        a = ModelParams.from_natural("lgssm", [0.9, 0.7, 1.0])
        b = ModelParams.from_natural(ModelKind.LGSSM, np.array([0.9, 0.7, 1.0]))

        assert a == b
        assert hash(a) == hash(b)
        assert a != ModelParams.from_natural("svm", [0.9, 0.7, 1.0])

    def test_names(self, lgssm_params, garch_params):
        assert lgssm_params.names == ("phi", "sigma", "tau")
        assert lgssm_params.unconstrained_names == ("phi", "sigma_inv", "tau_inv")
        assert garch_params.unconstrained_names == ("log_mu", "logit_phi", "logit_lambda", "tau")

    def test_garch_coefficients_only_for_garch(self, lgssm_params):
        with pytest.raises(UnsupportedModelError):
            lgssm_params.garch_coefficients()


class TestLatentContainers:
    """Test suite for LatentState and Trajectory"""

    def test_aux_variance_must_be_positive(self):
        with pytest.raises(ContractError):
            LatentState(0.0, -1.0)

    def test_trajectory_lengths_checked(self):
        with pytest.raises(ContractError):
            Trajectory(x=np.zeros(3), y=np.zeros(3))

    def test_trajectory_rejects_nonfinite_observations(self):
        with pytest.raises(ContractError):
            Trajectory(x=np.zeros(3), y=np.array([0.0, np.nan]))

    def test_latent_accessor(self):
        trajectory = Trajectory(x=np.array([0.0, 1.0]), y=np.array([2.0]), aux_variance=np.array([1.0, 0.5]))

        assert trajectory.T == 1
        assert trajectory.latent(1) == LatentState(1.0, 0.5)


class TestInitialLaw:
    """Test suite for the stationary initial distribution"""

    def test_lgssm_unit_variance(self, rng):
        params = ModelParams.from_natural("lgssm", [0.0, 1.0, 1.0])
        draws = get_model(params).prior_initial_sample(params, rng, size=100_000).x

        assert get_model(params).stationary_variance(params) == pytest.approx(1.0)
        assert np.var(draws) == pytest.approx(1.0, rel=0.02)

    def test_svm_stationary_variance(self, svm_params, rng):
        """phi=0.9, sigma=0.5 gives 0.25 / 0.19"""
        model = get_model(svm_params)
        draws = model.prior_initial_sample(svm_params, rng, size=100_000).x

        assert model.stationary_variance(svm_params) == pytest.approx(1.3158, abs=1e-4)
        assert np.var(draws) == pytest.approx(0.25 / 0.19, rel=0.03)

    def test_garch_initial_variance(self, garch_params, rng):
        """sigma_0^2 starts at the stationary value alpha / (1 - beta - gamma)"""
        x0 = get_model(garch_params).prior_initial_sample(garch_params, rng, size=5)

        np.testing.assert_allclose(x0.aux_variance, 0.1 / 0.15)

    def test_nonstationary_phi(self):
        params = ModelParams.from_natural("svm", [1.2, 1.0, 1.0])

        with pytest.raises(DomainError):
            get_model(params).prior_initial_sample(params, np.random.default_rng(0))

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_initial_grad_matches_finite_differences(self, kind, rng):
        model = MODELS[kind]
        for _ in range(10):
            params = random_params(kind, rng)
            x0 = model.prior_initial_sample(params, rng)
            analytic = model.initial_grad(params, x0)
            numeric = central_difference(
                lambda u: float(model.initial_logpdf(ModelParams.from_unconstrained(kind, u), x0)),
                params.unconstrained,
            )
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6)


class TestDensities:
    """Test suite for transition and emission densities"""

    def test_lgssm_transition_at_mean(self):
        params = ModelParams.from_natural("lgssm", [0.0, 1.0, 1.0])
        value = get_model(params).transition_logpdf(params, LatentState(3.7), LatentState(0.0))

        assert value == pytest.approx(-0.5 * LOG_2PI)

    def test_svm_unit_root_transition(self):
        params = ModelParams.from_natural("svm", [1.0, 1.0, 1.0])
        value = get_model(params).transition_logpdf(params, LatentState(2.0), LatentState(2.0))

        assert value == pytest.approx(-0.5 * LOG_2PI)

    def test_garch_transition_uses_variance_recursion(self, garch_params):
        x_prev = LatentState(0.0, 0.1 / 0.15)
        s = 0.1 + 0.05 * (0.1 / 0.15)
        value = get_model(garch_params).transition_logpdf(garch_params, x_prev, LatentState(0.5, s))

        assert value == pytest.approx(stats.norm.logpdf(0.5, 0.0, np.sqrt(s)))

    def test_garch_transition_rejects_inconsistent_aux(self, garch_params):
        with pytest.raises(ContractError):
            get_model(garch_params).transition_logpdf(garch_params, LatentState(0.0, 0.5), LatentState(0.5, 9.0))

    def test_garch_state_needs_aux(self, garch_params):
        with pytest.raises(ContractError):
            GarchModel.conditional_variance(garch_params, LatentState(0.0))

    @pytest.mark.parametrize("kind", [ModelKind.LGSSM, ModelKind.SVM])
    def test_standard_emission(self, kind):
        params = ModelParams.from_natural(kind, [0.5, 1.0, 1.0])

        assert get_model(params).emission_logpdf(params, LatentState(0.0), 0.0) == pytest.approx(-0.5 * LOG_2PI)

    def test_svm_emission_scale(self):
        params = ModelParams.from_natural("svm", [0.5, 1.0, 0.5])
        var = 0.25 * np.exp(2.0)
        expected = -0.5 * np.log(2 * np.pi * var) - 1.0 / (2.0 * var)

        assert get_model(params).emission_logpdf(params, LatentState(2.0), 1.0) == pytest.approx(expected)

    def test_emission_broadcasts_over_particles(self, svm_params):
        x = LatentState(np.array([0.0, 1.0, -1.0]))

        assert get_model(svm_params).emission_logpdf(svm_params, x, 0.3).shape == (3,)

    def test_lgssm_one_step_predictive_is_exact(self, lgssm_params):
        value = get_model(lgssm_params).one_step_predictive_logpdf(lgssm_params, LatentState(1.0), 0.5)

        assert value == pytest.approx(stats.norm.logpdf(0.5, 0.9, np.sqrt(0.49 + 1.0)))

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_densities_integrate_to_one(self, kind, rng):
        params = random_params(kind, rng)
        model = get_model(params)
        x, x_prev = random_states(kind, params, rng)

        def transition(v):
            return np.exp(float(model.transition_logpdf(params, x_prev, LatentState(v, x.aux_variance))))

        def emission(v):
            return np.exp(float(model.emission_logpdf(params, x, v)))

        centers = (float(model.transition_sample(params, x_prev, rng).x), float(model.emission_sample(params, x, rng)))
        for density, center in zip((transition, emission), centers):
            mass, _ = integrate.quad(
                density, center - 60.0, center + 60.0, points=center + np.arange(-10.0, 11.0), limit=500
            )
            assert mass == pytest.approx(1.0, abs=1e-6)


class TestCompleteDataGradient:
    """Test suite for complete-data gradients"""

    def test_lgssm_phi_gradient_vanishes_on_the_mean(self, lgssm_params):
        grad = get_model(lgssm_params).complete_data_grad(lgssm_params, LatentState(0.9 * 2.0), LatentState(2.0), 0.0)

        assert grad[0] == pytest.approx(0.0)

    def test_lgssm_tau_gradient_at_perfect_observation(self, lgssm_params):
        grad = get_model(lgssm_params).complete_data_grad(lgssm_params, LatentState(0.4), LatentState(0.1), 0.4)

        assert grad[2] == pytest.approx(lgssm_params["tau"])

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_matches_finite_differences(self, kind, rng):
        """Every unconstrained coordinate agrees with central differences at random points"""
        model = MODELS[kind]
        for _ in range(100):
            params = random_params(kind, rng)
            x, x_prev = random_states(kind, params, rng)
            y = rng.normal()
            analytic = model.complete_data_grad(params, x, x_prev, y)
            numeric = central_difference(
                lambda u: float(model.complete_data_logpdf(ModelParams.from_unconstrained(kind, u), x, x_prev, y)),
                params.unconstrained,
            )
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-5)

    def test_vectorized_shape(self, garch_params, rng):
        x_prev = get_model(garch_params).prior_initial_sample(garch_params, rng, size=7)
        x = get_model(garch_params).transition_sample(garch_params, x_prev, rng)

        assert get_model(garch_params).complete_data_grad(garch_params, x, x_prev, 0.1).shape == (7, 4)

    def test_wrong_model_params(self, svm_params):
        with pytest.raises(ContractError):
            MODELS[ModelKind.LGSSM].complete_data_grad(svm_params, LatentState(0.0), LatentState(0.0), 0.0)


class TestPriors:
    """Test suite for prior densities and their gradients"""

    def test_phi_gradient_at_zero(self):
        params = ModelParams.from_natural("lgssm", [0.0, 0.7, 1.0])

        assert get_model(params).log_prior_grad(params)[0] == pytest.approx(0.0)

    def test_gamma_precision_gradient(self, lgssm_params):
        """tau^-1 ~ Gamma(101, 1/101) gives 100 / tau^-1 - 101"""
        b = 1.0 / lgssm_params["tau"]

        assert get_model(lgssm_params).log_prior_grad(lgssm_params)[2] == pytest.approx(100.0 / b - 101.0)

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_matches_finite_differences(self, kind, rng):
        model = MODELS[kind]
        for _ in range(20):
            params = random_params(kind, rng)
            analytic = model.log_prior_grad(params)
            numeric = central_difference(
                lambda u: model.log_prior(ModelParams.from_unconstrained(kind, u)), params.unconstrained
            )
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-5)

    def test_garch_support(self):
        params = ModelParams.from_natural("garch", [2.5, 0.5, 0.5, 0.3])
        model = get_model(params)

        assert not model.in_support(params)
        with pytest.raises(DomainError):
            model.log_prior(params)

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_initial_params_inside_support(self, kind, rng):
        model = MODELS[kind]
        for _ in range(10):
            params = model.sample_initial_params(rng)
            assert model.in_support(params)
            assert np.isfinite(model.log_prior(params))


class TestSimulation:
    """Test suite for forward simulation"""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_shapes(self, kind, all_params, rng):
        trajectory = simulate(all_params[kind], 25, rng)

        assert trajectory.T == 25
        assert trajectory.x.shape == (26,)
        assert (trajectory.aux_variance is not None) == (kind == ModelKind.GARCH)

    def test_lgssm_observation_variance(self, lgssm_params):
        """Var(y) = sigma^2 / (1 - phi^2) + tau^2 = 3.579"""
        y = simulate(lgssm_params, 100_000, np.random.default_rng(3)).y

        assert np.var(y) == pytest.approx(0.49 / 0.19 + 1.0, rel=0.05)

    def test_svm_observations_centered(self, svm_params):
        y = simulate(svm_params, 100_000, np.random.default_rng(5)).y
        se = np.std(y) / np.sqrt(y.shape[0])

        assert abs(np.mean(y)) < 4 * se

    def test_garch_variance_recursion(self, garch_params, rng):
        trajectory = simulate(garch_params, 50, rng)
        alpha, beta, gamma = garch_params.garch_coefficients()
        s = trajectory.aux_variance

        np.testing.assert_allclose(s[1:], alpha + beta * trajectory.x[:-1] ** 2 + gamma * s[:-1])

    def test_same_seed_same_path(self, svm_params):
        a = simulate(svm_params, 30, np.random.default_rng(1))
        b = simulate(svm_params, 30, np.random.default_rng(1))

        np.testing.assert_array_equal(a.y, b.y)

    def test_nonpositive_length(self, lgssm_params, rng):
        with pytest.raises(DomainError):
            simulate(lgssm_params, 0, rng)


class TestLipschitzBound:
    """Test suite for Lipschitz constants of the filtering kernels"""

    def test_lgssm(self, lgssm_params):
        assert lipschitz_bound(lgssm_params) == pytest.approx(0.9 / 1.49)
        assert lipschitz_bound(lgssm_params) == pytest.approx(0.60403, abs=1e-5)

    def test_svm(self, svm_params):
        assert lipschitz_bound(svm_params) == pytest.approx(0.9)

    def test_lgssm_without_memory(self):
        assert lipschitz_bound(ModelParams.from_natural("lgssm", [0.0, 2.0, 0.3])) == 0.0

    def test_garch_unsupported(self, garch_params):
        with pytest.raises(UnsupportedModelError):
            lipschitz_bound(garch_params)

    @pytest.mark.parametrize("phi", [-2.5, -1.2, 0.5, 1.1, 1.9, 3.0])
    @pytest.mark.parametrize("sigma,tau", [(0.5, 0.5), (0.5, 1.0), (0.5, 2.0), (1.0, 0.5), (1.0, 1.0), (1.0, 2.0)])
    def test_lgssm_contracts_below_threshold(self, phi, sigma, tau):
        params = ModelParams.from_natural("lgssm", [phi, sigma, tau])

        assert (lipschitz_bound(params) < 1.0) == (abs(phi) < 1.0 + sigma**2 / tau**2)

    @pytest.mark.parametrize("phi", [-1.5, -0.99, 0.0, 0.7, 0.999, 1.2])
    def test_svm_contracts_when_stationary(self, phi):
        params = ModelParams.from_natural("svm", [phi, 0.5, 0.5])

        assert (lipschitz_bound(params) < 1.0) == (abs(phi) < 1.0)
