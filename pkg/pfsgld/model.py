"""
State space models: LGSSM, stochastic volatility (SVM) and GARCH(1,1) with noise.

Each model provides densities, complete-data gradients, priors, parameter
transforms, forward simulation and (where available) a Lipschitz bound for the
filtered/prior kernels. All density functions broadcast over numpy arrays so the
particle filter can evaluate them on whole particle clouds at once.

Parametrizations (gradients and SGLD live in the unconstrained coordinates):

    LGSSM / SVM   natural (phi, sigma, tau)         unconstrained (phi, 1/sigma, 1/tau)
    GARCH         natural (mu, phi, lambda, tau)    unconstrained (log mu, logit phi, logit lambda, tau)

with GARCH coefficients alpha = mu (1 - phi), beta = phi lambda, gamma = phi (1 - lambda).
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import signal, special, stats

from pfsgld.exceptions import ContractError, DomainError, UnsupportedModelError

ArrayLike = Union[np.ndarray, float]


class ModelKind(str, Enum):
    LGSSM = "lgssm"
    SVM = "svm"
    GARCH = "garch"


NATURAL_NAMES: Dict[ModelKind, Tuple[str, ...]] = {
    ModelKind.LGSSM: ("phi", "sigma", "tau"),
    ModelKind.SVM: ("phi", "sigma", "tau"),
    ModelKind.GARCH: ("mu", "phi", "lambda", "tau"),
}

UNCONSTRAINED_NAMES: Dict[ModelKind, Tuple[str, ...]] = {
    ModelKind.LGSSM: ("phi", "sigma_inv", "tau_inv"),
    ModelKind.SVM: ("phi", "sigma_inv", "tau_inv"),
    ModelKind.GARCH: ("log_mu", "logit_phi", "logit_lambda", "tau"),
}

# Prior hyperparameters
AR_PHI_PRIOR_SCALE = 100.0  # phi ~ N(0, 100 sigma^2)
AR_PRECISION_SHAPE = 101.0  # sigma^-1, tau^-1 ~ Gamma(101, 1/101)
GARCH_MU_UPPER = 2.0  # mu ~ Uniform(0, 2)
GARCH_PHI_BETA = (10.0, 1.5)  # (phi + 1) / 2 ~ Beta(10, 1.5)
GARCH_LAMBDA_BETA = (20.0, 1.5)  # (lambda + 1) / 2 ~ Beta(20, 1.5)
GARCH_TAU2_IG = (2.0, 0.5)  # tau^2 ~ IG(shape 2, scale 0.5)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameter vector of one model, stored in natural coordinates."""

    kind: ModelKind
    natural: np.ndarray

    def __post_init__(self):
        kind = ModelKind(self.kind)
        values = np.array(self.natural, dtype=float).reshape(-1)
        if values.shape[0] != len(NATURAL_NAMES[kind]):
            raise DomainError(
                f"{kind.value} expects {len(NATURAL_NAMES[kind])} parameters, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError(f"Non-finite parameter values: {values}")
        values.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "natural", values)
        self._validate()

    def _validate(self):
        p = self.as_dict()
        if p["tau"] <= 0:
            raise DomainError(f"tau must be > 0, got {p['tau']}")
        if self.kind == ModelKind.GARCH:
            if p["mu"] <= 0:
                raise DomainError(f"mu must be > 0, got {p['mu']}")
            for name in ("phi", "lambda"):
                if not 0.0 < p[name] < 1.0:
                    raise DomainError(f"{name} must lie in (0, 1), got {p[name]}")
        elif p["sigma"] <= 0:
            raise DomainError(f"sigma must be > 0, got {p['sigma']}")

    @classmethod
    def from_natural(cls, kind: Union[ModelKind, str], values) -> "ModelParams":
        return cls(ModelKind(kind), np.asarray(values, dtype=float))

    @classmethod
    def from_unconstrained(cls, kind: Union[ModelKind, str], values) -> "ModelParams":
        kind = ModelKind(kind)
        u = np.asarray(values, dtype=float).reshape(-1)
        if u.shape[0] != len(UNCONSTRAINED_NAMES[kind]):
            raise DomainError(f"{kind.value} expects {len(UNCONSTRAINED_NAMES[kind])} coordinates")
        if not np.all(np.isfinite(u)):
            raise DomainError(f"Non-finite unconstrained values: {u}")
        if kind == ModelKind.GARCH:
            natural = [np.exp(u[0]), special.expit(u[1]), special.expit(u[2]), u[3]]
        else:
            if u[1] <= 0 or u[2] <= 0:
                raise DomainError(f"sigma_inv and tau_inv must be > 0, got {u[1:]}")
            natural = [u[0], 1.0 / u[1], 1.0 / u[2]]
        return cls(kind, np.asarray(natural))

    @classmethod
    def from_garch_coefficients(cls, alpha: float, beta: float, gamma: float, tau: float) -> "ModelParams":
        """Build GARCH params from (alpha, beta, gamma, tau)."""
        if min(alpha, beta, gamma) <= 0:
            raise DomainError("alpha, beta and gamma must all be > 0")
        phi = beta + gamma
        if phi >= 1:
            raise DomainError(f"beta + gamma must be < 1 for stationarity, got {phi}")
        return cls(ModelKind.GARCH, np.array([alpha / (1.0 - phi), phi, beta / phi, tau]))

    @property
    def names(self) -> Tuple[str, ...]:
        return NATURAL_NAMES[self.kind]

    @property
    def unconstrained_names(self) -> Tuple[str, ...]:
        return UNCONSTRAINED_NAMES[self.kind]

    @property
    def dim(self) -> int:
        return self.natural.shape[0]

    @property
    def unconstrained(self) -> np.ndarray:
        p = self.natural
        if self.kind == ModelKind.GARCH:
            return np.array([np.log(p[0]), special.logit(p[1]), special.logit(p[2]), p[3]])
        return np.array([p[0], 1.0 / p[1], 1.0 / p[2]])

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, (float(v) for v in self.natural)))

    def __getitem__(self, name: str) -> float:
        return self.as_dict()[name]

    def garch_coefficients(self) -> Tuple[float, float, float]:
        if self.kind != ModelKind.GARCH:
            raise UnsupportedModelError(f"{self.kind.value} has no GARCH coefficients")
        mu, phi, lam, _ = self.natural
        return mu * (1 - phi), phi * lam, phi * (1 - lam)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.natural, other.natural)

    def __hash__(self):
        return hash((self.kind, self.natural.tobytes()))

    def __repr__(self):
        values = ", ".join(f"{k}={v:.6g}" for k, v in self.as_dict().items())
        return f"ModelParams({self.kind.value}: {values})"


@dataclass(frozen=True)
class LatentState:
    """Latent state x_t; GARCH also carries sigma_t^2 as aux_variance.

    Fields may be scalars or arrays (one entry per particle).
    """

    x: ArrayLike
    aux_variance: Optional[ArrayLike] = None

    def __post_init__(self):
        if self.aux_variance is not None and np.any(np.asarray(self.aux_variance) <= 0):
            raise ContractError("aux_variance must be > 0")

    def take(self, index) -> "LatentState":
        aux = None if self.aux_variance is None else np.asarray(self.aux_variance)[index]
        return LatentState(np.asarray(self.x)[index], aux)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Simulated path: latents x_0..x_T (plus sigma_t^2 for GARCH) and observations y_1..y_T."""

    x: np.ndarray
    y: np.ndarray
    aux_variance: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0] + 1:
            raise ContractError(f"expected {self.y.shape[0] + 1} latents, got {self.x.shape[0]}")
        if self.aux_variance is not None and self.aux_variance.shape != self.x.shape:
            raise ContractError("aux_variance must align with latents")
        if not np.all(np.isfinite(self.y)):
            raise ContractError("observations must be finite")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def latents(self) -> LatentState:
        return LatentState(self.x, self.aux_variance)

    def latent(self, t: int) -> LatentState:
        aux = None if self.aux_variance is None else float(self.aux_variance[t])
        return LatentState(float(self.x[t]), aux)


class StateSpaceModel(ABC):
    """Common interface of the three models."""

    kind: ModelKind
    supports_optimal_proposal: bool = False

    def _check(self, params: ModelParams):
        if params.kind != self.kind:
            raise ContractError(f"{self.kind.value} model got {params.kind.value} parameters")

    @property
    def dim(self) -> int:
        return len(NATURAL_NAMES[self.kind])

    # initial distribution

    @abstractmethod
    def stationary_variance(self, params: ModelParams) -> float:
        """Variance of the stationary law of x_0."""

    @abstractmethod
    def prior_initial_sample(self, params: ModelParams, rng: np.random.Generator, size=None) -> LatentState:
        """Draw x_0 from the stationary initial distribution."""

    @abstractmethod
    def initial_logpdf(self, params: ModelParams, x0: LatentState) -> ArrayLike:
        """log nu(x_0 | theta)."""

    @abstractmethod
    def initial_grad(self, params: ModelParams, x0: LatentState) -> np.ndarray:
        """Gradient of log nu(x_0 | theta) in unconstrained coordinates."""

    # transitions and emissions

    @abstractmethod
    def transition_sample(self, params: ModelParams, x_prev: LatentState, rng: np.random.Generator) -> LatentState:
        """Draw x_t given x_{t-1}."""

    @abstractmethod
    def transition_logpdf(self, params: ModelParams, x_prev: LatentState, x: LatentState) -> ArrayLike:
        """log p(x_t | x_{t-1}, theta)."""

    @abstractmethod
    def emission_logpdf(self, params: ModelParams, x: LatentState, y: ArrayLike) -> ArrayLike:
        """log p(y_t | x_t, theta)."""

    @abstractmethod
    def emission_sample(self, params: ModelParams, x: LatentState, rng: np.random.Generator) -> ArrayLike:
        """Draw y_t given x_t."""

    @abstractmethod
    def complete_data_logpdf(self, params: ModelParams, x: LatentState, x_prev: LatentState, y: ArrayLike) -> ArrayLike:
        """log p(y_t, x_t | x_{t-1}, theta) as a function of theta."""

    @abstractmethod
    def complete_data_grad(self, params: ModelParams, x: LatentState, x_prev: LatentState, y: ArrayLike) -> np.ndarray:
        """Gradient of the complete-data loglikelihood in unconstrained coordinates, shape (..., dim)."""

    @abstractmethod
    def one_step_predictive_logpdf(
        self, params: ModelParams, x_prev: LatentState, y: ArrayLike, rng: np.random.Generator
    ) -> ArrayLike:
        """log p(y_t | x_{t-1}, theta); models without a closed form use a sampled plug-in."""

    # priors

    @abstractmethod
    def in_support(self, params: ModelParams) -> bool:
        """True when the prior density is positive and the stationary initial law exists."""

    @abstractmethod
    def log_prior(self, params: ModelParams) -> float:
        """Log prior density in unconstrained coordinates (including Jacobian terms)."""

    @abstractmethod
    def log_prior_grad(self, params: ModelParams) -> np.ndarray:
        """Gradient of log_prior in unconstrained coordinates."""

    @abstractmethod
    def sample_initial_params(self, rng: np.random.Generator) -> ModelParams:
        """Random starting point for a sampler."""

    @abstractmethod
    def simulate(self, params: ModelParams, T: int, rng: np.random.Generator) -> Trajectory:
        """Forward simulation of T observations."""

    def lipschitz_bound(self, params: ModelParams) -> float:
        raise UnsupportedModelError(
            f"No Lipschitz bound for {self.kind.value}: the model is not log-concave"
        )

    # optimal instrumental proposal, for models that have one

    def optimal_proposal(self, params: ModelParams, x_prev: LatentState, y: float, rng: np.random.Generator):
        """Return (x_t draw, unnormalized log weight)."""
        raise UnsupportedModelError(f"{self.kind.value} has no optimal instrumental proposal")

    def log_posterior(self, params: ModelParams, loglik: float) -> float:
        return loglik + self.log_prior(params)


def _gamma_precision_logpdf(value: float) -> float:
    return float(stats.gamma.logpdf(value, AR_PRECISION_SHAPE, scale=1.0 / AR_PRECISION_SHAPE))


class _AutoregressiveModel(StateSpaceModel):
    """Shared AR(1) latent dynamics of the LGSSM and SVM."""

    def stationary_variance(self, params: ModelParams) -> float:
        self._check(params)
        phi, sigma, _ = params.natural
        if abs(phi) >= 1:
            raise DomainError(f"Stationary initial law needs |phi| < 1, got phi={phi}")
        return sigma**2 / (1.0 - phi**2)

    def prior_initial_sample(self, params, rng, size=None):
        sd = np.sqrt(self.stationary_variance(params))
        return LatentState(rng.normal(0.0, sd, size=size))

    def initial_logpdf(self, params, x0):
        return stats.norm.logpdf(x0.x, 0.0, np.sqrt(self.stationary_variance(params)))

    def initial_grad(self, params, x0):
        phi, sigma, _ = params.natural
        v = self.stationary_variance(params)
        ratio = np.asarray(x0.x) ** 2 / v
        g_phi = (ratio - 1.0) * phi / (1.0 - phi**2)
        g_sigma_inv = (1.0 - ratio) * sigma
        return np.stack(np.broadcast_arrays(g_phi, g_sigma_inv, np.zeros_like(g_phi)), axis=-1)

    def transition_sample(self, params, x_prev, rng):
        phi, sigma, _ = params.natural
        x_prev = np.asarray(x_prev.x)
        return LatentState(phi * x_prev + sigma * rng.standard_normal(x_prev.shape))

    def transition_logpdf(self, params, x_prev, x):
        self._check(params)
        phi, sigma, _ = params.natural
        return stats.norm.logpdf(x.x, phi * np.asarray(x_prev.x), sigma)

    def complete_data_logpdf(self, params, x, x_prev, y):
        return self.transition_logpdf(params, x_prev, x) + self.emission_logpdf(params, x, y)

    def _latent_grads(self, params, x, x_prev):
        phi, sigma, _ = params.natural
        x_prev = np.asarray(x_prev.x)
        resid = np.asarray(x.x) - phi * x_prev
        g_phi = resid * x_prev / sigma**2
        g_sigma_inv = (sigma**2 - resid**2) / sigma
        return g_phi, g_sigma_inv

    def in_support(self, params):
        self._check(params)
        return abs(params["phi"]) < 1.0

    def log_prior(self, params):
        self._check(params)
        phi, sigma, tau = params.natural
        return float(
            stats.norm.logpdf(phi, 0.0, np.sqrt(AR_PHI_PRIOR_SCALE) * sigma)
            + _gamma_precision_logpdf(1.0 / sigma)
            + _gamma_precision_logpdf(1.0 / tau)
        )

    def log_prior_grad(self, params):
        self._check(params)
        phi, sigma, tau = params.natural
        a, b = 1.0 / sigma, 1.0 / tau
        k = AR_PRECISION_SHAPE
        g_phi = -phi * a**2 / AR_PHI_PRIOR_SCALE
        # phi's prior scale depends on sigma, hence the 1/a - phi^2 a / 100 part
        g_a = (1.0 / a - phi**2 * a / AR_PHI_PRIOR_SCALE) + (k - 1.0) / a - k
        g_b = (k - 1.0) / b - k
        return np.array([g_phi, g_a, g_b])

    def sample_initial_params(self, rng, max_tries: int = 1000):
        for _ in range(max_tries):
            sigma = 1.0 / rng.gamma(2.0, 0.5)
            tau = 1.0 / rng.gamma(2.0, 0.5)
            phi = rng.normal(0.0, sigma)
            if abs(phi) < 1.0:
                return ModelParams(self.kind, np.array([phi, sigma, tau]))
        raise DomainError("Could not draw a stationary initial parameter")

    def simulate(self, params, T, rng):
        self._check(params)
        if T < 1:
            raise DomainError(f"T must be a positive integer, got {T}")
        phi, sigma, _ = params.natural
        x0 = float(self.prior_initial_sample(params, rng).x)
        innovations = sigma * rng.standard_normal(T)
        path = signal.lfilter([1.0], [1.0, -phi], innovations, zi=[phi * x0])[0]
        x = np.concatenate([[x0], path])
        y = self.emission_sample(params, LatentState(x[1:]), rng)
        return Trajectory(x=x, y=np.asarray(y, dtype=float))


class LinearGaussianSSM(_AutoregressiveModel):
    """x_t ~ N(phi x_{t-1}, sigma^2), y_t ~ N(x_t, tau^2)."""

    kind = ModelKind.LGSSM
    supports_optimal_proposal = True

    def emission_logpdf(self, params, x, y):
        return stats.norm.logpdf(y, x.x, params["tau"])

    def emission_sample(self, params, x, rng):
        x = np.asarray(x.x)
        return x + params["tau"] * rng.standard_normal(x.shape)

    def complete_data_grad(self, params, x, x_prev, y):
        self._check(params)
        tau = params["tau"]
        g_phi, g_sigma_inv = self._latent_grads(params, x, x_prev)
        g_tau_inv = (tau**2 - (y - np.asarray(x.x)) ** 2) / tau
        return np.stack(np.broadcast_arrays(g_phi, g_sigma_inv, g_tau_inv), axis=-1)

    def one_step_predictive_logpdf(self, params, x_prev, y, rng=None):
        phi, sigma, tau = params.natural
        return stats.norm.logpdf(y, phi * np.asarray(x_prev.x), np.sqrt(sigma**2 + tau**2))

    def optimal_proposal(self, params, x_prev, y, rng):
        phi, sigma, tau = params.natural
        x_prev = np.asarray(x_prev.x)
        total = sigma**2 + tau**2
        mean = (tau**2 * phi * x_prev + sigma**2 * y) / total
        sd = np.sqrt(sigma**2 * tau**2 / total)
        x = mean + sd * rng.standard_normal(x_prev.shape)
        log_weight = stats.norm.logpdf(y, phi * x_prev, np.sqrt(total))
        return LatentState(x), log_weight

    def lipschitz_bound(self, params):
        self._check(params)
        phi, sigma, tau = params.natural
        return abs(phi) * tau**2 / (sigma**2 + tau**2)


class StochasticVolatilityModel(_AutoregressiveModel):
    """x_t ~ N(phi x_{t-1}, sigma^2), y_t ~ N(0, exp(x_t) tau^2)."""

    kind = ModelKind.SVM

    def emission_logpdf(self, params, x, y):
        return stats.norm.logpdf(y, 0.0, params["tau"] * np.exp(0.5 * np.asarray(x.x)))

    def emission_sample(self, params, x, rng):
        x = np.asarray(x.x)
        return params["tau"] * np.exp(0.5 * x) * rng.standard_normal(x.shape)

    def complete_data_grad(self, params, x, x_prev, y):
        self._check(params)
        tau = params["tau"]
        g_phi, g_sigma_inv = self._latent_grads(params, x, x_prev)
        g_tau_inv = (tau**2 - y**2 * np.exp(-np.asarray(x.x))) / tau
        return np.stack(np.broadcast_arrays(g_phi, g_sigma_inv, g_tau_inv), axis=-1)

    def one_step_predictive_logpdf(self, params, x_prev, y, rng):
        # no closed form: propagate one draw per particle and evaluate the emission
        return self.emission_logpdf(params, self.transition_sample(params, x_prev, rng), y)

    def lipschitz_bound(self, params):
        self._check(params)
        return abs(params["phi"])


class GarchModel(StateSpaceModel):
    """GARCH(1,1) latent returns observed with Gaussian noise.

    sigma_t^2 = alpha + beta x_{t-1}^2 + gamma sigma_{t-1}^2,  x_t ~ N(0, sigma_t^2),  y_t ~ N(x_t, tau^2)
    """

    kind = ModelKind.GARCH
    supports_optimal_proposal = True

    @staticmethod
    def conditional_variance(params: ModelParams, x_prev: LatentState) -> ArrayLike:
        if x_prev.aux_variance is None:
            raise ContractError("GARCH states must carry aux_variance")
        alpha, beta, gamma = params.garch_coefficients()
        return alpha + beta * np.asarray(x_prev.x) ** 2 + gamma * np.asarray(x_prev.aux_variance)

    def stationary_variance(self, params):
        self._check(params)
        alpha, beta, gamma = params.garch_coefficients()
        return alpha / (1.0 - beta - gamma)

    def prior_initial_sample(self, params, rng, size=None):
        v = self.stationary_variance(params)
        x0 = rng.normal(0.0, np.sqrt(v), size=size)
        return LatentState(x0, np.full_like(np.asarray(x0, dtype=float), v))

    def initial_logpdf(self, params, x0):
        return stats.norm.logpdf(x0.x, 0.0, np.sqrt(self.stationary_variance(params)))

    def initial_grad(self, params, x0):
        # sigma_0^2 = alpha / (1 - beta - gamma) = mu, independent of phi and lambda
        mu = params["mu"]
        g_log_mu = 0.5 * (np.asarray(x0.x) ** 2 / mu - 1.0)
        zeros = np.zeros_like(g_log_mu)
        return np.stack(np.broadcast_arrays(g_log_mu, zeros, zeros, zeros), axis=-1)

    def transition_sample(self, params, x_prev, rng):
        s = self.conditional_variance(params, x_prev)
        return LatentState(np.sqrt(s) * rng.standard_normal(np.shape(s)), s)

    def transition_logpdf(self, params, x_prev, x):
        self._check(params)
        s = self.conditional_variance(params, x_prev)
        if x.aux_variance is None or not np.allclose(x.aux_variance, s, rtol=1e-9, atol=0.0):
            raise ContractError("GARCH aux_variance does not match the variance recursion")
        return stats.norm.logpdf(x.x, 0.0, np.sqrt(s))

    def emission_logpdf(self, params, x, y):
        return stats.norm.logpdf(y, x.x, params["tau"])

    def emission_sample(self, params, x, rng):
        x = np.asarray(x.x)
        return x + params["tau"] * rng.standard_normal(x.shape)

    def complete_data_logpdf(self, params, x, x_prev, y):
        s = self.conditional_variance(params, x_prev)
        return stats.norm.logpdf(x.x, 0.0, np.sqrt(s)) + self.emission_logpdf(params, x, y)

    def complete_data_grad(self, params, x, x_prev, y):
        self._check(params)
        mu, phi, lam, tau = params.natural
        s = self.conditional_variance(params, x_prev)
        x_t = np.asarray(x.x)
        xp2 = np.asarray(x_prev.x) ** 2
        sp = np.asarray(x_prev.aux_variance)
        c = (x_t**2 - s) / (2.0 * s**2)
        g_log_mu = c * (1.0 - phi) * mu
        g_logit_phi = c * (lam * xp2 + (1.0 - lam) * sp - mu) * phi * (1.0 - phi)
        g_logit_lambda = c * phi * (xp2 - sp) * lam * (1.0 - lam)
        g_tau = ((y - x_t) ** 2 - tau**2) / tau**3
        return np.stack(np.broadcast_arrays(g_log_mu, g_logit_phi, g_logit_lambda, g_tau), axis=-1)

    def one_step_predictive_logpdf(self, params, x_prev, y, rng=None):
        s = self.conditional_variance(params, x_prev)
        return stats.norm.logpdf(y, 0.0, np.sqrt(s + params["tau"] ** 2))

    def optimal_proposal(self, params, x_prev, y, rng):
        tau2 = params["tau"] ** 2
        s = self.conditional_variance(params, x_prev)
        mean = s * y / (s + tau2)
        sd = np.sqrt(s * tau2 / (s + tau2))
        x = mean + sd * rng.standard_normal(np.shape(s))
        log_weight = stats.norm.logpdf(y, 0.0, np.sqrt(s + tau2))
        return LatentState(x, s), log_weight

    def in_support(self, params):
        self._check(params)
        return params["mu"] < GARCH_MU_UPPER

    def log_prior(self, params):
        self._check(params)
        if not self.in_support(params):
            raise DomainError(f"mu must lie in (0, {GARCH_MU_UPPER}), got {params['mu']}")
        mu, phi, lam, tau = params.natural
        a_ig, b_ig = GARCH_TAU2_IG
        value = stats.uniform.logpdf(mu, 0.0, GARCH_MU_UPPER) + np.log(mu)
        for v, (a, b) in ((phi, GARCH_PHI_BETA), (lam, GARCH_LAMBDA_BETA)):
            value += stats.beta.logpdf((v + 1.0) / 2.0, a, b) + np.log(0.5) + np.log(v) + np.log1p(-v)
        value += stats.invgamma.logpdf(tau**2, a_ig, scale=b_ig) + np.log(2.0 * tau)
        return float(value)

    def log_prior_grad(self, params):
        self._check(params)
        if not self.in_support(params):
            raise DomainError(f"mu must lie in (0, {GARCH_MU_UPPER}), got {params['mu']}")
        _, phi, lam, tau = params.natural
        a_ig, b_ig = GARCH_TAU2_IG

        def logit_grad(v, a, b):
            d_natural = (a - 1.0) / (1.0 + v) - (b - 1.0) / (1.0 - v)
            return d_natural * v * (1.0 - v) + (1.0 - 2.0 * v)

        return np.array(
            [
                1.0,
                logit_grad(phi, *GARCH_PHI_BETA),
                logit_grad(lam, *GARCH_LAMBDA_BETA),
                -(2.0 * a_ig + 1.0) / tau + 2.0 * b_ig / tau**3,
            ]
        )

    def sample_initial_params(self, rng, max_tries: int = 1000):
        a_ig, b_ig = GARCH_TAU2_IG
        for _ in range(max_tries):
            mu = rng.uniform(0.0, GARCH_MU_UPPER)
            phi = 2.0 * rng.beta(*GARCH_PHI_BETA) - 1.0
            lam = 2.0 * rng.beta(*GARCH_LAMBDA_BETA) - 1.0
            tau2 = stats.invgamma.rvs(a_ig, scale=b_ig, random_state=rng)
            if mu > 0 and 0 < phi < 1 and 0 < lam < 1:
                return ModelParams(self.kind, np.array([mu, phi, lam, np.sqrt(tau2)]))
        raise DomainError("Could not draw an initial GARCH parameter inside the support")

    def simulate(self, params, T, rng):
        self._check(params)
        if T < 1:
            raise DomainError(f"T must be a positive integer, got {T}")
        alpha, beta, gamma = params.garch_coefficients()
        x = np.empty(T + 1)
        s = np.empty(T + 1)
        s[0] = self.stationary_variance(params)
        z = rng.standard_normal(T + 1)
        x[0] = np.sqrt(s[0]) * z[0]
        for t in range(1, T + 1):
            s[t] = alpha + beta * x[t - 1] ** 2 + gamma * s[t - 1]
            x[t] = np.sqrt(s[t]) * z[t]
        y = self.emission_sample(params, LatentState(x[1:]), rng)
        return Trajectory(x=x, y=np.asarray(y, dtype=float), aux_variance=s)


MODELS: Dict[ModelKind, StateSpaceModel] = {
    ModelKind.LGSSM: LinearGaussianSSM(),
    ModelKind.SVM: StochasticVolatilityModel(),
    ModelKind.GARCH: GarchModel(),
}

# Synthetic-data parameters used throughout the experiments
SYNTHETIC_PARAMS: Dict[ModelKind, ModelParams] = {
    ModelKind.LGSSM: ModelParams(ModelKind.LGSSM, np.array([0.9, 0.7, 1.0])),
    ModelKind.SVM: ModelParams(ModelKind.SVM, np.array([0.9, 0.5, 0.5])),
    ModelKind.GARCH: ModelParams.from_garch_coefficients(0.1, 0.8, 0.05, 0.3),
}

# Chain starting points for the exchange-rate experiments
EXCHANGE_RATE_INIT: Dict[ModelKind, ModelParams] = {
    ModelKind.SVM: ModelParams(ModelKind.SVM, np.array([0.9, 1.73, 0.1])),
    ModelKind.GARCH: ModelParams.from_unconstrained(ModelKind.GARCH, [-0.4, 1.7, 2.7, 0.1]),
}


def get_model(kind: Union[ModelKind, str, ModelParams]) -> StateSpaceModel:
    if isinstance(kind, ModelParams):
        kind = kind.kind
    return MODELS[ModelKind(kind)]


def prior_initial_sample(params: ModelParams, rng: np.random.Generator) -> LatentState:
    return get_model(params).prior_initial_sample(params, rng)


def transition_logpdf(params: ModelParams, x_prev: LatentState, x: LatentState) -> ArrayLike:
    return get_model(params).transition_logpdf(params, x_prev, x)


def emission_logpdf(params: ModelParams, x: LatentState, y: ArrayLike) -> ArrayLike:
    return get_model(params).emission_logpdf(params, x, y)


def complete_data_grad(params: ModelParams, x: LatentState, x_prev: LatentState, y: ArrayLike) -> np.ndarray:
    return get_model(params).complete_data_grad(params, x, x_prev, y)


def log_prior_grad(params: ModelParams) -> np.ndarray:
    return get_model(params).log_prior_grad(params)


def simulate(params: ModelParams, T: int, rng: np.random.Generator) -> Trajectory:
    return get_model(params).simulate(params, T, rng)


def lipschitz_bound(params: ModelParams) -> float:
    return get_model(params).lipschitz_bound(params)
