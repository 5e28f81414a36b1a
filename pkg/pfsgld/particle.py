"""
Sequential importance resampling with running pairwise statistics.

The filter resamples at every step, propagates through the chosen proposal,
reweights in log space and accumulates H_t^(i) = H_{t-1}^(a_i) + h_t(x_t^(i), x_{t-1}^(a_i)).
Only the running statistic is stored, never the particle genealogy.
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Protocol

import numpy as np
from loguru import logger
from scipy.special import logsumexp

from pfsgld.exceptions import DegenerateFilterError, DomainError, NumericError
from pfsgld.model import LatentState, ModelParams, StateSpaceModel


class ProposalKind(str, Enum):
    PRIOR = "prior"
    OPTIMAL = "optimal"


class ResamplingKind(str, Enum):
    MULTINOMIAL = "multinomial"
    STRATIFIED = "stratified"
    RESIDUAL = "residual"


class PairwiseStatistic(Protocol):
    """Additive statistic h_k(x_k, x_{k-1}) over a filter window, k = 1..len(window)."""

    dim: int

    def initial(self, x0: LatentState) -> Optional[np.ndarray]:
        """Contribution of x_0, shape (N, dim), or None for zero."""

    def __call__(self, k: int, x: LatentState, x_prev: LatentState) -> Optional[np.ndarray]:
        """Contribution at window position k, shape (N, dim), or None for zero."""


def default_proposal(model: StateSpaceModel) -> ProposalKind:
    return ProposalKind.OPTIMAL if model.supports_optimal_proposal else ProposalKind.PRIOR


def _normalized_weights(log_weights: np.ndarray) -> np.ndarray:
    log_weights = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(log_weights)) or np.any(np.isposinf(log_weights)):
        raise NumericError("Cannot resample from NaN or infinite log-weights")
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        raise NumericError("Cannot resample: every weight is zero")
    return np.exp(log_weights - total)


def _search(cumulative: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cumulative, u, side="right")
    return np.minimum(idx, cumulative.shape[0] - 1)


def resample(log_weights, kind: ResamplingKind, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    """Draw n ancestor indices (default: as many as there are weights)."""
    w = _normalized_weights(log_weights)
    N = w.shape[0] if n is None else n
    cumulative = np.cumsum(w)
    cumulative /= cumulative[-1]
    kind = ResamplingKind(kind)

    if kind == ResamplingKind.MULTINOMIAL:
        return _search(cumulative, rng.random(N))
    if kind == ResamplingKind.STRATIFIED:
        return _search(cumulative, (np.arange(N) + rng.random(N)) / N)

    # residual: deterministic floor(N w) copies, multinomial on the remainder
    expected = N * w
    counts = np.floor(expected).astype(int)
    remainder = N - counts.sum()
    if remainder > 0:
        residual = expected - counts
        residual_cdf = np.cumsum(residual)
        residual_cdf /= residual_cdf[-1]
        extra = _search(residual_cdf, rng.random(remainder))
        counts += np.bincount(extra, minlength=w.shape[0])
    return np.repeat(np.arange(w.shape[0]), counts)


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    particles: LatentState
    log_weights: np.ndarray
    stats: np.ndarray
    ancestors: np.ndarray
    log_marginal: float = 0.0
    t: int = 0

    @property
    def N(self) -> int:
        return self.log_weights.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def weighted_stats(self) -> np.ndarray:
        return self.weights @ self.stats

    @classmethod
    def initial(
        cls,
        model: StateSpaceModel,
        params: ModelParams,
        N: int,
        rng: np.random.Generator,
        statistic: Optional[PairwiseStatistic] = None,
    ) -> "ParticleCloud":
        if N < 2:
            raise DomainError(f"N must be >= 2, got {N}")
        x0 = model.prior_initial_sample(params, rng, size=N)
        dim = statistic.dim if statistic is not None else 0
        stats = np.zeros((N, dim))
        if statistic is not None:
            h0 = statistic.initial(x0)
            if h0 is not None:
                stats = stats + h0
        return cls(
            particles=x0,
            log_weights=np.full(N, -np.log(N)),
            stats=stats,
            ancestors=np.arange(N),
        )


def step(
    cloud: ParticleCloud,
    model: StateSpaceModel,
    params: ModelParams,
    y_t: float,
    h_t=None,
    proposal: ProposalKind = ProposalKind.PRIOR,
    resampling: ResamplingKind = ResamplingKind.MULTINOMIAL,
    rng: Optional[np.random.Generator] = None,
) -> ParticleCloud:
    """One SIR iteration. h_t maps (x_t, x_{t-1}) to an (N, dim) increment or None."""
    t = cloud.t + 1
    ancestors = resample(cloud.log_weights, resampling, rng)
    x_prev = cloud.particles.take(ancestors)

    if ProposalKind(proposal) == ProposalKind.OPTIMAL:
        x, log_w = model.optimal_proposal(params, x_prev, y_t, rng)
    else:
        x = model.transition_sample(params, x_prev, rng)
        log_w = model.emission_logpdf(params, x, y_t)

    log_w = np.where(np.isnan(log_w), -np.inf, np.asarray(log_w, dtype=float))
    if np.any(np.isposinf(log_w)):
        raise NumericError(f"Infinite importance weight at t={t}")
    total = logsumexp(log_w)
    if not np.isfinite(total):
        logger.warning("Particle filter degenerated at t={}", t)
        raise DegenerateFilterError(t)

    stats = cloud.stats[ancestors]
    if h_t is not None:
        increment = h_t(x, x_prev)
        if increment is not None:
            stats = stats + increment

    return replace(
        cloud,
        particles=x,
        log_weights=log_w - total,
        stats=stats,
        ancestors=ancestors,
        log_marginal=cloud.log_marginal + total - np.log(cloud.N),
        t=t,
    )


@dataclass(frozen=True, eq=False)
class FilterResult:
    H: np.ndarray
    loglik: float
    cloud: ParticleCloud


def run_filter(
    model: StateSpaceModel,
    params: ModelParams,
    y_window,
    statistic: Optional[PairwiseStatistic],
    N: int,
    proposal: Optional[ProposalKind] = None,
    resampling: ResamplingKind = ResamplingKind.MULTINOMIAL,
    rng: Optional[np.random.Generator] = None,
) -> FilterResult:
    """Filter y_window from the stationary initial law and return the weighted statistic."""
    y_window = np.asarray(y_window, dtype=float).reshape(-1)
    if y_window.shape[0] == 0:
        raise DomainError("filter window must be nonempty")
    proposal = default_proposal(model) if proposal is None else ProposalKind(proposal)
    rng = np.random.default_rng() if rng is None else rng

    cloud = ParticleCloud.initial(model, params, N, rng, statistic)
    for k, y_t in enumerate(y_window, start=1):
        h_t = None if statistic is None else (lambda x, xp, k=k: statistic(k, x, xp))
        cloud = step(cloud, model, params, y_t, h_t, proposal, resampling, rng)
    return FilterResult(H=cloud.weighted_stats(), loglik=float(cloud.log_marginal), cloud=cloud)


def predictive_loglik(
    model: StateSpaceModel,
    params: ModelParams,
    y_test,
    r: int,
    N: int,
    rng: np.random.Generator,
    resampling: ResamplingKind = ResamplingKind.MULTINOMIAL,
    proposal: Optional[ProposalKind] = None,
) -> float:
    """Particle estimate of sum_t log p(y_{t+r-1} | y_{1:t-1}).

    At each t the filtered cloud at t-1 is pushed through r-1 sampled transitions
    and the one-step predictive density of y_{t+r-1} is averaged over particles.
    Terms whose target index lies past the end of y_test are omitted.
    """
    if r < 1:
        raise DomainError(f"r must be >= 1, got {r}")
    if N < 2:
        raise DomainError(f"N must be >= 2, got {N}")
    y_test = np.asarray(y_test, dtype=float).reshape(-1)
    T = y_test.shape[0]
    if T == 0:
        return 0.0
    proposal = default_proposal(model) if proposal is None else ProposalKind(proposal)

    cloud = ParticleCloud.initial(model, params, N, rng)
    total = 0.0
    for t in range(1, T + 1):
        target = t + r - 1
        if target > T:
            break
        x = cloud.particles
        for _ in range(r - 1):
            x = model.transition_sample(params, x, rng)
        log_pred = model.one_step_predictive_logpdf(params, x, y_test[target - 1], rng)
        # log of the weighted mean density, not the weighted mean log-density
        total += float(logsumexp(cloud.log_weights + log_pred))
        cloud = step(cloud, model, params, y_test[t - 1], None, proposal, resampling, rng)
    return total


def heldout_loglik(
    model: StateSpaceModel,
    params: ModelParams,
    y_test,
    N: int,
    rng: np.random.Generator,
    resampling: ResamplingKind = ResamplingKind.MULTINOMIAL,
    proposal: Optional[ProposalKind] = None,
) -> float:
    """Particle estimate of log p(y_test | theta) built from one-step predictive densities."""
    return predictive_loglik(model, params, y_test, 1, N, rng, resampling, proposal)
