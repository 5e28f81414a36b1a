"""
Exact inference for the scalar LGSSM.

Filtering, RTS smoothing, marginal likelihood and Fisher-identity scores. These
are the N = infinity counterparts of the particle estimators and the ground truth
for the bias experiments. Every routine works on a single observation window
whose first latent x_0 follows the stationary law N(0, sigma^2 / (1 - phi^2)).
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from pfsgld.estimates import EstimateMeta, GradientEstimate
from pfsgld.exceptions import DomainError, UnsupportedModelError
from pfsgld.model import ModelKind, ModelParams, get_model


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian marginals of x_0..x_T.

    cross_covariance[t] holds Cov(x_t, x_{t-1} | y) for t >= 1 and is only
    present for smoothed beliefs (entry 0 is unused and set to 0).
    """

    mean: np.ndarray
    variance: np.ndarray
    cross_covariance: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.mean.shape[0]

    def second_moment(self) -> np.ndarray:
        return self.variance + self.mean**2

    def lag_one_moment(self) -> np.ndarray:
        """E[x_t x_{t-1}] for t = 1..T."""
        if self.cross_covariance is None:
            raise DomainError("lag-one moments need smoothed beliefs")
        return self.cross_covariance[1:] + self.mean[1:] * self.mean[:-1]


@dataclass(frozen=True, eq=False)
class _FilterPass:
    filtered: GaussianBelief
    predicted_mean: np.ndarray
    predicted_variance: np.ndarray
    loglik: float


def _check_params(params: ModelParams, y) -> np.ndarray:
    if params.kind != ModelKind.LGSSM:
        raise UnsupportedModelError(f"Kalman recursions need an LGSSM, got {params.kind.value}")
    y = np.asarray(y, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise DomainError("observations must be finite")
    return y


def _forward(params: ModelParams, y: np.ndarray) -> _FilterPass:
    phi, sigma, tau = params.natural
    T = y.shape[0]
    m = np.empty(T + 1)
    P = np.empty(T + 1)
    m_pred = np.zeros(T + 1)
    P_pred = np.zeros(T + 1)
    m[0] = 0.0
    P[0] = get_model(params).stationary_variance(params)
    m_pred[0], P_pred[0] = m[0], P[0]
    loglik = 0.0
    for t in range(1, T + 1):
        m_pred[t] = phi * m[t - 1]
        P_pred[t] = phi**2 * P[t - 1] + sigma**2
        S = P_pred[t] + tau**2
        K = P_pred[t] / S
        loglik += stats.norm.logpdf(y[t - 1], m_pred[t], np.sqrt(S))
        m[t] = m_pred[t] + K * (y[t - 1] - m_pred[t])
        P[t] = (1.0 - K) * P_pred[t]
    return _FilterPass(GaussianBelief(m, P), m_pred, P_pred, float(loglik))


def kalman_filter(params: ModelParams, y) -> Tuple[GaussianBelief, float]:
    """Filtered beliefs p(x_t | y_{1:t}) and the exact log p(y_{1:T} | theta)."""
    y = _check_params(params, y)
    result = _forward(params, y)
    return result.filtered, result.loglik


def kalman_smoother(params: ModelParams, y) -> GaussianBelief:
    """RTS smoother with lag-one cross-covariances."""
    y = _check_params(params, y)
    fwd = _forward(params, y)
    phi = params["phi"]
    m, P = fwd.filtered.mean, fwd.filtered.variance
    T = y.shape[0]
    ms = m.copy()
    Ps = P.copy()
    cross = np.zeros(T + 1)
    for t in range(T - 1, -1, -1):
        J = P[t] * phi / fwd.predicted_variance[t + 1]
        ms[t] = m[t] + J * (ms[t + 1] - fwd.predicted_mean[t + 1])
        Ps[t] = P[t] + J**2 * (Ps[t + 1] - fwd.predicted_variance[t + 1])
        cross[t + 1] = J * Ps[t + 1]
    return GaussianBelief(ms, Ps, cross)


def exact_score_terms(params: ModelParams, y) -> Tuple[np.ndarray, np.ndarray]:
    """Smoothed expectations of the per-index complete-data gradients.

    Returns a (T, 3) matrix whose row t-1 is E[grad log p(x_t, y_t | x_{t-1})]
    and the initial-state term E[grad log nu(x_0)].
    """
    y = _check_params(params, y)
    phi, sigma, tau = params.natural
    smoothed = kalman_smoother(params, y)
    second = smoothed.second_moment()
    ex_prev2 = second[:-1]
    ex2 = second[1:]
    exx = smoothed.lag_one_moment()

    resid2 = ex2 - 2.0 * phi * exx + phi**2 * ex_prev2
    err2 = (y - smoothed.mean[1:]) ** 2 + smoothed.variance[1:]
    terms = np.column_stack(
        [
            (exx - phi * ex_prev2) / sigma**2,
            (sigma**2 - resid2) / sigma,
            (tau**2 - err2) / tau,
        ]
    )

    v0 = get_model(params).stationary_variance(params)
    ratio = second[0] / v0
    initial = np.array([(ratio - 1.0) * phi / (1.0 - phi**2), (1.0 - ratio) * sigma, 0.0])
    return terms, initial


def exact_score(
    params: ModelParams,
    y,
    weights=None,
    initial_weight: Optional[float] = None,
    estimator: str = "kalman",
) -> GradientEstimate:
    """Weighted Fisher-identity score sum_t w_t E[grad log p(x_t, y_t | x_{t-1})].

    weights defaults to all ones (the full score). The initial-state term is
    weighted by initial_weight, which defaults to weights[0].
    """
    y = _check_params(params, y)
    T = y.shape[0]
    weights = np.ones(T) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (T,):
        raise DomainError(f"weights must have length {T}, got {weights.shape}")
    if T == 0:
        return GradientEstimate(np.zeros(3), EstimateMeta(estimator, 0, 0, None, 0.0))
    if initial_weight is None:
        initial_weight = float(weights[0])
    terms, initial = exact_score_terms(params, y)
    grad = weights @ terms + initial_weight * initial
    _, loglik = kalman_filter(params, y)
    return GradientEstimate(grad, EstimateMeta(estimator, int(np.count_nonzero(weights)), 0, None, loglik))


def predictive_loglik(params: ModelParams, y, r: int = 1) -> float:
    """Exact sum over t of log p(y_{t+r-1} | y_{1:t-1}); r = 1 is the marginal loglikelihood."""
    y = _check_params(params, y)
    if r < 1:
        raise DomainError(f"r must be >= 1, got {r}")
    phi, sigma, tau = params.natural
    filtered, _ = kalman_filter(params, y)
    T = y.shape[0]
    n_terms = T - r + 1
    if n_terms <= 0:
        return 0.0
    m = filtered.mean[:n_terms]
    P = filtered.variance[:n_terms]
    noise = sigma**2 * np.sum(phi ** (2 * np.arange(r)))
    mean = phi**r * m
    var = phi ** (2 * r) * P + noise + tau**2
    return float(np.sum(stats.norm.logpdf(y[r - 1 :], mean, np.sqrt(var))))
