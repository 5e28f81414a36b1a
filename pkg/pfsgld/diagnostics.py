"""
Sampler and estimator diagnostics.

- kernel Stein discrepancy with the inverse multiquadric kernel
- MSE of running posterior means against known parameters
- replicated gradient bias / MSE sweeps
- heldout and predictive loglikelihood traces along a chain
"""
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

from pfsgld.exceptions import DomainError, UnsupportedModelError
from pfsgld.gradient import (
    GradientReference,
    SubsequenceScheme,
    analytic_buffered_gradient,
    as_segments,
    enumerate_subsequences,
    pf_buffered_gradient,
    sample_subsequence,
)
from pfsgld.model import NATURAL_NAMES, ModelKind, ModelParams, get_model
from pfsgld.particle import ProposalKind, ResamplingKind, heldout_loglik, predictive_loglik
from pfsgld.sgld import Chain, SgldConfig
from pfsgld.utils.rng_utils import derived_seed

BIAS_COLUMNS = ["model", "param_name", "S", "B", "N", "scheme", "n_reps", "bias", "bias_se", "mse", "wall_time_s"]
KSD_COLUMNS = ["method", "param", "log10_ksd_mean", "log10_ksd_sd", "n_chains"]


class IMQ:
    """Inverse multiquadric kernel (offset^2 + |d|^2)^exponent, d = theta - theta'."""

    def __init__(self, offset: float = 1.0, exponent: float = -0.5):
        self.offset2 = offset**2
        self.exponent = exponent

    def __call__(self, diff: np.ndarray):
        """
        Kernel value and the derivatives the Stein kernel needs.

        Args:
            diff: theta - theta', shape (..., D)

        Returns:
            (K, dK/dtheta, dK/dtheta', d2K/dtheta_d dtheta'_d) with shapes
            (...), (..., D), (..., D), (..., D)
        """
        base = self.offset2 + np.sum(diff**2, axis=-1)
        a = self.exponent
        K = base**a
        grad_x = 2.0 * a * (base ** (a - 1.0))[..., None] * diff
        grad_xy = -2.0 * a * (base ** (a - 1.0))[..., None] - 4.0 * a * (a - 1.0) * (base ** (a - 2.0))[..., None] * diff**2
        return K, grad_x, -grad_x, grad_xy


def imq_kernel(theta, theta_prime):
    """IMQ kernel (1 + |theta - theta'|^2)^(-1/2) and its derivatives at one pair."""
    diff = np.asarray(theta, dtype=float) - np.asarray(theta_prime, dtype=float)
    return IMQ()(diff)


@dataclass(frozen=True)
class KsdResult:
    total: float
    per_dim: np.ndarray


def ksd(samples, scores, kernel: Optional[IMQ] = None, block_size: int = 256) -> KsdResult:
    """
    Kernel Stein discrepancy, summed over per-coordinate components.

    Each component is sqrt(sum_{i,j} K0^d(theta_i, theta_j) / n^2) with the
    Stein kernel K0^d = d2K + dK/dtheta_d g_d(theta') + dK/dtheta'_d g_d(theta) + K g_d(theta) g_d(theta').

    Args:
        samples: (n, D) sample matrix
        scores: (n, D) (stochastic) scores of the target at the samples
        kernel: Kernel, IMQ with unit offset by default
        block_size: Rows of the pair sum evaluated at once

    Returns:
        KsdResult: total and per-coordinate discrepancies
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    G = np.atleast_2d(np.asarray(scores, dtype=float))
    if X.shape != G.shape:
        raise DomainError(f"samples {X.shape} and scores {G.shape} must have equal shapes")
    if X.shape[0] < 1:
        raise DomainError("ksd needs at least one sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(G))):
        raise DomainError("samples and scores must be finite")
    kernel = kernel or IMQ()
    n, D = X.shape

    acc = np.zeros(D)
    for lo in range(0, n, block_size):
        rows = slice(lo, min(n, lo + block_size))
        diff = X[rows, None, :] - X[None, :, :]
        K, dx, dy, dxy = kernel(diff)
        g_i = G[rows, None, :]
        g_j = G[None, :, :]
        k0 = dxy + dx * g_j + dy * g_i + K[..., None] * g_i * g_j
        acc += k0.sum(axis=(0, 1))

    per_dim = np.sqrt(np.clip(acc / n**2, 0.0, None))
    return KsdResult(float(per_dim.sum()), per_dim)


def chain_scores(
    chain: Chain,
    y,
    config: SgldConfig,
    indices: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Stochastic posterior scores at chain samples, using the chain's own estimator."""
    model = get_model(chain.kind)
    estimator = config.make_estimator(model, y)
    scores = np.empty((indices.shape[0], chain.samples.shape[1]))
    for row, k in enumerate(indices):
        params = chain.params_at(int(k))
        scores[row] = estimator(params, rng).grad + model.log_prior_grad(params)
    return scores


def chain_ksd(
    chain: Chain,
    y,
    config: SgldConfig,
    burnin: Optional[int] = None,
    thin: int = 1,
    seed: int = 0,
) -> KsdResult:
    """KSD of a chain after burnin (default: first half) and thinning."""
    burnin = len(chain) // 2 if burnin is None else burnin
    if burnin >= len(chain):
        raise DomainError(f"burnin ({burnin}) leaves no samples in a chain of length {len(chain)}")
    idx = chain.retained(burnin, thin)
    scores = chain_scores(chain, y, config, idx, np.random.default_rng(seed))
    return ksd(chain.samples[idx], scores)


def ksd_report(results: Sequence[Tuple[str, ModelKind, KsdResult]]) -> pd.DataFrame:
    """Mean and SD of log10 KSD per method, per parameter and in total."""
    rows = []
    by_method = {}
    for method, kind, result in results:
        by_method.setdefault(method, []).append((ModelKind(kind), result))
    for method, entries in by_method.items():
        kinds = {kind for kind, _ in entries}
        if len(kinds) > 1:
            raise DomainError(f"method {method} mixes chains of different models: {sorted(k.value for k in kinds)}")
        kind = kinds.pop()
        per_dim = np.log10(np.vstack([r.per_dim for _, r in entries]))
        total = np.log10([r.total for _, r in entries])
        ddof = 1 if len(entries) > 1 else 0
        for j, name in enumerate(NATURAL_NAMES[kind]):
            rows.append([method, name, per_dim[:, j].mean(), per_dim[:, j].std(ddof=ddof), len(entries)])
        rows.append([method, "total", float(np.mean(total)), float(np.std(total, ddof=ddof)), len(entries)])
    return pd.DataFrame(rows, columns=KSD_COLUMNS)


def mse_to_truth(chain: Chain, truth: ModelParams, burnin: int = 0) -> np.ndarray:
    """Squared error of the running posterior mean (natural coordinates) after burnin, per step."""
    if burnin >= len(chain):
        raise DomainError(f"burnin ({burnin}) must be smaller than the chain length ({len(chain)})")
    if truth.kind != chain.kind:
        raise DomainError(f"truth is a {truth.kind.value} parameter, chain is {chain.kind.value}")
    kept = chain.natural_samples()[burnin:]
    running = np.cumsum(kept, axis=0) / np.arange(1, kept.shape[0] + 1)[:, None]
    return (running - truth.natural) ** 2


class SweepPlan(BaseModel):
    """Grid of a gradient bias experiment. N=None stands for N = infinity (Kalman)."""

    model_config = ConfigDict(extra="forbid")

    S: List[PositiveInt] = Field(default_factory=lambda: [16])
    B: List[int] = Field(default_factory=lambda: [0, 1, 2, 4, 8, 16])
    N: List[Optional[int]] = Field(default_factory=lambda: [100, 1000, 10000])
    schemes: List[SubsequenceScheme] = Field(default_factory=lambda: [SubsequenceScheme.UNIFORM_START])
    n_reps: PositiveInt = 200
    seed: int = 0
    proposal: Optional[ProposalKind] = None
    resampling: ResamplingKind = ResamplingKind.MULTINOMIAL

    @field_validator("B")
    @classmethod
    def _nonnegative(cls, v):
        if any(b < 0 for b in v):
            raise ValueError("buffer sizes must be >= 0")
        return v

    @field_validator("N")
    @classmethod
    def _particles(cls, v):
        if any(n is not None and n < 2 for n in v):
            raise ValueError("particle counts must be >= 2 (or inf)")
        return v

    def cells(self) -> List[Tuple[int, int, int, int, int, Optional[int], SubsequenceScheme]]:
        """(S index, N index, scheme index, S, B, N, scheme) per cell, B varying fastest."""
        out = []
        for (i, S), (j, N), (k, scheme) in itertools.product(
            enumerate(self.S), enumerate(self.N), enumerate(self.schemes)
        ):
            for B in self.B:
                out.append((i, j, k, S, B, N, scheme))
        return out


def _bias_rows(kind, names, S, B, N, scheme, n_reps, diffs, errors, wall, exact_weights=None):
    if exact_weights is not None:
        bias = exact_weights @ diffs
        se = np.zeros(diffs.shape[1])
        mse = exact_weights @ errors**2
    else:
        bias = diffs.mean(axis=0)
        se = diffs.std(axis=0, ddof=1) / np.sqrt(n_reps) if n_reps > 1 else np.zeros(diffs.shape[1])
        mse = (errors**2).mean(axis=0)
    n_label = "inf" if N is None else str(N)
    rows = [
        [kind.value, name, S, B, n_label, scheme.value, n_reps, bias[d], se[d], mse[d], wall]
        for d, name in enumerate(names)
    ]
    rows.append(
        [kind.value, "norm", S, B, n_label, scheme.value, n_reps,
         float(np.linalg.norm(bias)), float(np.sqrt(np.sum(se**2))), float(mse.sum()), wall]
    )
    return rows


def _run_cell(cell, y, params: ModelParams, reference: GradientReference, plan: SweepPlan, record_timing: bool):
    i, j, k, S, B, N, scheme = cell
    model = get_model(params)
    names = params.unconstrained_names
    T = y.shape[0]
    full = reference.full
    start = time.perf_counter()

    if N is None:
        if params.kind != ModelKind.LGSSM:
            raise UnsupportedModelError(f"N=inf needs the Kalman estimator; {params.kind.value} is not an LGSSM")
        specs = list(enumerate_subsequences(T, S, B, scheme))
        weights = np.array([prob for _, prob in specs])
        estimates = np.vstack([analytic_buffered_gradient(params, y, spec).grad for spec, _ in specs])
        paired = np.vstack([reference.for_spec(spec) for spec, _ in specs])
        diffs, errors, n_reps = estimates - paired, estimates - full, len(specs)
    else:
        weights = None
        n_reps = plan.n_reps
        diffs = np.empty((n_reps, params.dim))
        errors = np.empty((n_reps, params.dim))
        for r in range(n_reps):
            # B is left out of the seed path so every buffer size sees the same subsequences
            rng = np.random.default_rng(derived_seed(plan.seed, i, j, k, r))
            spec = sample_subsequence(T, S, B, scheme, rng)
            est = pf_buffered_gradient(model, params, y, spec, N, plan.proposal, plan.resampling, rng).grad
            paired = reference.for_spec(spec)
            diffs[r] = est - (full if paired is None else paired)
            errors[r] = est - full

    wall = time.perf_counter() - start if record_timing else 0.0
    logger.info("bias cell S={} B={} N={} scheme={} done", S, B, "inf" if N is None else N, scheme.value)
    return _bias_rows(params.kind, names, S, B, N, scheme, n_reps, diffs, errors, wall, weights)


def grad_bias_experiment(
    plan: SweepPlan,
    y,
    params: ModelParams,
    reference: GradientReference,
    threads: int = 1,
    record_timing: bool = True,
) -> pd.DataFrame:
    """
    Replicated bias / MSE of buffered gradient estimators over a sweep grid.

    Bias is measured against the reference gradient of the same subsequence
    whenever the reference resolves it, else against the full-sequence
    reference; MSE is always against the full-sequence reference.

    Args:
        plan: Sweep grid and replication count
        y: Observation series
        params: Parameter at which gradients are evaluated
        reference: Reference gradient for (params, y)
        threads: Worker processes for grid cells
        record_timing: Write per-cell wall time (0 otherwise)

    Returns:
        pd.DataFrame: one row per cell and coordinate plus a "norm" row
    """
    y = as_segments(y)
    if len(y) != 1:
        raise DomainError("bias experiments need a single observation series")
    y = y[0]
    if reference.T != y.shape[0] or reference.kind != params.kind:
        raise DomainError("reference gradient does not match the data or model")
    cells = plan.cells()
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_cell, c, y, params, reference, plan, record_timing) for c in cells]
            chunks = [f.result() for f in futures]
    else:
        chunks = [_run_cell(c, y, params, reference, plan, record_timing) for c in cells]
    rows = [row for chunk in chunks for row in chunk]
    return pd.DataFrame(rows, columns=BIAS_COLUMNS)


def evaluate_chain(
    chain: Chain,
    y_test,
    every: int = 10,
    r_values: Sequence[int] = (3,),
    N: int = 1000,
    seed: int = 0,
    burnin: int = 0,
) -> pd.DataFrame:
    """Heldout and r-step predictive loglikelihood of every `every`-th sample on a test series."""
    if every < 1:
        raise DomainError(f"every must be >= 1, got {every}")
    segments = as_segments(y_test)
    model = get_model(chain.kind)
    rng = np.random.default_rng(seed)
    rows = []
    for k in chain.retained(burnin, every):
        params = chain.params_at(int(k))
        row = {"step": int(k) + 1}
        row["heldout_loglik"] = sum(heldout_loglik(model, params, seg, N, rng) for seg in segments)
        for r in r_values:
            row[f"pred_loglik_r{r}"] = sum(predictive_loglik(model, params, seg, r, N, rng) for seg in segments)
        rows.append(row)
    columns = ["step", "heldout_loglik", *[f"pred_loglik_r{r}" for r in r_values]]
    return pd.DataFrame(rows, columns=columns)
