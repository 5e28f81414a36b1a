"""
Buffered PF-SGLD.

Each iteration draws a fresh subsequence, estimates the buffered gradient and
takes a Langevin step in unconstrained coordinates:

    u' = u + eps * (g + grad log p(u)) + N(0, 2 eps I)
"""
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from pfsgld.exceptions import DomainError, NumericError, SamplerAbortError
from pfsgld.gradient import Backend, EstimatorKind, GradientEstimator, Series, SubsequenceScheme
from pfsgld.model import NATURAL_NAMES, UNCONSTRAINED_NAMES, ModelKind, ModelParams, StateSpaceModel, get_model
from pfsgld.particle import ProposalKind, ResamplingKind

MAX_NOISE_REDRAWS = 100


class SgldConfig(BaseModel):
    """Settings of one SGLD chain."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    stepsize: PositiveFloat = 0.1
    n_iter: PositiveInt = 1000
    S: PositiveInt = 40
    B: int = Field(default=10, ge=0)
    N: Optional[int] = Field(default=1000, ge=2)
    proposal: Optional[ProposalKind] = None
    resampling: ResamplingKind = ResamplingKind.MULTINOMIAL
    scheme: SubsequenceScheme = SubsequenceScheme.UNIFORM_START
    seed: int = 0
    burnin: Optional[int] = Field(default=None, ge=0)
    thin: PositiveInt = 1
    estimator: EstimatorKind = EstimatorKind.BUFFERED
    backend: Backend = Backend.PF
    max_degenerate: int = Field(default=10, ge=0)
    noise: bool = True
    scale_stepsize: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.burnin is not None and self.burnin >= self.n_iter:
            raise ValueError(f"burnin ({self.burnin}) must be smaller than n_iter ({self.n_iter})")
        if self.backend == Backend.PF and self.N is None:
            raise ValueError("the pf backend needs a particle count N")
        return self

    @property
    def effective_burnin(self) -> int:
        return self.n_iter // 2 if self.burnin is None else self.burnin

    def make_estimator(self, model: StateSpaceModel, y: Series) -> GradientEstimator:
        return GradientEstimator(
            model,
            y,
            estimator=self.estimator,
            S=self.S,
            B=self.B,
            N=self.N,
            scheme=self.scheme,
            proposal=self.proposal,
            resampling=self.resampling,
            backend=self.backend,
        )


@dataclass(eq=False)
class Chain:
    """SGLD samples in unconstrained coordinates.

    Row k holds the sample after step k+1, the gradient estimate that produced
    it, the effective stepsize and the wall time of the step.
    """

    kind: ModelKind
    samples: np.ndarray
    grads: np.ndarray
    stepsizes: np.ndarray
    wall_time: np.ndarray
    estimator: str = "buffered"
    initial: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        n = self.samples.shape[0]
        if not (self.grads.shape[0] == self.stepsizes.shape[0] == self.wall_time.shape[0] == n):
            raise DomainError("chain fields must have equal lengths")
        if not np.all(np.isfinite(self.samples)):
            raise NumericError("chain samples must be finite")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def param_names(self):
        return NATURAL_NAMES[self.kind]

    def params_at(self, k: int) -> ModelParams:
        return ModelParams.from_unconstrained(self.kind, self.samples[k])

    def natural_samples(self) -> np.ndarray:
        if len(self) == 0:
            return np.empty((0, self.samples.shape[1]))
        return np.vstack([self.params_at(k).natural for k in range(len(self))])

    def retained(self, burnin: int, thin: int = 1) -> np.ndarray:
        """Indices kept after burnin and thinning."""
        if burnin < 0 or thin < 1:
            raise DomainError("burnin must be >= 0 and thin >= 1")
        return np.arange(burnin, len(self), thin)

    def to_frame(self) -> pd.DataFrame:
        natural = self.natural_samples()
        frame = pd.DataFrame({"step": np.arange(1, len(self) + 1), "wall_time_s": self.wall_time})
        for j, name in enumerate(NATURAL_NAMES[self.kind]):
            frame[name] = natural[:, j]
        for j, name in enumerate(UNCONSTRAINED_NAMES[self.kind]):
            frame[f"grad_{name}"] = self.grads[:, j]
        frame["eps"] = self.stepsizes
        return frame

    def to_csv(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, kind: Union[ModelKind, str], estimator: str = "buffered") -> "Chain":
        kind = ModelKind(kind)
        names = list(NATURAL_NAMES[kind])
        missing = [c for c in ["step", "wall_time_s", *names, "eps"] if c not in frame.columns]
        if missing:
            raise DomainError(f"chain file is missing columns {missing} for model {kind.value}")
        natural = frame[names].to_numpy(dtype=float)
        samples = np.vstack([ModelParams(kind, row).unconstrained for row in natural]) if len(frame) else np.empty((0, len(names)))
        grads = frame[[f"grad_{n}" for n in UNCONSTRAINED_NAMES[kind]]].to_numpy(dtype=float)
        return cls(
            kind,
            samples,
            grads,
            frame["eps"].to_numpy(dtype=float),
            frame["wall_time_s"].to_numpy(dtype=float),
            estimator,
        )

    @classmethod
    def from_csv(cls, path: Union[str, Path], kind: Union[ModelKind, str], estimator: str = "buffered") -> "Chain":
        return cls.from_frame(pd.read_csv(path), kind, estimator)


def sgld_step(
    params: ModelParams,
    grad_estimate: np.ndarray,
    eps: float,
    rng: np.random.Generator,
    noise: bool = True,
) -> ModelParams:
    """One Langevin step.

    Proposals outside the prior support get fresh noise, up to 100 times;
    after that the step is abandoned and the previous params are returned.
    """
    grad_estimate = np.asarray(grad_estimate, dtype=float)
    if not np.all(np.isfinite(grad_estimate)):
        raise NumericError(f"Non-finite gradient: {grad_estimate}")
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    model = get_model(params)
    u = params.unconstrained
    drift = eps * (grad_estimate + model.log_prior_grad(params))
    scale = np.sqrt(2.0 * eps)

    for attempt in range(MAX_NOISE_REDRAWS):
        xi = scale * rng.standard_normal(u.shape[0]) if noise else np.zeros_like(u)
        move = drift + xi
        if not np.any(move):
            return params
        try:
            proposed = ModelParams.from_unconstrained(params.kind, u + move)
        except DomainError:
            proposed = None
        if proposed is not None and model.in_support(proposed):
            return proposed
        logger.debug("SGLD proposal outside the support, redraw {}", attempt + 1)
        if not noise:
            break
    logger.warning("SGLD step abandoned after {} rejected proposals", MAX_NOISE_REDRAWS if noise else 1)
    return params


def run_chain(
    model: StateSpaceModel,
    params0: ModelParams,
    y: Series,
    config: SgldConfig,
    rng: Optional[np.random.Generator] = None,
    record_timing: bool = True,
) -> Chain:
    """Run config.n_iter SGLD iterations from params0."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    estimator = config.make_estimator(model, y)
    eps = config.stepsize / estimator.n_obs if config.scale_stepsize else config.stepsize
    K, p = config.n_iter, params0.dim

    samples = np.empty((K, p))
    grads = np.zeros((K, p))
    wall = np.zeros(K)
    params = params0
    failures = 0
    logger.info(
        "Starting {} chain: model={}, S={}, B={}, N={}, eps={:.3g}",
        config.estimator.value, model.kind.value, config.S, estimator.B, config.N, eps,
    )
    for k in range(K):
        start = time.perf_counter()
        try:
            estimate = estimator(params, rng)
        except NumericError as e:
            failures += 1
            if failures > config.max_degenerate:
                raise SamplerAbortError(k + 1, failures, e) from e
            logger.warning("Gradient failed at step {} ({} in a row): {}", k + 1, failures, e)
        else:
            failures = 0
            grads[k] = estimate.grad
            params = sgld_step(params, estimate.grad, eps, rng, noise=config.noise)
        samples[k] = params.unconstrained
        if record_timing:
            wall[k] = time.perf_counter() - start
        if (k + 1) % max(1, K // 10) == 0:
            logger.debug("step {}/{}: {}", k + 1, K, params)

    logger.info("Finished chain after {} steps at {}", K, params)
    return Chain(
        model.kind,
        samples,
        grads,
        np.full(K, eps),
        wall,
        config.estimator.value,
        params0.unconstrained,
    )


def posterior_mean(chain: Chain, burnin: int = 0, thin: int = 1) -> np.ndarray:
    """Mean of the retained samples in natural coordinates."""
    if burnin >= len(chain):
        raise DomainError(f"burnin ({burnin}) leaves no samples in a chain of length {len(chain)}")
    idx = chain.retained(burnin, thin)
    if idx.size == 0:
        raise DomainError("no samples retained")
    return chain.natural_samples()[idx].mean(axis=0)
