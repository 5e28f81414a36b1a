"""
Buffered stochastic gradient estimators.

A subsequence S = {s_start..s_end} is drawn from the observation series and
extended by B indices on each side (clipped to the series) to the window S*.
The filter runs over S* but only indices in S contribute, each scaled by the
inverse of its inclusion probability, so that averaging over S recovers the
full-sequence score.

Series may consist of several independent segments. Subsequence draws are then
uniform over all (segment, window) pairs; a segment shorter than S counts as a
single window covering the whole segment.
"""
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from pfsgld import kalman
from pfsgld.estimates import EstimateMeta, GradientEstimate
from pfsgld.exceptions import ContractError, DataError, DomainError, UnsupportedModelError
from pfsgld.model import LatentState, ModelKind, ModelParams, StateSpaceModel, get_model
from pfsgld.particle import ProposalKind, ResamplingKind, run_filter


class SubsequenceScheme(str, Enum):
    UNIFORM_START = "uniform_start"
    STRICT_PARTITION = "strict_partition"


class EstimatorKind(str, Enum):
    NO_BUFFER = "no_buffer"
    BUFFERED = "buffered"
    FULLY_BUFFERED = "fully_buffered"
    FULL = "full"
    WEEKLY = "weekly"


class Backend(str, Enum):
    PF = "pf"
    KALMAN = "kalman"


@dataclass(frozen=True, eq=False)
class SubsequenceSpec:
    """Sampled subsequence S inside a series (or one segment) of length T.

    Indices are 1-based and inclusive. scale[t-1] is 1/Pr(t in S) for t in S and
    0 elsewhere.
    """

    T: int
    s_start: int
    s_end: int
    buffer: int
    star_start: int
    star_end: int
    scale: np.ndarray
    scheme: SubsequenceScheme = SubsequenceScheme.UNIFORM_START
    segment: int = 0

    def __post_init__(self):
        if not 1 <= self.star_start <= self.s_start <= self.s_end <= self.star_end <= self.T:
            raise ContractError(
                f"Invalid subsequence: S=[{self.s_start}, {self.s_end}], "
                f"S*=[{self.star_start}, {self.star_end}], T={self.T}"
            )
        scale = np.asarray(self.scale, dtype=float)
        if scale.shape != (self.T,):
            raise ContractError(f"scale must have length {self.T}")
        inside = np.zeros(self.T, dtype=bool)
        inside[self.s_start - 1 : self.s_end] = True
        if np.any((scale > 0) != inside):
            raise ContractError("scale must be positive exactly on S")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def full(cls, T: int, segment: int = 0) -> "SubsequenceSpec":
        return cls(T, 1, T, 0, 1, T, np.ones(T), segment=segment)

    @property
    def S(self) -> int:
        return self.s_end - self.s_start + 1

    @property
    def window(self) -> slice:
        """Slice of the series covered by S*."""
        return slice(self.star_start - 1, self.star_end)

    @property
    def window_scale(self) -> np.ndarray:
        return self.scale[self.window]

    @property
    def initial_weight(self) -> float:
        # x_0 only enters when the window reaches the true start of the series
        return float(self.scale[0]) if self.star_start == 1 else 0.0

    def rescaled(self, factor: float) -> "SubsequenceSpec":
        return replace(self, scale=self.scale * factor)

    def with_buffer(self, buffer: int) -> "SubsequenceSpec":
        if buffer < 0:
            raise DomainError(f"B must be >= 0, got {buffer}")
        return replace(
            self,
            buffer=buffer,
            star_start=max(1, self.s_start - buffer),
            star_end=min(self.T, self.s_end + buffer),
        )


def _window_counts(lengths: Sequence[int], S: int, scheme: SubsequenceScheme) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=int)
    if scheme == SubsequenceScheme.STRICT_PARTITION:
        return np.ceil(lengths / S).astype(int)
    return np.maximum(lengths - S + 1, 1)


def _make_spec(T: int, S: int, B: int, scheme: SubsequenceScheme, window: int, total: int, segment: int = 0):
    S_eff = min(S, T)
    scale = np.zeros(T)
    if scheme == SubsequenceScheme.STRICT_PARTITION:
        s_start = window * S + 1
        s_end = min((window + 1) * S, T)
        scale[s_start - 1 : s_end] = total
    else:
        s_start = window + 1
        s_end = window + S_eff
        t = np.arange(s_start, s_end + 1)
        covering = np.minimum(t - 1, T - S_eff) - np.maximum(0, t - S_eff) + 1
        scale[s_start - 1 : s_end] = total / covering
    return SubsequenceSpec(
        T=T,
        s_start=s_start,
        s_end=s_end,
        buffer=B,
        star_start=max(1, s_start - B),
        star_end=min(T, s_end + B),
        scale=scale,
        scheme=scheme,
        segment=segment,
    )


def _check_sizes(S: int, B: int):
    if S < 1:
        raise DomainError(f"S must be >= 1, got {S}")
    if B < 0:
        raise DomainError(f"B must be >= 0, got {B}")


def sample_subsequence(
    T: int,
    S: int,
    B: int,
    scheme: SubsequenceScheme = SubsequenceScheme.UNIFORM_START,
    rng: Optional[np.random.Generator] = None,
) -> SubsequenceSpec:
    """Draw a subsequence of length S with buffer B from a series of length T."""
    _check_sizes(S, B)
    if S > T:
        raise DomainError(f"S={S} exceeds the series length T={T}")
    scheme = SubsequenceScheme(scheme)
    total = int(_window_counts([T], S, scheme)[0])
    rng = np.random.default_rng() if rng is None else rng
    window = int(rng.integers(total))
    return _make_spec(T, S, B, scheme, window, total)


def sample_segmented_subsequence(
    lengths: Sequence[int],
    S: int,
    B: int,
    scheme: SubsequenceScheme,
    rng: np.random.Generator,
) -> SubsequenceSpec:
    """Draw uniformly over every (segment, window) pair of a segmented series."""
    _check_sizes(S, B)
    scheme = SubsequenceScheme(scheme)
    counts = _window_counts(lengths, S, scheme)
    total = int(counts.sum())
    draw = int(rng.integers(total))
    segment = int(np.searchsorted(np.cumsum(counts), draw, side="right"))
    window = draw - int(counts[:segment].sum())
    return _make_spec(int(lengths[segment]), S, B, scheme, window, total, segment)


def enumerate_subsequences(
    T: int, S: int, B: int, scheme: SubsequenceScheme = SubsequenceScheme.UNIFORM_START
) -> Iterator[Tuple[SubsequenceSpec, float]]:
    """Every subsequence the sampler can return, with its probability."""
    _check_sizes(S, B)
    if S > T:
        raise DomainError(f"S={S} exceeds the series length T={T}")
    scheme = SubsequenceScheme(scheme)
    total = int(_window_counts([T], S, scheme)[0])
    for window in range(total):
        yield _make_spec(T, S, B, scheme, window, total), 1.0 / total


class BufferedStatistic:
    """h_t = scale_t * grad log p(x_t, y_t | x_{t-1}) on S, zero on the buffers."""

    def __init__(self, spec: SubsequenceSpec, model: StateSpaceModel, params: ModelParams, y):
        self.spec = spec
        self.model = model
        self.params = params
        self.y = np.asarray(y, dtype=float)
        self.dim = params.dim
        if self.y.shape[0] != spec.T:
            raise ContractError(f"series has length {self.y.shape[0]}, spec expects {spec.T}")

    def initial(self, x0: LatentState) -> Optional[np.ndarray]:
        weight = self.spec.initial_weight
        if weight == 0.0:
            return None
        return weight * self.model.initial_grad(self.params, x0)

    def __call__(self, k: int, x: LatentState, x_prev: LatentState) -> Optional[np.ndarray]:
        t = self.spec.star_start - 1 + k
        weight = self.spec.scale[t - 1]
        if weight == 0.0:
            return None
        return weight * self.model.complete_data_grad(self.params, x, x_prev, self.y[t - 1])


def buffered_statistic(spec: SubsequenceSpec, model: StateSpaceModel, params: ModelParams, y) -> BufferedStatistic:
    return BufferedStatistic(spec, model, params, y)


def pf_buffered_gradient(
    model: StateSpaceModel,
    params: ModelParams,
    y,
    spec: SubsequenceSpec,
    N: int,
    proposal: Optional[ProposalKind] = None,
    resampling: ResamplingKind = ResamplingKind.MULTINOMIAL,
    rng: Optional[np.random.Generator] = None,
    estimator: str = "buffered",
) -> GradientEstimate:
    """Particle approximation of the buffered gradient over S*."""
    y = np.asarray(y, dtype=float)
    statistic = BufferedStatistic(spec, model, params, y)
    result = run_filter(model, params, y[spec.window], statistic, N, proposal, resampling, rng)
    return GradientEstimate(result.H, EstimateMeta(estimator, spec.S, spec.buffer, N, result.loglik))


def analytic_buffered_gradient(params: ModelParams, y, spec: SubsequenceSpec, estimator: str = "buffered") -> GradientEstimate:
    """Exact buffered gradient for the LGSSM: Kalman smoothing on S* only."""
    if params.kind != ModelKind.LGSSM:
        raise UnsupportedModelError(f"analytic gradients need an LGSSM, got {params.kind.value}")
    y = np.asarray(y, dtype=float)
    window = y[spec.window]
    terms, initial = kalman.exact_score_terms(params, window)
    grad = spec.window_scale @ terms + spec.initial_weight * initial
    _, loglik = kalman.kalman_filter(params, window)
    return GradientEstimate(grad, EstimateMeta(estimator, spec.S, spec.buffer, None, loglik))


Series = Union[np.ndarray, Sequence[np.ndarray]]


def as_segments(y: Series) -> List[np.ndarray]:
    if isinstance(y, np.ndarray) and y.ndim == 1:
        segments = [y.astype(float)]
    else:
        segments = [np.asarray(seg, dtype=float).reshape(-1) for seg in y]
    if not segments or any(seg.shape[0] == 0 for seg in segments):
        raise DataError("every segment must be nonempty")
    return segments


class GradientEstimator:
    """Draws a subsequence and returns the buffered gradient for one estimator regime.

    no_buffer / buffered / fully_buffered use subsequences of length S with
    buffer 0 / B / full series; full uses every observation; weekly picks one
    segment uniformly and scales its full gradient by the number of segments.
    """

    def __init__(
        self,
        model: StateSpaceModel,
        y: Series,
        estimator: EstimatorKind = EstimatorKind.BUFFERED,
        S: int = 40,
        B: int = 10,
        N: Optional[int] = 1000,
        scheme: SubsequenceScheme = SubsequenceScheme.UNIFORM_START,
        proposal: Optional[ProposalKind] = None,
        resampling: ResamplingKind = ResamplingKind.MULTINOMIAL,
        backend: Backend = Backend.PF,
    ):
        self.model = model
        self.segments = as_segments(y)
        self.lengths = [seg.shape[0] for seg in self.segments]
        self.estimator = EstimatorKind(estimator)
        self.scheme = SubsequenceScheme(scheme)
        self.backend = Backend(backend)
        self.proposal = proposal
        self.resampling = ResamplingKind(resampling)
        self.N = N
        self.S = S
        self.B = {
            EstimatorKind.NO_BUFFER: 0,
            EstimatorKind.BUFFERED: B,
            EstimatorKind.FULLY_BUFFERED: max(self.lengths),
        }.get(self.estimator, 0)

        if self.backend == Backend.KALMAN and model.kind != ModelKind.LGSSM:
            raise UnsupportedModelError(f"the kalman backend needs an LGSSM, got {model.kind.value}")
        if self.backend == Backend.PF and (N is None or N < 2):
            raise DomainError(f"particle estimators need N >= 2, got {N}")
        if self.estimator == EstimatorKind.WEEKLY and len(self.segments) < 2:
            raise DataError("the weekly estimator needs a segmented series")
        if self.estimator in (EstimatorKind.NO_BUFFER, EstimatorKind.BUFFERED, EstimatorKind.FULLY_BUFFERED):
            _check_sizes(S, self.B)
            if S > max(self.lengths):
                raise DomainError(f"S={S} exceeds the longest segment ({max(self.lengths)})")

    @property
    def n_obs(self) -> int:
        return int(sum(self.lengths))

    def draw(self, rng: np.random.Generator) -> List[SubsequenceSpec]:
        """Specs (one per segment that contributes) for the next gradient."""
        if self.estimator == EstimatorKind.FULL:
            return [SubsequenceSpec.full(T, segment=j) for j, T in enumerate(self.lengths)]
        if self.estimator == EstimatorKind.WEEKLY:
            j = int(rng.integers(len(self.segments)))
            return [SubsequenceSpec.full(self.lengths[j], segment=j).rescaled(len(self.segments))]
        return [sample_segmented_subsequence(self.lengths, self.S, self.B, self.scheme, rng)]

    def estimate(self, params: ModelParams, spec: SubsequenceSpec, rng: np.random.Generator) -> GradientEstimate:
        y = self.segments[spec.segment]
        if self.backend == Backend.KALMAN:
            return analytic_buffered_gradient(params, y, spec, self.estimator.value)
        return pf_buffered_gradient(
            self.model, params, y, spec, self.N, self.proposal, self.resampling, rng, self.estimator.value
        )

    def __call__(self, params: ModelParams, rng: np.random.Generator) -> GradientEstimate:
        specs = self.draw(rng)
        grad = np.zeros(params.dim)
        loglik = 0.0
        for spec in specs:
            est = self.estimate(params, spec, rng)
            grad += est.grad
            loglik += est.meta.loglik or 0.0
        meta = EstimateMeta(
            self.estimator.value,
            sum(spec.S for spec in specs),
            self.B,
            None if self.backend == Backend.KALMAN else self.N,
            loglik,
        )
        return GradientEstimate(grad, meta)


@dataclass(frozen=True, eq=False)
class GradientReference:
    """Reference score of one series, resolved into blocks of `resolution` indices.

    blocks[b] is the (unscaled) smoothed gradient contribution of indices
    b*resolution+1 .. (b+1)*resolution and `initial` the x_0 term, so the
    reference for any subsequence whose scale is constant on every block can be
    assembled exactly.
    """

    kind: ModelKind
    natural: np.ndarray
    blocks: np.ndarray
    initial: np.ndarray
    resolution: int
    T: int
    N: Optional[int] = None

    @property
    def full(self) -> np.ndarray:
        return self.blocks.sum(axis=0) + self.initial

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.kind, self.natural)

    def for_spec(self, spec: SubsequenceSpec) -> Optional[np.ndarray]:
        """Reference g(S, T) paired with spec, or None when spec is not block-aligned."""
        if spec.T != self.T:
            raise ContractError(f"reference covers T={self.T}, spec has T={spec.T}")
        n_blocks = self.blocks.shape[0]
        padded = np.zeros(n_blocks * self.resolution)
        padded[: self.T] = spec.scale
        per_block = padded.reshape(n_blocks, self.resolution)
        # the last block may be short; pad it with its own first value
        tail = self.T - (n_blocks - 1) * self.resolution
        per_block[-1, tail:] = per_block[-1, 0]
        if not np.all(per_block == per_block[:, :1]):
            return None
        return per_block[:, 0] @ self.blocks + spec.initial_weight * self.initial

    @classmethod
    def from_kalman(cls, params: ModelParams, y) -> "GradientReference":
        terms, initial = kalman.exact_score_terms(params, y)
        return cls(params.kind, params.natural.copy(), terms, initial, 1, terms.shape[0], None)

    @classmethod
    def from_particles(
        cls,
        model: StateSpaceModel,
        params: ModelParams,
        y,
        N: int,
        rng: np.random.Generator,
        resolution: int = 8,
        proposal: Optional[ProposalKind] = None,
        resampling: ResamplingKind = ResamplingKind.MULTINOMIAL,
    ) -> "GradientReference":
        y = np.asarray(y, dtype=float)
        if resolution < 1:
            raise DomainError(f"resolution must be >= 1, got {resolution}")
        statistic = _BlockStatistic(model, params, y, resolution)
        result = run_filter(model, params, y, statistic, N, proposal, resampling, rng)
        p = params.dim
        H = result.H.reshape(-1, p)
        return cls(params.kind, params.natural.copy(), H[1:], H[0], resolution, y.shape[0], N)

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(
                fh,
                kind=np.array(self.kind.value),
                natural=self.natural,
                blocks=self.blocks,
                initial=self.initial,
                resolution=np.array(self.resolution),
                T=np.array(self.T),
                N=np.array(-1 if self.N is None else self.N),
            )
        logger.info("Wrote reference gradient to {}", path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GradientReference":
        with np.load(Path(path), allow_pickle=False) as data:
            N = int(data["N"])
            return cls(
                ModelKind(str(data["kind"])),
                data["natural"],
                data["blocks"],
                data["initial"],
                int(data["resolution"]),
                int(data["T"]),
                None if N < 0 else N,
            )


class _BlockStatistic:
    """Per-block complete-data gradients; slot 0 holds the x_0 term."""

    def __init__(self, model: StateSpaceModel, params: ModelParams, y: np.ndarray, resolution: int):
        self.model = model
        self.params = params
        self.y = y
        self.resolution = resolution
        self.p = params.dim
        self.n_blocks = math.ceil(y.shape[0] / resolution)
        self.dim = self.p * (self.n_blocks + 1)

    def _embed(self, slot: int, values: np.ndarray) -> np.ndarray:
        out = np.zeros((values.shape[0], self.dim))
        out[:, slot * self.p : (slot + 1) * self.p] = values
        return out

    def initial(self, x0: LatentState) -> np.ndarray:
        return self._embed(0, self.model.initial_grad(self.params, x0))

    def __call__(self, k: int, x: LatentState, x_prev: LatentState) -> np.ndarray:
        grad = self.model.complete_data_grad(self.params, x, x_prev, self.y[k - 1])
        return self._embed(1 + (k - 1) // self.resolution, grad)


def reference_for(params: ModelParams, y, N: Optional[int], rng=None, resolution: int = 8) -> GradientReference:
    """Kalman reference for the LGSSM, particle reference with N particles otherwise."""
    if params.kind == ModelKind.LGSSM and N is None:
        return GradientReference.from_kalman(params, y)
    if N is None:
        raise UnsupportedModelError(f"{params.kind.value} has no exact reference; give a particle count")
    return GradientReference.from_particles(get_model(params), params, y, N, rng, resolution)
