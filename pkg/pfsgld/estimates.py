"""Gradient estimate records shared by the Kalman and particle estimators."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pfsgld.exceptions import NumericError


@dataclass(frozen=True)
class EstimateMeta:
    estimator: str
    S: int
    B: int
    N: Optional[int] = None  # None means N = infinity (Kalman)
    loglik: Optional[float] = None

    @property
    def n_label(self) -> str:
        return "inf" if self.N is None else str(self.N)


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    """Gradient of the loglikelihood in unconstrained coordinates."""

    grad: np.ndarray
    meta: EstimateMeta = field(default_factory=lambda: EstimateMeta("full", 0, 0))

    def __post_init__(self):
        grad = np.asarray(self.grad, dtype=float)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite gradient estimate: {grad}")
        object.__setattr__(self, "grad", grad)
