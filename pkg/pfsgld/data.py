"""
Observation series: synthetic trajectories, demeaned log-returns and segmentation.

Accepted CSV layouts (comma separated, header row required):

    price series      [timestamp,]price
    returns series    segment,value
    trajectory        t,x,y[,sigma2]   (written by `pfsgld generate`)
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from pfsgld.exceptions import DataError
from pfsgld.model import Trajectory


@dataclass(frozen=True, eq=False)
class SegmentedSeries:
    """Independent observation segments in their original order."""

    segments: List[np.ndarray]
    keys: List[str] = field(default_factory=list)
    provenance: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.segments:
            raise DataError("a series needs at least one segment")
        for j, seg in enumerate(self.segments):
            if np.asarray(seg).shape[0] == 0:
                raise DataError("empty segment", index=j)
        if not self.keys:
            object.__setattr__(self, "keys", [str(j) for j in range(len(self.segments))])
        if len(self.keys) != len(self.segments):
            raise DataError("one key per segment is required")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def lengths(self) -> List[int]:
        return [int(seg.shape[0]) for seg in self.segments]

    @property
    def n_obs(self) -> int:
        return sum(self.lengths)

    def concatenated(self) -> np.ndarray:
        return np.concatenate(self.segments)

    def split(self, n_train: int) -> Tuple["SegmentedSeries", "SegmentedSeries"]:
        """First n_train segments for training, the rest for testing."""
        if not 0 < n_train < len(self):
            raise DataError(f"n_train must lie in [1, {len(self) - 1}], got {n_train}")
        head = SegmentedSeries(self.segments[:n_train], self.keys[:n_train], dict(self.provenance))
        tail = SegmentedSeries(self.segments[n_train:], self.keys[n_train:], dict(self.provenance))
        return head, tail

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "segment": np.repeat(self.keys, self.lengths),
                "value": self.concatenated(),
            }
        )


def demean_log_returns(prices) -> np.ndarray:
    """log(p_t / p_{t-1}) minus its empirical mean."""
    prices = np.asarray(prices, dtype=float).reshape(-1)
    if prices.shape[0] < 2:
        raise DataError(f"need at least 2 prices, got {prices.shape[0]}")
    bad = np.flatnonzero(~(prices > 0))
    if bad.size:
        raise DataError(f"prices must be positive and finite, got {prices[bad[0]]}", index=int(bad[0]))
    returns = np.diff(np.log(prices))
    return returns - returns.mean()


def segment_by_key(series, keys: Sequence) -> SegmentedSeries:
    """Split series into contiguous runs of equal keys."""
    series = np.asarray(series, dtype=float).reshape(-1)
    keys = [str(k) for k in keys]
    if len(keys) != series.shape[0]:
        raise DataError(f"{len(keys)} keys for {series.shape[0]} observations")
    if not keys:
        raise DataError("cannot segment an empty series")
    starts = [0] + [i for i in range(1, len(keys)) if keys[i] != keys[i - 1]]
    run_keys = [keys[i] for i in starts]
    seen = set()
    for i, key in zip(starts, run_keys):
        if key in seen:
            raise DataError(f"segment key {key!r} is not contiguous", index=i)
        seen.add(key)
    bounds = starts + [len(keys)]
    segments = [series[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    return SegmentedSeries(segments, run_keys)


def iso_week_keys(timestamps: pd.Series) -> List[str]:
    """'YYYY-Www' labels from timestamps."""
    iso = pd.to_datetime(timestamps).dt.isocalendar()
    return [f"{y:04d}-W{w:02d}" for y, w in zip(iso["year"], iso["week"])]


def _read_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path)
    except FileNotFoundError as e:
        raise DataError("input file not found", path=str(path)) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse CSV: {e}", path=str(path)) from e


def ingest_prices(path: Union[str, Path], weekly: bool = True) -> SegmentedSeries:
    """
    Demeaned log-returns from a price CSV.

    With a timestamp column and weekly=True, returns are split into ISO weeks;
    the return from p_{t-1} to p_t belongs to the week of p_t and returns
    crossing a week boundary are dropped. Demeaning uses the mean of the kept
    returns.
    """
    frame = _read_csv(path)
    if "price" not in frame.columns:
        raise DataError("price CSV needs a 'price' column", path=str(path))
    prices = frame["price"].to_numpy(dtype=float)
    bad = np.flatnonzero(~(prices > 0))
    if bad.size:
        raise DataError("prices must be positive and finite", index=int(bad[0]), path=str(path))
    if prices.shape[0] < 2:
        raise DataError("need at least 2 prices", path=str(path))

    provenance = {"source": str(path)}
    if weekly and "timestamp" in frame.columns:
        keys = iso_week_keys(frame["timestamp"])
        raw = np.diff(np.log(prices))
        same_week = np.array([a == b for a, b in zip(keys[:-1], keys[1:])])
        kept = raw[same_week]
        if kept.size == 0:
            raise DataError("no within-week returns", path=str(path))
        mean = float(kept.mean())
        series = segment_by_key(kept - mean, [k for k, s in zip(keys[1:], same_week) if s])
        logger.info("Ingested {} returns in {} weekly segments from {}", kept.size, len(series), path)
    else:
        raw = np.diff(np.log(prices))
        mean = float(raw.mean())
        series = SegmentedSeries([raw - mean])
        logger.info("Ingested {} returns from {}", raw.size, path)
    provenance["demeaning_mean"] = mean
    return SegmentedSeries(series.segments, series.keys, provenance)


def write_series(series: SegmentedSeries, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series.to_frame().to_csv(path, index=False, float_format="%.17g")


def write_trajectory(trajectory: Trajectory, path: Union[str, Path]):
    """Trajectory CSV with one row per observation, t = 1..T."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "t": np.arange(1, trajectory.T + 1),
            "x": trajectory.x[1:],
            "y": trajectory.y,
        }
    )
    if trajectory.aux_variance is not None:
        frame["sigma2"] = trajectory.aux_variance[1:]
    frame.to_csv(path, index=False, float_format="%.17g")


def load_series(path: Union[str, Path]) -> SegmentedSeries:
    """Observation series from a trajectory CSV or a segment/value CSV."""
    frame = _read_csv(path)
    if {"segment", "value"} <= set(frame.columns):
        values = frame["value"].to_numpy(dtype=float)
        keys = frame["segment"].astype(str).tolist()
    elif "y" in frame.columns:
        obs = frame["y"].to_numpy(dtype=float)
        if "t" in frame.columns:
            obs = obs[frame["t"].to_numpy() >= 1]
        values, keys = obs, ["0"] * obs.shape[0]
    else:
        raise DataError("expected columns (segment, value) or (t, x, y)", path=str(path))
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise DataError("observations must be finite", index=int(bad[0]), path=str(path))
    series = segment_by_key(values, keys)
    return SegmentedSeries(series.segments, series.keys, {"source": str(path)})

