"""Scale statistics and routing of proposals to scale-specialized branches.

A proposal's scale is its box height in image pixels. Inference routing
splits proposals at fixed thresholds; training-style routing jitters the
thresholds with a Gaussian centered on the median training scale so that
proposals near the median visit both neighbouring branches over time.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Roi

_MIN_THRESHOLD = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class ScaleStats:
    """Median and spread (Gaussian standard deviation) of object scales."""

    median: float
    spread: float
    n_samples: int

    def __post_init__(self):
        if self.spread < 0:
            raise ValueError(f"spread must be >= 0, got {self.spread}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")


@dataclass(frozen=True)
class BranchAssignment:
    proposal_index: int
    branch: int


def fit_scale_stats(object_scales: Sequence[float]) -> ScaleStats:
    """Fit routing statistics from ground-truth object scales (pixels).

    The median is the sample median (mean of the middle two for even
    counts); the spread is half the interquartile range, computed with
    linearly interpolated quantiles.
    """
    scales = np.asarray(object_scales, dtype=np.float64)
    if scales.size == 0:
        raise ValueError("object_scales must be non-empty")
    if (scales <= 0).any() or not np.isfinite(scales).all():
        raise ValueError("object scales must be positive finite pixels")
    q1, q3 = np.percentile(scales, [25.0, 75.0])
    return ScaleStats(
        median=float(np.median(scales)),
        spread=float((q3 - q1) / 2.0),
        n_samples=int(scales.size),
    )


def sample_threshold(stats: ScaleStats, rng: int | np.random.Generator) -> float:
    """Draw one routing threshold from Normal(median, spread^2).

    The draw is clamped to median +/- 3 spread and to be strictly
    positive; with spread 0 it is exactly the median.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    value = gen.normal(stats.median, stats.spread)
    lo = stats.median - 3.0 * stats.spread
    hi = stats.median + 3.0 * stats.spread
    return max(min(max(value, lo), hi), _MIN_THRESHOLD)


def quantile_thresholds(object_scales: Sequence[float], n_branches: int) -> list[float]:
    """Thresholds at scale quantiles b/n_branches for b = 1..n_branches-1.

    For two branches this is the median. Quantiles use linear interpolation.
    """
    if n_branches < 1:
        raise ValueError(f"n_branches must be >= 1, got {n_branches}")
    scales = np.asarray(object_scales, dtype=np.float64)
    if scales.size == 0:
        raise ValueError("object_scales must be non-empty")
    ranks = [100.0 * b / n_branches for b in range(1, n_branches)]
    return [float(v) for v in np.percentile(scales, ranks)] if ranks else []


def route(proposals: Sequence[Roi], thresholds: Sequence[float]) -> list[BranchAssignment]:
    """Assign every proposal to exactly one branch by its box height.

    With thresholds t_0 < ... < t_{n-2}, branch b receives scales in
    [t_{b-1}, t_b) (t_{-1} = 0, t_{n-1} = inf); a scale exactly equal to
    a threshold goes to the higher branch.
    """
    ts = list(thresholds)
    for a, b in zip(ts, ts[1:]):
        if not b > a:
            raise ValueError(f"thresholds must be strictly increasing, got {ts}")
    return [
        BranchAssignment(proposal_index=i, branch=bisect.bisect_right(ts, roi.height))
        for i, roi in enumerate(proposals)
    ]


def fuse(per_branch_detections: Sequence[Sequence]) -> list:
    """Concatenate per-branch outputs, preserving every entry and branch order."""
    fused = []
    for branch in per_branch_detections:
        fused.extend(branch)
    return fused


def save_scale_stats(stats: ScaleStats, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {"median": stats.median, "spread": stats.spread, "n_samples": stats.n_samples},
            f,
            indent=2,
        )
        f.write("\n")


def load_scale_stats(path: str | Path) -> ScaleStats:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    try:
        return ScaleStats(
            median=float(raw["median"]),
            spread=float(raw["spread"]),
            n_samples=int(raw["n_samples"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: not a scale-stats file ({exc})") from exc
