"""Command engines: gradient checking, pooling comparison, detection pipeline.

These are the testable cores behind the CLI subcommands. Each is a pure
function of its configuration (all randomness flows from explicit seeds),
so running one twice produces identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from .evaluation import scale_bin
from .pooling import (
    CaseTag,
    PoolRecord,
    Tensor3,
    caroi_pool_backward,
    caroi_pool_forward,
    enlarged_plane,
    grid_rect,
    roi_pool_forward,
    window_edges,
)
from .postprocess import Detection, nms, soft_nms_avg
from .routing import fuse, route
from .geometry import Roi
from .synth import gen_scene, pattern_reference, structure_score

ALL_CASES = (CaseTag.SHRINK, CaseTag.ENLARGE, CaseTag.MIXED_H_ENLARGE, CaseTag.MIXED_W_ENLARGE)

BackwardFn = Callable[[Sequence[Tensor3], Sequence[PoolRecord], tuple[int, int, int]], Tensor3]


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def window_top2_gap(plane: np.ndarray, pooled_size: int) -> np.ndarray:
    """Per output cell, the margin between the window max and runner-up.

    Single-cell windows have an infinite margin. Used to exclude outputs
    whose max is (nearly) tied, where a finite-difference step could cross
    the argmax switch.
    """
    c, h, w = plane.shape
    gap = np.full((c, pooled_size, pooled_size), np.inf)
    rows = window_edges(h, pooled_size)
    cols = window_edges(w, pooled_size)
    for j, (r0, r1) in enumerate(rows):
        for k, (c0, c1) in enumerate(cols):
            flat = plane[:, r0:r1, c0:c1].reshape(c, -1)
            if flat.shape[1] < 2:
                continue
            top2 = np.partition(flat, flat.shape[1] - 2, axis=1)[:, -2:]
            gap[:, j, k] = top2[:, 1] - top2[:, 0]
    return gap


def fd_feature_gradient(
    fm: Tensor3,
    roi: Roi,
    pooled_size: int,
    stride: int,
    upstream: np.ndarray,
    step: float = 1e-3,
) -> np.ndarray:
    """Central finite differences of <upstream, pooled output> w.r.t. the map.

    Only cells inside the proposal's grid rectangle are probed; the output
    cannot depend on anything outside it, so those entries stay zero.
    """
    rect = grid_rect(roi, stride, (fm.height, fm.width))
    grad = np.zeros(fm.shape)
    base = np.array(fm.data)

    def loss(arr: np.ndarray) -> float:
        pooled = caroi_pool_forward(Tensor3(arr), roi, pooled_size, stride)
        return float((pooled.tensor.data * upstream).sum())

    for ch in range(fm.channels):
        for r in range(rect.row0, rect.row1):
            for c in range(rect.col0, rect.col1):
                base[ch, r, c] += step
                up = loss(base)
                base[ch, r, c] -= 2 * step
                down = loss(base)
                base[ch, r, c] += step
                grad[ch, r, c] = (up - down) / (2 * step)
    return grad


def check_gradient(
    fm: Tensor3,
    roi: Roi,
    pooled_size: int,
    stride: int,
    rng: np.random.Generator,
    *,
    step: float = 1e-3,
    tie_gap: float = 1e-2,
    backward_fn: BackwardFn = caroi_pool_backward,
) -> tuple[float, CaseTag]:
    """Compare analytic backward against finite differences for one proposal.

    Draws a random upstream gradient, zeroes it at tie-adjacent output
    cells (window margin below ``tie_gap``), and returns the max elementwise
    relative error together with the proposal's case tag. Analytic gradient
    mass outside the proposal's rectangle counts as an immediate failure.
    """
    pooled = caroi_pool_forward(fm, roi, pooled_size, stride)
    rec = pooled.record
    upstream = rng.uniform(-1.0, 1.0, size=pooled.tensor.shape)
    gaps = window_top2_gap(enlarged_plane(fm, rec), pooled_size)
    upstream[gaps < tie_gap] = 0.0

    analytic = backward_fn([Tensor3(upstream)], [rec], fm.shape).data
    outside = np.array(analytic)
    outside[:, rec.rect.row0:rec.rect.row1, rec.rect.col0:rec.rect.col1] = 0.0
    if np.abs(outside).max() > 0.0:
        return float("inf"), rec.case

    fd = fd_feature_gradient(fm, roi, pooled_size, stride, upstream, step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6)
    rel = np.abs(analytic - fd) / denom
    return float(rel.max()), rec.case


@dataclass(frozen=True)
class GradcheckConfig:
    seed: int = 0
    pooled_size: int = 6
    channels: int = 2
    fm_height: int = 12
    fm_width: int = 12
    stride: int = 1
    cases: tuple[CaseTag, ...] = ALL_CASES
    configs_per_case: int = 5
    step: float = 1e-3
    tolerance: float = 1e-4
    tie_gap: float = 1e-2


@dataclass(frozen=True)
class GradcheckCaseResult:
    case: CaseTag
    n_configs: int
    max_rel_err: float


@dataclass(frozen=True)
class GradcheckReport:
    rows: tuple[GradcheckCaseResult, ...]
    tolerance: float

    @property
    def covered(self) -> tuple[CaseTag, ...]:
        return tuple(r.case for r in self.rows)

    @property
    def covers_all_cases(self) -> bool:
        return set(self.covered) == set(ALL_CASES)

    @property
    def ok(self) -> bool:
        return all(r.max_rel_err <= self.tolerance for r in self.rows)


def _dims_for_case(case: CaseTag, pooled_size: int, fm_dims: tuple[int, int],
                   rng: np.random.Generator) -> tuple[int, int]:
    fm_h, fm_w = fm_dims
    small = lambda: int(rng.integers(1, pooled_size))
    large = lambda cap: int(rng.integers(pooled_size, cap + 1))
    if case is CaseTag.SHRINK:
        return large(fm_h), large(fm_w)
    if case is CaseTag.ENLARGE:
        return small(), small()
    if case is CaseTag.MIXED_H_ENLARGE:
        return small(), large(fm_w)
    return large(fm_h), small()


def run_gradcheck(
    config: GradcheckConfig = GradcheckConfig(),
    backward_fn: BackwardFn = caroi_pool_backward,
) -> GradcheckReport:
    """Finite-difference sweep over proposal shapes for every requested case."""
    if config.pooled_size > min(config.fm_height, config.fm_width):
        raise ValueError(
            f"pooled size {config.pooled_size} exceeds feature map "
            f"({config.fm_height}, {config.fm_width}); no room for the shrink case"
        )
    rng = np.random.default_rng(config.seed)
    rows = []
    for case in config.cases:
        worst = 0.0
        for _ in range(config.configs_per_case):
            fm = Tensor3(rng.uniform(0.0, 1.0, (config.channels, config.fm_height, config.fm_width)))
            h, w = _dims_for_case(case, config.pooled_size, (config.fm_height, config.fm_width), rng)
            r0 = int(rng.integers(0, config.fm_height - h + 1))
            c0 = int(rng.integers(0, config.fm_width - w + 1))
            roi = Roi(
                x1=float(c0 * config.stride),
                y1=float(r0 * config.stride),
                x2=float((c0 + w) * config.stride),
                y2=float((r0 + h) * config.stride),
            )
            err, tagged = check_gradient(
                fm, roi, config.pooled_size, config.stride, rng,
                step=config.step, tie_gap=config.tie_gap, backward_fn=backward_fn,
            )
            assert tagged is case, f"dims ({h}, {w}) dispatched to {tagged}, expected {case}"
            worst = max(worst, err)
        rows.append(GradcheckCaseResult(case=case, n_configs=config.configs_per_case, max_rel_err=worst))
    return GradcheckReport(rows=tuple(rows), tolerance=config.tolerance)


# ---------------------------------------------------------------------------
# Pooling comparison study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompareConfig:
    seed: int = 0
    scenes: int = 20
    patterns: int = 8
    scale_lo: int = 3
    scale_hi: int = 48
    pooled_size: int = 6
    channels: int = 1
    height: int = 160
    width: int = 160
    stride: int = 1


@dataclass(frozen=True)
class CompareRow:
    scene_seed: int
    pattern_id: int
    grid_h: int
    grid_w: int
    case: CaseTag
    size_class: str  # "small" when min grid dim < P, else "large"
    scale_bin: str   # height bin of the box in image pixels
    score_roi: float
    score_caroi: float


@dataclass(frozen=True)
class CompareSummary:
    size_class: str
    n: int
    mean_score_roi: float
    mean_score_caroi: float


def run_compare(config: CompareConfig = CompareConfig()) -> tuple[list[CompareRow], list[CompareSummary]]:
    """Pool every planted pattern both ways and score structure preservation.

    Scene s uses seed ``config.seed + s``. Returns per-pattern rows plus
    mean scores grouped by whether the pattern needed enlargement.
    """
    rows = []
    for s in range(config.scenes):
        scene_seed = config.seed + s
        scene = gen_scene(
            scene_seed,
            config.patterns,
            (config.scale_lo, config.scale_hi),
            channels=config.channels,
            height=config.height,
            width=config.width,
            stride=config.stride,
        )
        fm = scene.feature_map
        for roi, pid in scene.planted:
            rect = grid_rect(roi, scene.stride, (fm.height, fm.width))
            pooled_roi = roi_pool_forward(fm, roi, config.pooled_size, scene.stride)
            pooled_caroi = caroi_pool_forward(fm, roi, config.pooled_size, scene.stride)
            ref = pattern_reference(
                pid, scene_seed, rect.height, rect.width, config.pooled_size, config.channels
            )
            rows.append(
                CompareRow(
                    scene_seed=scene_seed,
                    pattern_id=pid,
                    grid_h=rect.height,
                    grid_w=rect.width,
                    case=pooled_caroi.record.case,
                    size_class="small" if min(rect.height, rect.width) < config.pooled_size else "large",
                    scale_bin=scale_bin(roi.height).value,
                    score_roi=structure_score(pooled_roi, ref),
                    score_caroi=structure_score(pooled_caroi, ref),
                )
            )
    summaries = []
    for size_class in ("small", "large"):
        group = [r for r in rows if r.size_class == size_class]
        if not group:
            continue
        summaries.append(
            CompareSummary(
                size_class=size_class,
                n=len(group),
                mean_score_roi=float(np.mean([r.score_roi for r in group])),
                mean_score_caroi=float(np.mean([r.score_caroi for r in group])),
            )
        )
    return rows, summaries


# ---------------------------------------------------------------------------
# Detection pipeline
# ---------------------------------------------------------------------------

class BranchScorer(Protocol):
    """Pluggable per-branch confidence scorer.

    The branch classifiers themselves are out of scope here; implementations
    map a routed detection to a (possibly revised) confidence.
    """

    def rescore(self, det: Detection, branch: int) -> float: ...


class PassthroughScorer:
    """Deterministic default scorer: confidence is passed through unchanged."""

    def rescore(self, det: Detection, branch: int) -> float:
        return det.score


def run_pipeline(
    dets: Sequence[Detection],
    thresholds: Sequence[float],
    *,
    method: str = "soft",
    iou_threshold: float = 0.5,
    rho: float = 0.9,
    scorer: BranchScorer | None = None,
) -> list[Detection]:
    """Route detections by scale, rescore per branch, fuse, then suppress."""
    if method not in ("soft", "nms"):
        raise ValueError(f"unknown method {method!r} (expected 'soft' or 'nms')")
    scorer = scorer if scorer is not None else PassthroughScorer()
    n_branches = len(thresholds) + 1
    branches: list[list[Detection]] = [[] for _ in range(n_branches)]
    for assignment in route([d.box for d in dets], thresholds):
        det = dets[assignment.proposal_index]
        branches[assignment.branch].append(
            replace(det, score=scorer.rescore(det, assignment.branch))
        )
    fused = fuse(branches)
    if method == "soft":
        return soft_nms_avg(fused, iou_threshold, rho)
    return nms(fused, iou_threshold)
