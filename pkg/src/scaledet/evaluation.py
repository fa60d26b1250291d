"""Detection evaluation: greedy matching, average precision, scale bins.

Ground-truth boxes shorter than 15 pixels are don't-care regions: they are
never counted as positives, and detections whose best overlap lands on one
are dropped rather than penalized. Objects 15 pixels and taller fall into
Small / Medium / Large height bins with boundaries at 39 and 66 pixels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .geometry import Roi, iou
from .postprocess import Detection

IGNORE_HEIGHT = 15.0
_SMALL_UPPER = 39.0
_MEDIUM_UPPER = 66.0


class ScaleBin(enum.Enum):
    IGNORED = "ignored"
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class MatchLabel(enum.Enum):
    TP = "tp"
    FP = "fp"
    DROPPED = "dropped"  # best overlap was a don't-care region


@dataclass(frozen=True)
class GroundTruth:
    """An annotated object; boxes shorter than 15 px are forced to don't-care."""

    class_id: str
    box: Roi
    ignore: bool = False

    def __post_init__(self):
        if self.box.height < IGNORE_HEIGHT and not self.ignore:
            object.__setattr__(self, "ignore", True)


@dataclass(frozen=True)
class MatchResult:
    """Per-detection labels plus which ground truth each TP consumed."""

    labels: tuple[MatchLabel, ...]
    matched_gt: tuple[int | None, ...]
    n_matched: int


def scale_bin(height: float) -> ScaleBin:
    """Height bin of an object: <15 ignored, [15,39) small, [39,66] medium, >66 large."""
    if not height > 0:
        raise ValueError(f"height must be positive, got {height}")
    if height < IGNORE_HEIGHT:
        return ScaleBin.IGNORED
    if height < _SMALL_UPPER:
        return ScaleBin.SMALL
    if height <= _MEDIUM_UPPER:
        return ScaleBin.MEDIUM
    return ScaleBin.LARGE


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float,
) -> MatchResult:
    """Greedily match detections to same-class ground truths by IoU.

    Detections are visited in descending score order (ties by lower
    index). A detection is TP when its best-IoU unmatched non-ignored
    same-class ground truth reaches the threshold; each ground truth is
    consumed at most once. Failing that, a detection whose best same-class
    overlap overall is a don't-care box at or above the threshold is
    dropped; everything else is FP.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    labels: list[MatchLabel | None] = [None] * len(dets)
    matched: list[int | None] = [None] * len(dets)
    gt_taken = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for i in order:
        det = dets[i]
        overlaps = [
            (k, iou(det.box, gt.box)) for k, gt in enumerate(gts) if gt.class_id == det.class_id
        ]
        best_open = max(
            ((k, v) for k, v in overlaps if not gts[k].ignore and not gt_taken[k]),
            key=lambda kv: (kv[1], -kv[0]),
            default=None,
        )
        if best_open is not None and best_open[1] >= iou_threshold:
            k = best_open[0]
            gt_taken[k] = True
            labels[i] = MatchLabel.TP
            matched[i] = k
            continue
        best_any = max(overlaps, key=lambda kv: (kv[1], -kv[0]), default=None)
        if best_any is not None and gts[best_any[0]].ignore and best_any[1] >= iou_threshold:
            labels[i] = MatchLabel.DROPPED
        else:
            labels[i] = MatchLabel.FP
    return MatchResult(
        labels=tuple(labels),
        matched_gt=tuple(matched),
        n_matched=sum(gt_taken),
    )


def average_precision(
    labels: Sequence[bool],
    n_positive: int,
    interpolation: str = "all",
) -> float:
    """Area under the interpolated precision-recall curve.

    ``labels`` is the TP(True)/FP(False) sequence in descending score
    order. "all" integrates the precision envelope over every recall
    increment; "11point" averages the envelope at recalls 0.0, 0.1, ... 1.0.
    Computed in exact rational arithmetic, rounded once on return.
    """
    if n_positive < 0:
        raise ValueError(f"n_positive must be >= 0, got {n_positive}")
    if interpolation not in ("all", "11point"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    n_tp = sum(1 for lab in labels if lab)
    if n_tp > n_positive:
        raise ValueError(f"{n_tp} true positives exceed n_positive={n_positive}")
    if n_positive == 0:
        return 0.0

    points: list[tuple[Fraction, Fraction]] = []  # (recall, precision)
    tp = 0
    for rank, lab in enumerate(labels, start=1):
        if lab:
            tp += 1
        points.append((Fraction(tp, n_positive), Fraction(tp, rank)))

    # Precision envelope: best precision at any recall >= r.
    envelope: list[tuple[Fraction, Fraction]] = []
    best = Fraction(0)
    for recall, precision in reversed(points):
        best = max(best, precision)
        envelope.append((recall, best))
    envelope.reverse()

    if interpolation == "all":
        ap = Fraction(0)
        prev = Fraction(0)
        for recall, precision in envelope:
            ap += (recall - prev) * precision
            prev = recall
        return float(ap)

    total = Fraction(0)
    for k in range(11):
        t = Fraction(k, 10)
        total += max((p for r, p in envelope if r >= t), default=Fraction(0))
    return float(total / 11)


@dataclass(frozen=True)
class BinResult:
    """AP of one (class, scale-bin) cell plus its supporting counts."""

    class_id: str
    bin: ScaleBin
    ap: float
    n_gt: int
    n_tp: int
    n_fp: int


def evaluate_by_scale(
    dets: Sequence[tuple[str, Detection]],
    gts: Sequence[tuple[str, GroundTruth]],
    iou_threshold: float = 0.7,
    interpolation: str = "all",
) -> list[BinResult]:
    """Scale-binned AP over (image, detection) and (image, ground-truth) pairs.

    Matching runs per image. A true positive counts only toward the bin of
    the ground truth it matched; a false positive counts against every bin
    of its class; dropped detections count nowhere.
    """
    images = sorted({img for img, _ in dets} | {img for img, _ in gts})
    # (class, score, insertion order, label, matched-gt bin or None)
    scored: list[tuple[str, float, int, MatchLabel, ScaleBin | None]] = []
    counter = 0
    for img in images:
        img_dets = [d for i, d in dets if i == img]
        img_gts = [g for i, g in gts if i == img]
        result = match_detections(img_dets, img_gts, iou_threshold)
        for det, label, gt_idx in zip(img_dets, result.labels, result.matched_gt):
            gt_bin = scale_bin(img_gts[gt_idx].box.height) if gt_idx is not None else None
            scored.append((det.class_id, det.score, counter, label, gt_bin))
            counter += 1

    classes = sorted({g.class_id for _, g in gts} | {d.class_id for _, d in dets})
    results = []
    for cls in classes:
        cls_rows = sorted(
            (row for row in scored if row[0] == cls), key=lambda row: (-row[1], row[2])
        )
        gt_bins = [scale_bin(g.box.height) for _, g in gts if g.class_id == cls and not g.ignore]
        for bin_ in (ScaleBin.SMALL, ScaleBin.MEDIUM, ScaleBin.LARGE):
            labels = []
            for _, _, _, label, gt_bin in cls_rows:
                if label is MatchLabel.FP:
                    labels.append(False)
                elif label is MatchLabel.TP and gt_bin is bin_:
                    labels.append(True)
            n_gt = sum(1 for b in gt_bins if b is bin_)
            results.append(
                BinResult(
                    class_id=cls,
                    bin=bin_,
                    ap=average_precision(labels, n_gt, interpolation),
                    n_gt=n_gt,
                    n_tp=sum(labels),
                    n_fp=sum(1 for lab in labels if not lab),
                )
            )
    return results
