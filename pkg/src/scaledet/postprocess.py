"""Greedy non-maximum suppression and its coordinate-averaging variant.

Both operate per class and keep the highest-scored box of every overlap
cluster. The averaging variant additionally replaces the kept box's
coordinates with the unweighted mean over the cluster members whose score
is within a factor rho of the keeper's, improving localization when
several confident boxes cover one object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .geometry import Roi, iou


@dataclass(frozen=True)
class Detection:
    """One classified box: label, confidence (conventionally in [0, 1]), box."""

    class_id: str
    score: float
    box: Roi

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")


def _greedy_clusters(dets: Sequence[Detection], iou_threshold: float) -> list[tuple[int, list[int]]]:
    """Greedy same-class clustering: (keeper index, suppressed indices) pairs.

    Detections are visited in descending score order (ties broken by lower
    original index); each keeper suppresses every not-yet-suppressed
    same-class detection overlapping it with IoU > threshold.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    suppressed = [False] * len(dets)
    clusters = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        members = []
        for j in order[pos + 1:]:
            if suppressed[j] or dets[j].class_id != dets[i].class_id:
                continue
            if iou(dets[i].box, dets[j].box) > iou_threshold:
                suppressed[j] = True
                members.append(j)
        clusters.append((i, members))
    return clusters


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Keep the best box of each overlap cluster, sorted by descending score.

    Surviving same-class boxes are pairwise IoU <= threshold; boxes of
    different classes never suppress each other.
    """
    return [dets[i] for i, _ in _greedy_clusters(dets, iou_threshold)]


def soft_nms_avg(dets: Sequence[Detection], iou_threshold: float, rho: float) -> list[Detection]:
    """NMS that averages coordinates over each cluster's confident members.

    A suppressed box joins its keeper's member set when its score is at
    least rho times the keeper's; the output box is the per-coordinate
    unweighted mean over the member set and carries the keeper's score.
    Cluster count and scores are identical to :func:`nms`.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    out = []
    for keep, suppressed in _greedy_clusters(dets, iou_threshold):
        keeper = dets[keep]
        boxes = [keeper.box] + [
            dets[j].box for j in suppressed if dets[j].score >= rho * keeper.score
        ]
        n = len(boxes)
        if n == 1:
            out.append(keeper)
            continue
        avg = Roi(
            x1=sum(b.x1 for b in boxes) / n,
            y1=sum(b.y1 for b in boxes) / n,
            x2=sum(b.x2 for b in boxes) / n,
            y2=sum(b.y2 for b in boxes) / n,
            batch_index=keeper.box.batch_index,
        )
        out.append(replace(keeper, box=avg))
    return out
