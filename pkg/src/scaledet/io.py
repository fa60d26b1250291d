"""Delimited file formats: proposals, detections, ground truth, config.

All CSVs are UTF-8 with a mandatory header row. Floats are written with
repr so values round-trip exactly. Malformed rows raise
:class:`FileFormatError` carrying the 1-based line number.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .errors import FileFormatError
from .evaluation import GroundTruth
from .geometry import Roi
from .postprocess import Detection

PROPOSALS_HEADER = ["batch", "x1", "y1", "x2", "y2", "score"]
DETECTIONS_HEADER = ["class", "score", "x1", "y1", "x2", "y2"]
IMAGE_DETECTIONS_HEADER = ["image"] + DETECTIONS_HEADER
GROUND_TRUTH_HEADER = ["image", "class", "x1", "y1", "x2", "y2", "ignore"]


def _read_rows(path: str | Path, header: list[str]) -> list[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            first = next(reader)
        except StopIteration:
            raise FileFormatError(1, f"missing header row (expected {','.join(header)})")
        if [col.strip() for col in first] != header:
            raise FileFormatError(1, f"bad header {first}, expected {header}")
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(line, f"expected {len(header)} fields, got {len(row)}")
            rows.append((line, row))
    return rows


def _parse_float(line: int, name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise FileFormatError(line, f"bad {name} value {raw!r}") from None


def _parse_int(line: int, name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise FileFormatError(line, f"bad {name} value {raw!r}") from None


def _parse_roi(line: int, fields: dict[str, str], batch: int = 0) -> Roi:
    coords = {name: _parse_float(line, name, fields[name]) for name in ("x1", "y1", "x2", "y2")}
    try:
        return Roi(batch_index=batch, **coords)
    except ValueError as exc:
        raise FileFormatError(line, str(exc)) from None


def read_proposals(path: str | Path) -> list[tuple[Roi, float]]:
    """Read a proposals CSV into (roi, objectness score) pairs."""
    out = []
    for line, row in _read_rows(path, PROPOSALS_HEADER):
        fields = dict(zip(PROPOSALS_HEADER, row))
        batch = _parse_int(line, "batch", fields["batch"])
        if batch < 0:
            raise FileFormatError(line, f"batch must be >= 0, got {batch}")
        roi = _parse_roi(line, fields, batch)
        out.append((roi, _parse_float(line, "score", fields["score"])))
    return out


def write_proposals(path: str | Path, proposals: Sequence[tuple[Roi, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PROPOSALS_HEADER)
        for roi, score in proposals:
            writer.writerow(
                [roi.batch_index, repr(roi.x1), repr(roi.y1), repr(roi.x2), repr(roi.y2), repr(score)]
            )


def _detection_from(line: int, fields: dict[str, str]) -> Detection:
    roi = _parse_roi(line, fields)
    return Detection(
        class_id=fields["class"],
        score=_parse_float(line, "score", fields["score"]),
        box=roi,
    )


def read_detections(path: str | Path) -> list[Detection]:
    """Read a detections CSV (class,score,x1,y1,x2,y2)."""
    return [
        _detection_from(line, dict(zip(DETECTIONS_HEADER, row)))
        for line, row in _read_rows(path, DETECTIONS_HEADER)
    ]


def write_detections(path: str | Path, dets: Sequence[Detection]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(DETECTIONS_HEADER)
        for d in dets:
            writer.writerow(
                [d.class_id, repr(d.score), repr(d.box.x1), repr(d.box.y1), repr(d.box.x2), repr(d.box.y2)]
            )


def read_image_detections(path: str | Path) -> list[tuple[str, Detection]]:
    """Read a detections CSV with a leading image column, as used by evaluation."""
    out = []
    for line, row in _read_rows(path, IMAGE_DETECTIONS_HEADER):
        fields = dict(zip(IMAGE_DETECTIONS_HEADER, row))
        out.append((fields["image"], _detection_from(line, fields)))
    return out


def write_image_detections(path: str | Path, dets: Sequence[tuple[str, Detection]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(IMAGE_DETECTIONS_HEADER)
        for image, d in dets:
            writer.writerow(
                [image, d.class_id, repr(d.score), repr(d.box.x1), repr(d.box.y1), repr(d.box.x2), repr(d.box.y2)]
            )


def read_ground_truth(path: str | Path) -> list[tuple[str, GroundTruth]]:
    """Read a ground-truth CSV; the ignore column accepts 0/1."""
    out = []
    for line, row in _read_rows(path, GROUND_TRUTH_HEADER):
        fields = dict(zip(GROUND_TRUTH_HEADER, row))
        ignore_raw = fields["ignore"].strip()
        if ignore_raw not in ("0", "1"):
            raise FileFormatError(line, f"ignore must be 0 or 1, got {ignore_raw!r}")
        gt = GroundTruth(
            class_id=fields["class"],
            box=_parse_roi(line, fields),
            ignore=ignore_raw == "1",
        )
        out.append((fields["image"], gt))
    return out


def write_ground_truth(path: str | Path, gts: Sequence[tuple[str, GroundTruth]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(GROUND_TRUTH_HEADER)
        for image, g in gts:
            writer.writerow(
                [image, g.class_id, repr(g.box.x1), repr(g.box.y1), repr(g.box.x2), repr(g.box.y2),
                 "1" if g.ignore else "0"]
            )


def parse_config(path: str | Path) -> dict[str, str]:
    """Parse a plain key=value config file; '#' lines and blanks are skipped."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FileFormatError(line_no, f"expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise FileFormatError(line_no, "empty key")
            out[key] = value.strip()
    return out
