"""Region-of-interest pooling, plain and context-aware, with exact backward.

Plain RoI pooling maps a proposal's feature-map cells onto a fixed P x P
grid by per-sub-window max. When the proposal is smaller than P cells the
sub-window boundary formula degenerates into block replication, which is
exactly the behaviour the context-aware variant exists to avoid: there,
small proposals are first enlarged by a depthwise transposed convolution
with a bilinear kernel (integer factor ceil(P / dim) per short axis) and
the max pooling runs over the enlarged map instead.

Every forward call returns a :class:`PoolRecord` capturing the case taken,
the per-axis factors, and the argmax of each output cell in the (possibly
enlarged) proposal space. The backward pass replays those records: upstream
gradients are deposited at the recorded argmax positions, pushed through
the transposed convolution's adjoint where a kernel was applied, and
accumulated into a feature-map-shaped gradient over all proposals.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyRoiError
from .geometry import Roi
from .tensor import (
    BilinearKernel,
    Tensor3,
    _deconv2d_input_grad_raw,
    _deconv2d_raw,
    make_bilinear_kernel,
)


class CaseTag(enum.Enum):
    """Which pooling regime a proposal falls into, relative to the pooled size P."""

    SHRINK = "shrink"                    # both grid dims >= P
    ENLARGE = "enlarge"                  # both grid dims < P
    MIXED_H_ENLARGE = "mixed-h-enlarge"  # height < P <= width
    MIXED_W_ENLARGE = "mixed-w-enlarge"  # width < P <= height


@dataclass(frozen=True)
class GridRect:
    """Half-open cell rectangle [row0, row1) x [col0, col1) on a feature map."""

    row0: int
    row1: int
    col0: int
    col1: int

    def __post_init__(self):
        if self.row1 <= self.row0 or self.col1 <= self.col0:
            raise ValueError(f"empty grid rectangle: {self}")
        if self.row0 < 0 or self.col0 < 0:
            raise ValueError(f"negative grid rectangle origin: {self}")

    @property
    def height(self) -> int:
        return self.row1 - self.row0

    @property
    def width(self) -> int:
        return self.col1 - self.col0


@dataclass(frozen=True)
class PoolRecord:
    """Provenance of one forward pooling pass, sufficient for exact backward.

    ``argmax`` holds, per channel and output cell, the linear index
    (row * enlarged_width + col) of the selected maximum inside the
    enlarged proposal plane. Factors are 1 on axes that were not enlarged,
    in which case the enlarged plane is the proposal crop itself.
    """

    rect: GridRect
    case: CaseTag
    factor_h: int
    factor_w: int
    argmax: np.ndarray

    def __post_init__(self):
        if self.factor_h < 1 or self.factor_w < 1:
            raise ValueError(f"factors must be >= 1, got ({self.factor_h}, {self.factor_w})")
        am = np.array(self.argmax, dtype=np.int64, copy=True)
        if am.ndim != 3:
            raise ValueError(f"argmax must be (C, P, P), got shape {am.shape}")
        eh, ew = self.enlarged_shape
        if am.size and (am.min() < 0 or am.max() >= eh * ew):
            raise ValueError("argmax indices outside the enlarged proposal bounds")
        am.setflags(write=False)
        object.__setattr__(self, "argmax", am)

    @property
    def enlarged_shape(self) -> tuple[int, int]:
        return self.rect.height * self.factor_h, self.rect.width * self.factor_w


@dataclass(frozen=True)
class PooledFeature:
    """A C x P x P pooled tensor together with its provenance record."""

    tensor: Tensor3
    record: PoolRecord

    def __post_init__(self):
        c, p0, p1 = self.tensor.shape
        if self.record.argmax.shape != (c, p0, p1):
            raise ValueError(
                f"record argmax shape {self.record.argmax.shape} does not match "
                f"pooled tensor shape {self.tensor.shape}"
            )


def grid_rect(roi: Roi, stride: int, fm_dims: tuple[int, int]) -> GridRect:
    """Project image-pixel box coordinates onto feature-map cells.

    Start edges use floor(coord / stride), end edges ceil(coord / stride),
    then the rectangle is clamped to the map. A box entirely outside the
    map raises :class:`EmptyRoiError`.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    fm_h, fm_w = fm_dims
    row0 = max(math.floor(roi.y1 / stride), 0)
    row1 = min(math.ceil(roi.y2 / stride), fm_h)
    col0 = max(math.floor(roi.x1 / stride), 0)
    col1 = min(math.ceil(roi.x2 / stride), fm_w)
    if row1 <= row0 or col1 <= col0:
        raise EmptyRoiError(f"roi {roi} covers no cells of a {fm_h}x{fm_w} map at stride {stride}")
    return GridRect(row0, row1, col0, col1)


def dispatch_case(dims: tuple[int, int], pooled_size: int) -> tuple[CaseTag, int, int]:
    """Pick the pooling case and per-axis enlargement factors for a proposal.

    Per axis the factor is 1 when the proposal already spans at least
    ``pooled_size`` cells, otherwise ceil(pooled_size / dim).
    """
    h, w = dims
    if h < 1 or w < 1 or pooled_size < 1:
        raise ValueError(f"dims and pooled size must be >= 1, got {dims}, {pooled_size}")
    factor_h = 1 if h >= pooled_size else -(-pooled_size // h)
    factor_w = 1 if w >= pooled_size else -(-pooled_size // w)
    if factor_h == 1 and factor_w == 1:
        case = CaseTag.SHRINK
    elif factor_h > 1 and factor_w > 1:
        case = CaseTag.ENLARGE
    elif factor_h > 1:
        case = CaseTag.MIXED_H_ENLARGE
    else:
        case = CaseTag.MIXED_W_ENLARGE
    return case, factor_h, factor_w


def window_edges(dim: int, pooled_size: int) -> list[tuple[int, int]]:
    """Half-open sub-window bounds along one axis of length ``dim``.

    Window j spans [floor(j*dim/P), ceil((j+1)*dim/P)); consecutive windows
    may overlap (dim > P) or repeat cells (dim < P), but are never empty.
    """
    edges = []
    for j in range(pooled_size):
        start = (j * dim) // pooled_size
        end = -((-(j + 1) * dim) // pooled_size)
        end = min(max(end, start + 1), dim)
        edges.append((start, end))
    return edges


def _max_pool(plane: np.ndarray, pooled_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Max-pool a (C, h, w) array onto (C, P, P); argmax as linear h*w index."""
    c, h, w = plane.shape
    out = np.empty((c, pooled_size, pooled_size), dtype=np.float64)
    argmax = np.empty((c, pooled_size, pooled_size), dtype=np.int64)
    rows = window_edges(h, pooled_size)
    cols = window_edges(w, pooled_size)
    for j, (r0, r1) in enumerate(rows):
        for k, (c0, c1) in enumerate(cols):
            win = plane[:, r0:r1, c0:c1]
            flat = win.reshape(c, -1)
            local = flat.argmax(axis=1)  # first occurrence: lowest linear index wins ties
            out[:, j, k] = flat[np.arange(c), local]
            win_w = c1 - c0
            argmax[:, j, k] = (r0 + local // win_w) * w + (c0 + local % win_w)
    return out, argmax


def roi_pool_forward(fm: Tensor3, roi: Roi, pooled_size: int, stride: int) -> PooledFeature:
    """Plain RoI pooling: per-sub-window max over the proposal's cells.

    Proposals smaller than the pooled size are covered by repeating cells
    across sub-windows (block replication); the record keeps factors at 1
    so the backward pass is a pure max-pool gradient scatter.
    """
    rect = grid_rect(roi, stride, (fm.height, fm.width))
    case, _, _ = dispatch_case((rect.height, rect.width), pooled_size)
    crop = fm.data[:, rect.row0:rect.row1, rect.col0:rect.col1]
    pooled, argmax = _max_pool(crop, pooled_size)
    record = PoolRecord(rect=rect, case=case, factor_h=1, factor_w=1, argmax=argmax)
    return PooledFeature(Tensor3(pooled), record)


def caroi_pool_forward(fm: Tensor3, roi: Roi, pooled_size: int, stride: int) -> PooledFeature:
    """Context-aware RoI pooling forward pass.

    Proposals at least P cells in both dims take the plain pooling path
    unchanged. Any axis shorter than P is enlarged by transposed
    convolution with a bilinear kernel of factor ceil(P / dim) (factor 1
    axes are untouched), and the sub-window max runs over the enlarged
    map. Enlargement can overshoot P; the trailing max-pool absorbs it.
    """
    rect = grid_rect(roi, stride, (fm.height, fm.width))
    case, factor_h, factor_w = dispatch_case((rect.height, rect.width), pooled_size)
    crop = fm.data[:, rect.row0:rect.row1, rect.col0:rect.col1]
    if case is CaseTag.SHRINK:
        pooled, argmax = _max_pool(crop, pooled_size)
        record = PoolRecord(rect=rect, case=case, factor_h=1, factor_w=1, argmax=argmax)
        return PooledFeature(Tensor3(pooled), record)
    kernel = make_bilinear_kernel(factor_h, factor_w)
    enlarged = _deconv2d_raw(np.ascontiguousarray(crop), kernel)
    pooled, argmax = _max_pool(enlarged, pooled_size)
    record = PoolRecord(rect=rect, case=case, factor_h=factor_h, factor_w=factor_w, argmax=argmax)
    return PooledFeature(Tensor3(pooled), record)


def caroi_pool_backward(
    out_grads: Sequence[Tensor3],
    records: Sequence[PoolRecord],
    fm_shape: tuple[int, int, int],
) -> Tensor3:
    """Accumulate pooled-output gradients back onto the feature map.

    For every proposal the upstream C x P x P gradient is deposited at the
    recorded argmax positions of the enlarged plane, mapped back to
    proposal cells through the transposed convolution's adjoint (identity
    when both factors are 1), and summed into the shared feature-map
    gradient. Summation order only matters up to float associativity.
    """
    if len(out_grads) != len(records):
        raise ValueError(f"{len(out_grads)} gradients for {len(records)} records")
    c, fm_h, fm_w = fm_shape
    if c < 1 or fm_h < 1 or fm_w < 1:
        raise ValueError(f"invalid feature-map shape {fm_shape}")
    fm_grad = np.zeros((c, fm_h, fm_w), dtype=np.float64)
    for grad, rec in zip(out_grads, records):
        if grad.shape != rec.argmax.shape:
            raise ValueError(
                f"gradient shape {grad.shape} does not match record argmax shape {rec.argmax.shape}"
            )
        if grad.channels != c:
            raise ValueError(f"gradient has {grad.channels} channels, feature map has {c}")
        if rec.rect.row1 > fm_h or rec.rect.col1 > fm_w:
            raise ValueError(f"record rect {rec.rect} exceeds feature-map dims ({fm_h}, {fm_w})")
        eh, ew = rec.enlarged_shape
        enlarged_grad = np.zeros((c, eh * ew), dtype=np.float64)
        g = grad.data.reshape(c, -1)
        am = rec.argmax.reshape(c, -1)
        for ch in range(c):
            np.add.at(enlarged_grad[ch], am[ch], g[ch])
        enlarged_grad = enlarged_grad.reshape(c, eh, ew)
        if rec.factor_h == 1 and rec.factor_w == 1:
            prop_grad = enlarged_grad
        else:
            kernel = make_bilinear_kernel(rec.factor_h, rec.factor_w)
            prop_grad = _deconv2d_input_grad_raw(
                enlarged_grad, kernel, (c, rec.rect.height, rec.rect.width)
            )
        fm_grad[:, rec.rect.row0:rec.rect.row1, rec.rect.col0:rec.rect.col1] += prop_grad
    return Tensor3(fm_grad)


def enlarged_plane(fm: Tensor3, record: PoolRecord) -> np.ndarray:
    """Recompute the (C, eh, ew) plane the record's argmax indices refer to."""
    crop = fm.data[:, record.rect.row0:record.rect.row1, record.rect.col0:record.rect.col1]
    if record.factor_h == 1 and record.factor_w == 1:
        return np.array(crop)
    kernel = make_bilinear_kernel(record.factor_h, record.factor_w)
    return _deconv2d_raw(np.ascontiguousarray(crop), kernel)


def kernel_for_record(record: PoolRecord) -> BilinearKernel:
    """The bilinear kernel the forward pass used (identity for factor 1 axes)."""
    return make_bilinear_kernel(record.factor_h, record.factor_w)
