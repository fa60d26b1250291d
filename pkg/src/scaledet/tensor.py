"""Dense C x H x W tensors and bilinear-kernel transposed convolution.

The transposed convolution here is a geometric resize: one separable
bilinear kernel is shared by every channel (depthwise, no cross-channel
mixing), the stride equals the upsampling factor, and the padding is
chosen so the output is exactly ``factor * input`` along each axis.
All values are held as float64 in memory; the on-disk format is float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"SPT1"


@dataclass(frozen=True)
class Tensor3:
    """Immutable dense tensor with shape (channels, height, width).

    Data is row-major within each channel and stored as float64. The
    wrapped array is copied on construction and marked read-only, so
    instances are safe to share across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3:
            raise ValueError(f"expected 3 dimensions (C, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BilinearKernel:
    """Separable bilinear upsampling kernel for integer factors.

    Along an axis with factor f the 1-D profile has length 2f - (f mod 2),
    and the 2-D weights are the outer product of the two profiles. Factor 1
    degenerates to the 1x1 identity kernel.
    """

    factor_h: int
    factor_w: int
    weights: np.ndarray

    def __post_init__(self):
        if self.factor_h < 1 or self.factor_w < 1:
            raise ValueError(f"factors must be >= 1, got ({self.factor_h}, {self.factor_w})")
        w = np.array(self.weights, dtype=np.float64, copy=True)
        expected = (_profile_size(self.factor_h), _profile_size(self.factor_w))
        if w.shape != expected:
            raise ValueError(f"kernel shape {w.shape} does not match factors (expected {expected})")
        if (w < 0.0).any() or (w > 1.0).any():
            raise ValueError("kernel weights must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size_h(self) -> int:
        return self.weights.shape[0]

    @property
    def size_w(self) -> int:
        return self.weights.shape[1]

    @property
    def pad_h(self) -> int:
        return _pad(self.factor_h)

    @property
    def pad_w(self) -> int:
        return _pad(self.factor_w)


def _profile_size(factor: int) -> int:
    return 2 * factor - (factor % 2)


def _pad(factor: int) -> int:
    # ceil((factor - 1) / 2)
    return factor // 2


def bilinear_profile(factor: int) -> np.ndarray:
    """1-D bilinear weight profile for one axis.

    Weight at index i is 1 - |i/f - c| with the center c placed so that
    strided copies of the profile tile interior positions with sum 1.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    size = _profile_size(factor)
    center = (2 * factor - 1 - (factor % 2)) / (2 * factor)
    idx = np.arange(size, dtype=np.float64)
    return 1.0 - np.abs(idx / factor - center)


def make_bilinear_kernel(factor_h: int, factor_w: int) -> BilinearKernel:
    """Build the separable bilinear kernel for the given per-axis factors."""
    ph = bilinear_profile(factor_h)
    pw = bilinear_profile(factor_w)
    return BilinearKernel(factor_h, factor_w, np.outer(ph, pw))


def deconv2d(inp: Tensor3, kernel: BilinearKernel) -> Tensor3:
    """Depthwise transposed convolution; output is factor x input per axis.

    Stride equals the factor and padding is floor(factor/2) per axis, which
    makes the output size exactly (factor_h * H, factor_w * W). With factor
    (1, 1) this is the identity.
    """
    if kernel.factor_h == 1 and kernel.factor_w == 1:
        return inp
    return Tensor3(_deconv2d_raw(inp.data, kernel))


def _deconv2d_raw(x: np.ndarray, kernel: BilinearKernel) -> np.ndarray:
    c, h, w = x.shape
    fh, fw = kernel.factor_h, kernel.factor_w
    ph, pw = kernel.pad_h, kernel.pad_w
    out = np.zeros((c, h * fh, w * fw), dtype=np.float64)
    kw = kernel.weights
    rows_base = np.arange(h) * fh - ph
    cols_base = np.arange(w) * fw - pw
    for u in range(kernel.size_h):
        rows = rows_base + u
        rsel = (rows >= 0) & (rows < h * fh)
        if not rsel.any():
            continue
        for v in range(kernel.size_w):
            cols = cols_base + v
            csel = (cols >= 0) & (cols < w * fw)
            if not csel.any():
                continue
            out[:, rows[rsel][:, None], cols[csel][None, :]] += kw[u, v] * x[np.ix_(np.arange(c), rsel, csel)]
    return out


def deconv2d_input_grad(output_grad: Tensor3, kernel: BilinearKernel, input_shape: tuple[int, int, int]) -> Tensor3:
    """Gradient of deconv2d with respect to its input (the adjoint map).

    Equals the strided forward correlation of ``output_grad`` with the same
    kernel and padding. ``input_shape`` is the (C, H, W) of the original input.
    """
    c, h, w = input_shape
    fh, fw = kernel.factor_h, kernel.factor_w
    if output_grad.shape != (c, h * fh, w * fw):
        raise ValueError(
            f"output_grad shape {output_grad.shape} does not match "
            f"factor x input_shape {(c, h * fh, w * fw)}"
        )
    if fh == 1 and fw == 1:
        return output_grad
    return Tensor3(_deconv2d_input_grad_raw(output_grad.data, kernel, (c, h, w)))


def _deconv2d_input_grad_raw(g: np.ndarray, kernel: BilinearKernel, input_shape: tuple[int, int, int]) -> np.ndarray:
    c, h, w = input_shape
    fh, fw = kernel.factor_h, kernel.factor_w
    ph, pw = kernel.pad_h, kernel.pad_w
    grad = np.zeros((c, h, w), dtype=np.float64)
    kw = kernel.weights
    rows_base = np.arange(h) * fh - ph
    cols_base = np.arange(w) * fw - pw
    for u in range(kernel.size_h):
        rows = rows_base + u
        rsel = (rows >= 0) & (rows < g.shape[1])
        if not rsel.any():
            continue
        for v in range(kernel.size_w):
            cols = cols_base + v
            csel = (cols >= 0) & (cols < g.shape[2])
            if not csel.any():
                continue
            grad[np.ix_(np.arange(c), rsel, csel)] += kw[u, v] * g[:, rows[rsel][:, None], cols[csel][None, :]]
    return grad


def save_tensor(t: Tensor3, path: str | Path) -> None:
    """Write a tensor in the binary format: magic, u32le dims, f32le data."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", t.channels, t.height, t.width))
        f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_tensor(path: str | Path) -> Tensor3:
    """Read a tensor written by :func:`save_tensor`."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        header = f.read(12)
        if len(header) != 12:
            raise ValueError(f"{path}: truncated header")
        c, h, w = struct.unpack("<III", header)
        if c < 1 or h < 1 or w < 1:
            raise ValueError(f"{path}: invalid dimensions ({c}, {h}, {w})")
        n = c * h * w
        raw = f.read(4 * n)
        if len(raw) != 4 * n:
            raise ValueError(f"{path}: truncated data (expected {n} floats)")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(c, h, w)
    return Tensor3(data)
