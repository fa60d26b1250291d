"""Synthetic feature-map scenes and the structure-preservation score.

Scenes stand in for natural images: oriented gradient and checkerboard
patches are planted at widely varying sizes on a noisy background, so the
two pooling paths can be compared on how faithfully each preserves a
patch's spatial structure after reduction to P x P. Fidelity is measured
as zero-mean normalized cross-correlation against the patch resampled to
P x P by exact bilinear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, UndefinedScoreError
from .geometry import Roi
from .pooling import PooledFeature
from .tensor import Tensor3

_PATTERN_KINDS = 4
_PLACEMENT_RETRIES = 500
_BACKGROUND_AMPLITUDE = 0.1
_JITTER_AMPLITUDE = 0.01


@dataclass(frozen=True)
class SyntheticScene:
    """A generated feature map with the boxes and ids of its planted patterns."""

    feature_map: Tensor3
    planted: tuple[tuple[Roi, int], ...]
    seed: int
    stride: int = 1


def scale_ladder(lo: int, hi: int) -> list[int]:
    """Geometric size ladder from lo to hi at roughly sqrt(2) steps."""
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid scale range ({lo}, {hi})")
    ladder = [lo]
    value = float(lo)
    while ladder[-1] < hi:
        value *= np.sqrt(2.0)
        ladder.append(min(max(int(round(value)), ladder[-1] + 1), hi))
    return ladder


def render_pattern(pattern_id: int, seed: int, height: int, width: int) -> np.ndarray:
    """Deterministic (height, width) pattern pixels for (pattern id, seed).

    Patterns mimic an object centred in its proposal: an oriented ridge
    with an intensity gradient along it, a plain oriented ridge, a blob,
    or a coarse checkerboard, all attenuated toward the box border.
    Orientation, contrast, offset, and a small pixel jitter come from the
    seeded generator. Values are float32-exact so planted scenes survive
    the binary tensor format bit-for-bit.
    """
    if height < 1 or width < 1:
        raise ValueError(f"pattern dims must be >= 1, got ({height}, {width})")
    rng = np.random.default_rng([seed & 0xFFFFFFFF, pattern_id])
    # Normalized coordinates in [-1, 1], rotated by a quantized orientation.
    r = (np.arange(height) - (height - 1) / 2.0) / max((height - 1) / 2.0, 1.0)
    c = (np.arange(width) - (width - 1) / 2.0) / max((width - 1) / 2.0, 1.0)
    rr, cc = np.meshgrid(r, c, indexing="ij")
    theta = rng.integers(0, 4) * (np.pi / 4.0)
    along = np.cos(theta) * cc + np.sin(theta) * rr
    across = -np.sin(theta) * cc + np.cos(theta) * rr
    window = np.exp(-(rr * rr + cc * cc) / (2.0 * 0.8 * 0.8))
    kind = pattern_id % _PATTERN_KINDS
    if kind == 0:
        # Oriented ridge whose intensity ramps along its length.
        base = np.exp(-((along / 0.35) ** 2)) * (0.55 + 0.45 * np.clip(across, -1.0, 1.0)) * window
    elif kind == 1:
        base = np.exp(-(along * along) * 8.0) * window
    elif kind == 2:
        cy, cx = rng.uniform(-0.15, 0.15, size=2)
        sigma = rng.uniform(0.25, 0.35)
        base = np.exp(-(((rr - cy) ** 2 + (cc - cx) ** 2) / (2.0 * sigma * sigma)))
    else:
        # Coarse checkerboard, phased so the central block is the bright one.
        cell = max(2, int(round(min(height, width) / 3.0)))
        rows_i = np.arange(height)[:, None]
        cols_i = np.arange(width)[None, :]
        phase = 1 - (((height // 2) // cell + (width // 2) // cell) % 2)
        base = ((rows_i // cell + cols_i // cell + phase) % 2).astype(np.float64) * window
    contrast = rng.uniform(0.7, 1.0)
    offset = rng.uniform(0.1, 0.2)
    jitter = rng.uniform(-_JITTER_AMPLITUDE, _JITTER_AMPLITUDE, size=(height, width))
    pixels = offset + contrast * base + jitter
    return pixels.astype(np.float32).astype(np.float64)


def gen_scene(
    seed: int,
    n_patterns: int,
    scale_range: tuple[int, int],
    *,
    channels: int = 1,
    height: int = 160,
    width: int = 160,
    stride: int = 1,
) -> SyntheticScene:
    """Plant ``n_patterns`` non-overlapping patterns on a noisy feature map.

    Pattern sizes are drawn from a sqrt(2) geometric ladder over
    ``scale_range`` (cells) with occasional 2:1 elongation; with two or
    more patterns the first is forced to the minimum size and the second
    to the maximum, so every scene spans the full range. Placement retries
    a bounded number of times and raises :class:`GenerationError` when the
    map cannot fit the request.
    """
    lo, hi = scale_range
    if not (1 <= lo <= hi):
        raise ValueError(f"invalid scale_range {scale_range}")
    if hi > min(height, width):
        raise ValueError(f"scale_range {scale_range} exceeds map dims ({height}, {width})")
    if n_patterns < 0:
        raise ValueError(f"n_patterns must be >= 0, got {n_patterns}")
    rng = np.random.default_rng(seed)
    fm = rng.uniform(0.0, _BACKGROUND_AMPLITUDE, size=(channels, height, width))

    ladder = scale_ladder(lo, hi)
    sizes: dict[int, tuple[int, int]] = {}
    for pid in range(n_patterns):
        if pid == 0:
            h = w = lo
        elif pid == 1:
            h = w = hi
        else:
            s = int(ladder[rng.integers(0, len(ladder))])
            # Mostly square objects, occasionally elongated 2:1 either way.
            aspect = rng.choice([1.0, 2.0, 0.5], p=[0.7, 0.15, 0.15])
            h = min(max(s, lo), hi)
            w = min(max(int(round(s * aspect)), lo), hi)
        sizes[pid] = (h, w)

    occupied: list[tuple[int, int, int, int]] = []
    planted: list[tuple[Roi, int]] = []
    # Largest first: packing order, not pattern identity.
    for pid in sorted(sizes, key=lambda p: (-sizes[p][0] * sizes[p][1], p)):
        h, w = sizes[pid]
        placed = False
        for _ in range(_PLACEMENT_RETRIES):
            r0 = int(rng.integers(0, height - h + 1))
            c0 = int(rng.integers(0, width - w + 1))
            overlaps = any(
                r0 < er1 and er0 < r0 + h and c0 < ec1 and ec0 < c0 + w
                for (er0, er1, ec0, ec1) in occupied
            )
            if overlaps:
                continue
            occupied.append((r0, r0 + h, c0, c0 + w))
            fm[:, r0:r0 + h, c0:c0 + w] = render_pattern(pid, seed, h, w)[None, :, :]
            planted.append(
                (
                    Roi(
                        x1=float(c0 * stride),
                        y1=float(r0 * stride),
                        x2=float((c0 + w) * stride),
                        y2=float((r0 + h) * stride),
                    ),
                    pid,
                )
            )
            placed = True
            break
        if not placed:
            raise GenerationError(
                f"could not place pattern {pid} ({h}x{w}) after {_PLACEMENT_RETRIES} tries"
            )
    planted.sort(key=lambda item: item[1])
    fm = fm.astype(np.float32).astype(np.float64)
    return SyntheticScene(
        feature_map=Tensor3(fm), planted=tuple(planted), seed=seed, stride=stride
    )


def resample_bilinear(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2-D array to (out_h, out_w) by exact bilinear interpolation.

    Endpoints map to endpoints; a singleton output axis samples the input
    axis center.
    """
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.array([(h - 1) / 2.0])
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.array([(w - 1) / 2.0])
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = plane[np.ix_(y0, x0)] * (1 - fx) + plane[np.ix_(y0, x1)] * fx
    bot = plane[np.ix_(y1, x0)] * (1 - fx) + plane[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def pattern_reference(pattern_id: int, seed: int, height: int, width: int,
                      pooled_size: int, channels: int = 1) -> Tensor3:
    """The planted pattern resampled to P x P, replicated across channels."""
    ref = resample_bilinear(render_pattern(pattern_id, seed, height, width),
                            pooled_size, pooled_size)
    return Tensor3(np.broadcast_to(ref, (channels, pooled_size, pooled_size)))


def structure_score(pooled: PooledFeature, reference: Tensor3) -> float:
    """Zero-mean normalized cross-correlation, averaged over channels.

    Ranges over [-1, 1]; a constant pooled or reference channel has no
    defined correlation and raises :class:`UndefinedScoreError`.
    """
    a = pooled.tensor.data
    b = reference.data
    if a.shape != b.shape:
        raise ValueError(f"pooled shape {a.shape} does not match reference shape {b.shape}")
    scores = []
    for ch in range(a.shape[0]):
        da = a[ch] - a[ch].mean()
        db = b[ch] - b[ch].mean()
        denom = np.sqrt((da * da).sum() * (db * db).sum())
        if denom == 0.0:
            raise UndefinedScoreError(f"zero-variance input on channel {ch}")
        scores.append(float((da * db).sum() / denom))
    return float(np.mean(scores))
