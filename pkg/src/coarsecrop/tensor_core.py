"""Dense numeric primitives behind the objectness score-map pipeline.

Feature tensors are summed over channels into a raw score map, linearly
normalized into [0, 1], and bilinearly upsampled to image resolution.
A summed-area table turns the final map into O(1) rectangle sums so that
thousands of candidate boxes can be scored per image.

All containers are immutable after construction and every operation is a
pure function, so they are safe to share across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeatureMap",
    "RawScoreMap",
    "ScoreMap",
    "SummedAreaTable",
    "channel_sum",
    "minmax_normalize",
    "bilinear_upsample",
    "build_sat",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureMap:
    """A d x h x w convolutional feature tensor, stored in float32.

    Layout is channel-major: ``values[c]`` is the h x w plane of channel c.
    All values must be finite; every spatial/channel dim must be >= 1.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"feature tensor must be d x h x w, got shape {v.shape}")
        if min(v.shape) < 1:
            raise ValueError(f"feature dims must all be >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature tensor contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]

    @property
    def w(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class RawScoreMap:
    """An h x w per-cell score map, before normalization and upsampling.

    Held in float64: it is small (feature-map resolution) and keeps the
    normalize/upsample chain free of single-precision rounding surprises.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or min(v.shape) < 1:
            raise ValueError(f"score map must be 2-D and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("score map contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ScoreMap:
    """The final H x W objectness map at image resolution, values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or min(v.shape) < 1:
            raise ValueError(f"score map must be 2-D and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("score map contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("score map values must lie in [0, 1]; normalize first")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def H(self) -> int:
        return self.values.shape[0]

    @property
    def W(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SummedAreaTable:
    """(H+1) x (W+1) cumulative sums in float64, with a zero border.

    ``table[i, j]`` is the sum of the source map over rows < i and cols < j,
    so any axis-aligned rectangle sum costs four lookups.
    """

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] < 2 or t.shape[1] < 2:
            raise ValueError(f"summed-area table must be (H+1) x (W+1), got {t.shape}")
        if np.any(t[0, :] != 0.0) or np.any(t[:, 0] != 0.0):
            raise ValueError("summed-area table must carry a zero border row/column")
        object.__setattr__(self, "table", _frozen(t))

    @property
    def H(self) -> int:
        return self.table.shape[0] - 1

    @property
    def W(self) -> int:
        return self.table.shape[1] - 1

    def box_sum(self, x1: int, y1: int, x2: int, y2: int) -> float:
        """Sum of the source map over pixels [y1, y2) x [x1, x2)."""
        if not (0 <= x1 < x2 <= self.W and 0 <= y1 < y2 <= self.H):
            raise ValueError(f"box ({x1},{y1},{x2},{y2}) outside {self.W}x{self.H} map")
        t = self.table
        return float(t[y2, x2] - t[y1, x2] - t[y2, x1] + t[y1, x1])

    def box_sums(self, x1: np.ndarray, y1: np.ndarray, x2: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """Vectorized ``box_sum`` over parallel integer coordinate arrays."""
        x1 = np.asarray(x1, dtype=np.intp)
        y1 = np.asarray(y1, dtype=np.intp)
        x2 = np.asarray(x2, dtype=np.intp)
        y2 = np.asarray(y2, dtype=np.intp)
        if (np.any(x1 < 0) or np.any(y1 < 0) or np.any(x2 > self.W) or np.any(y2 > self.H)
                or np.any(x1 >= x2) or np.any(y1 >= y2)):
            raise ValueError("box coordinates outside the map or degenerate")
        t = self.table
        return t[y2, x2] - t[y1, x2] - t[y2, x1] + t[y1, x1]


def channel_sum(f: FeatureMap) -> RawScoreMap:
    """Sum a feature tensor over its channel dimension.

    Accumulates in float64: channel counts in the thousands would lose
    digits under naive single-precision accumulation.
    """
    return RawScoreMap(f.values.sum(axis=0, dtype=np.float64))


def minmax_normalize(a: RawScoreMap) -> RawScoreMap:
    """Linearly rescale a map to [0, 1] as (a - min) / (max - min).

    A constant map carries no contrast, hence no objectness evidence: it
    normalizes to all zeros rather than dividing by zero. For non-constant
    maps the transform is strictly increasing, so the pixel ordering (and in
    particular the argmax set) is preserved.
    """
    v = a.values
    lo = float(v.min())
    hi = float(v.max())
    if hi == lo:
        return RawScoreMap(np.zeros_like(v))
    return RawScoreMap((v - lo) / (hi - lo))


def _sample_axis(out_size: int, in_size: int):
    # Half-pixel-center source coordinates, clamped to the valid range.
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def bilinear_upsample(a: RawScoreMap, H: int, W: int) -> ScoreMap:
    """Upsample a normalized score map to H x W by bilinear interpolation.

    Output pixel (i, j) samples the source at
    ``((i + 0.5) * h / H - 0.5, (j + 0.5) * w / W - 0.5)``, clamped to the
    valid range (half-pixel-center convention; identity at scale 1). The
    interpolation is computed in lerp form, so outputs never overshoot the
    input range.

    The input must already be normalized to [0, 1] and H >= h, W >= w.
    """
    if H < a.h or W < a.w:
        raise ValueError(f"target {W}x{H} smaller than source {a.w}x{a.h}: upsampling only")
    v = a.values
    if v.min() < 0.0 or v.max() > 1.0:
        raise ValueError("upsample input must be normalized to [0, 1] first")
    r0, r1, dr = _sample_axis(H, a.h)
    c0, c1, dc = _sample_axis(W, a.w)
    v00 = v[np.ix_(r0, c0)]
    v01 = v[np.ix_(r0, c1)]
    v10 = v[np.ix_(r1, c0)]
    v11 = v[np.ix_(r1, c1)]
    top = v00 + dc[None, :] * (v01 - v00)
    bottom = v10 + dc[None, :] * (v11 - v10)
    return ScoreMap(top + dr[:, None] * (bottom - top))


def build_sat(s: ScoreMap) -> SummedAreaTable:
    """Build the summed-area table of a score map."""
    t = np.zeros((s.H + 1, s.W + 1), dtype=np.float64)
    np.cumsum(np.cumsum(s.values, axis=0, dtype=np.float64), axis=1, out=t[1:, 1:])
    return SummedAreaTable(t)
