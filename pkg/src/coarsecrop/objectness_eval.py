"""Mask-based objectness of crops and strategy-level aggregation.

Objectness of a box is the fraction of its pixels covered by any
ground-truth object instance. Boxes fall into three bands: poor (< 20%),
precise (> 80%) and coarse (everything between, boundaries included).
Ground-truth masks are used here for measurement only, never for cropping.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .anchor_engine import ScoredBox

__all__ = [
    "InstanceMask",
    "CropCategory",
    "ObjectnessReport",
    "ReportRow",
    "crop_objectness",
    "categorize",
    "strategy_report",
    "POOR_BELOW",
    "PRECISE_ABOVE",
]

POOR_BELOW = 0.20
PRECISE_ABOVE = 0.80


class CropCategory(str, Enum):
    POOR = "poor"
    COARSE = "coarse"
    PRECISE = "precise"


@dataclass(frozen=True)
class InstanceMask:
    """H x W boolean bitmap; true marks a pixel of any object instance."""

    bitmap: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bitmap)
        if b.dtype != np.bool_:
            raise ValueError(f"mask bitmap must be boolean, got dtype {b.dtype}")
        if b.ndim != 2 or min(b.shape) < 1:
            raise ValueError(f"mask must be 2-D and non-empty, got shape {b.shape}")
        b = np.ascontiguousarray(b)
        b.setflags(write=False)
        object.__setattr__(self, "bitmap", b)

    @property
    def H(self) -> int:
        return self.bitmap.shape[0]

    @property
    def W(self) -> int:
        return self.bitmap.shape[1]

    @property
    def total(self) -> int:
        return int(self.bitmap.sum())

    @cached_property
    def _sat(self) -> np.ndarray:
        # Integer summed-area table: pixel counts stay exact.
        t = np.zeros((self.H + 1, self.W + 1), dtype=np.int64)
        np.cumsum(np.cumsum(self.bitmap, axis=0, dtype=np.int64), axis=1, out=t[1:, 1:])
        return t

    def box_count(self, x1: int, y1: int, x2: int, y2: int) -> int:
        """Number of object pixels in the rectangle [y1, y2) x [x1, x2)."""
        if not (0 <= x1 < x2 <= self.W and 0 <= y1 < y2 <= self.H):
            raise ValueError(f"box ({x1},{y1},{x2},{y2}) outside {self.W}x{self.H} mask")
        t = self._sat
        return int(t[y2, x2] - t[y1, x2] - t[y2, x1] + t[y1, x1])


def crop_objectness(box: ScoredBox, mask: InstanceMask) -> float:
    """Fraction of object pixels inside the box's pixel rectangle."""
    eps = 1e-9
    if box.x1 < -eps or box.y1 < -eps or box.x2 > mask.W + eps or box.y2 > mask.H + eps:
        raise ValueError(f"box {box.coords()} outside {mask.W}x{mask.H} mask")
    ix1, iy1, ix2, iy2 = box.pixel_bounds()
    ix1, iy1 = max(ix1, 0), max(iy1, 0)
    ix2, iy2 = min(ix2, mask.W), min(iy2, mask.H)
    if ix2 <= ix1 or iy2 <= iy1:
        raise ValueError(f"box {box.coords()} rounds to zero pixel area")
    area = (ix2 - ix1) * (iy2 - iy1)
    return mask.box_count(ix1, iy1, ix2, iy2) / area


def categorize(o: float) -> CropCategory:
    """Band an objectness value: poor below 20%, precise above 80%.

    The boundaries themselves (exactly 0.20 or 0.80) are coarse.
    """
    if not (0.0 <= o <= 1.0):
        raise ValueError(f"objectness {o} outside [0, 1]")
    if o < POOR_BELOW:
        return CropCategory.POOR
    if o > PRECISE_ABOVE:
        return CropCategory.PRECISE
    return CropCategory.COARSE


@dataclass(frozen=True)
class ReportRow:
    image_id: int
    strategy: str
    box: tuple[float, float, float, float]
    objectness: float
    category: CropCategory


@dataclass(frozen=True)
class ObjectnessReport:
    """Per-crop objectness rows plus strategy-level aggregates."""

    strategy: str
    rows: tuple[ReportRow, ...]

    @property
    def values(self) -> list[float]:
        return [r.objectness for r in self.rows]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def counts(self) -> dict[CropCategory, int]:
        c = {cat: 0 for cat in CropCategory}
        for r in self.rows:
            c[r.category] += 1
        return c

    @property
    def fractions(self) -> dict[CropCategory, float]:
        n = len(self.rows)
        return {cat: cnt / n for cat, cnt in self.counts.items()}


def strategy_report(crop_sets: Sequence, masks: Mapping[int, InstanceMask]) -> ObjectnessReport:
    """Aggregate the objectness of every crop of one strategy over a corpus.

    ``crop_sets`` must all come from the same strategy and every image must
    have a mask. Rows are ordered by image id, then box rank, so the reduce
    is deterministic.
    """
    sets = sorted(crop_sets, key=lambda cs: cs.image_id)
    if not sets:
        raise ValueError("no crop sets to evaluate")
    kinds = {cs.strategy.kind for cs in sets}
    if len(kinds) != 1:
        raise ValueError(f"mixed strategies in one report: {sorted(k.value for k in kinds)}")
    strategy = sets[0].strategy.kind.value
    rows: list[ReportRow] = []
    for cs in sets:
        if cs.image_id not in masks:
            raise ValueError(f"no mask for image {cs.image_id}")
        mask = masks[cs.image_id]
        for b in cs.boxes:
            o = crop_objectness(b, mask)
            rows.append(ReportRow(cs.image_id, strategy, b.coords(), o, categorize(o)))
    if not rows:
        raise ValueError("crop sets contain no crops to evaluate")
    return ObjectnessReport(strategy, tuple(rows))
