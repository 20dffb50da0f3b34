"""The cropping strategies compared by the toolkit, behind one interface.

Six ways to turn a scene image into pseudo object-centric crops:

* image  - the whole image as the single crop
* grid   - fixed 2-row tiling, 3 cells on top and 2 below
* gt     - ground-truth boxes verbatim
* gtpad  - ground-truth boxes padded outward by a ratio, clipped
* poor   - random boxes rejection-sampled into a low objectness band
* our    - anchor pipeline crops driven by the objectness score map

Each strategy is a pure per-image function returning a CropSet; stochastic
ones are fully determined by their seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .anchor_engine import AnchorConfig, ScoredBox, select_crops
from .objectness_eval import InstanceMask, crop_objectness
from .tensor_core import ScoreMap

__all__ = [
    "StrategyKind",
    "StrategySpec",
    "CropSet",
    "image_crop",
    "grid_crop",
    "gt_crop",
    "gtpad_crop",
    "poor_crop",
    "our_crop",
    "POOR_DRAW_BUDGET",
]

DEFAULT_PAD_RATIO = 0.3
DEFAULT_POOR_BAND = (0.15, 0.25)
POOR_DRAW_BUDGET = 10_000
_POOR_MIN_SIDE = 32


class StrategyKind(str, Enum):
    IMAGE = "image"
    GRID = "grid"
    GT = "gt"
    GTPAD = "gtpad"
    POOR = "poor"
    OUR = "our"


@dataclass(frozen=True)
class StrategySpec:
    """A strategy choice plus every parameter that influences its output."""

    kind: StrategyKind
    pad_ratio: float = DEFAULT_PAD_RATIO
    poor_band: tuple[float, float] = DEFAULT_POOR_BAND
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    seed: int = 0

    def __post_init__(self):
        if self.pad_ratio < 0.0:
            raise ValueError("pad_ratio must be >= 0")
        lo, hi = self.poor_band
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError(f"poor band [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")

    def config_dict(self) -> dict:
        """The parameters that matter for this kind, for manifests/hashing."""
        d: dict = {"kind": self.kind.value}
        if self.kind is StrategyKind.GTPAD:
            d["pad_ratio"] = self.pad_ratio
        elif self.kind is StrategyKind.POOR:
            d["poor_band"] = list(self.poor_band)
            d["seed"] = self.seed
            d["n"] = self.anchors.top_n
        elif self.kind is StrategyKind.OUR:
            d["anchors"] = self.anchors.config_dict()
        return d


@dataclass(frozen=True)
class CropSet:
    """All crops emitted for one image, with any per-image warnings."""

    image_id: int
    strategy: StrategySpec
    boxes: tuple[ScoredBox, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "warnings", tuple(self.warnings))


def image_crop(image_id: int, H: int, W: int) -> CropSet:
    """The entire image as the only crop."""
    spec = StrategySpec(StrategyKind.IMAGE)
    return CropSet(image_id, spec, (ScoredBox(0.0, 0.0, float(W), float(H)),))


def grid_crop(image_id: int, H: int, W: int) -> CropSet:
    """Five tiles: two rows, the top split in 3 and the bottom in 2.

    Cells are equal-sized up to integer division; remainder pixels go to the
    last cell of each row (and the bottom row takes the odd height row), so
    the five boxes always partition the image exactly.
    """
    if H < 2 or W < 6:
        raise ValueError(f"image {W}x{H} too small for the 3+2 grid (needs W >= 6, H >= 2)")
    spec = StrategySpec(StrategyKind.GRID)
    top = H // 2
    w3 = W // 3
    w2 = W // 2
    boxes = (
        ScoredBox(0.0, 0.0, float(w3), float(top)),
        ScoredBox(float(w3), 0.0, float(2 * w3), float(top)),
        ScoredBox(float(2 * w3), 0.0, float(W), float(top)),
        ScoredBox(0.0, float(top), float(w2), float(H)),
        ScoredBox(float(w2), float(top), float(W), float(H)),
    )
    return CropSet(image_id, spec, boxes)


def gt_crop(image_id: int, annotations: Sequence[ScoredBox]) -> CropSet:
    """Ground-truth boxes become the crops, order preserved."""
    spec = StrategySpec(StrategyKind.GT)
    warnings = () if annotations else ("no ground-truth boxes for this image",)
    return CropSet(image_id, spec, tuple(annotations), warnings)


def gtpad_crop(image_id: int, annotations: Sequence[ScoredBox], H: int, W: int,
               pad_ratio: float = DEFAULT_PAD_RATIO) -> CropSet:
    """Ground-truth boxes grown by pad_ratio per side, clipped to the image."""
    spec = StrategySpec(StrategyKind.GTPAD, pad_ratio=pad_ratio)
    boxes = []
    for b in annotations:
        px = pad_ratio * b.width
        py = pad_ratio * b.height
        boxes.append(ScoredBox(
            max(b.x1 - px, 0.0),
            max(b.y1 - py, 0.0),
            min(b.x2 + px, float(W)),
            min(b.y2 + py, float(H)),
        ))
    warnings = () if boxes else ("no ground-truth boxes for this image",)
    return CropSet(image_id, spec, tuple(boxes), warnings)


def poor_crop(image_id: int, mask: InstanceMask, band: tuple[float, float] = DEFAULT_POOR_BAND,
              n: int = 5, seed: int = 0) -> CropSet:
    """Random boxes rejection-sampled into a target objectness band.

    Draws axis-aligned boxes with integer side lengths uniform in
    [32, min(H, W)] and uniform positions until n boxes land inside
    [lo, hi], or the draw budget runs out (partial set plus a warning).
    Fully determined by the seed.
    """
    lo, hi = band
    spec = StrategySpec(StrategyKind.POOR, poor_band=(lo, hi), seed=seed,
                        anchors=AnchorConfig(top_n=n))
    H, W = mask.H, mask.W
    m = min(H, W)
    if m < _POOR_MIN_SIDE:
        raise ValueError(f"image {W}x{H} too small to draw {_POOR_MIN_SIDE} px boxes")
    rng = np.random.default_rng(seed)
    boxes: list[ScoredBox] = []
    draws = 0
    while len(boxes) < n and draws < POOR_DRAW_BUDGET:
        draws += 1
        bw = int(rng.integers(_POOR_MIN_SIDE, m + 1))
        bh = int(rng.integers(_POOR_MIN_SIDE, m + 1))
        x1 = int(rng.integers(0, W - bw + 1))
        y1 = int(rng.integers(0, H - bh + 1))
        box = ScoredBox(float(x1), float(y1), float(x1 + bw), float(y1 + bh))
        if lo <= crop_objectness(box, mask) <= hi:
            boxes.append(box)
    warnings = ()
    if len(boxes) < n:
        warnings = (f"poor-crop draw budget exhausted: {len(boxes)}/{n} boxes "
                    f"after {POOR_DRAW_BUDGET} draws",)
    return CropSet(image_id, spec, tuple(boxes), warnings)


def our_crop(image_id: int, score_map: ScoreMap, cfg: AnchorConfig | None = None) -> CropSet:
    """Anchor-pipeline crops for one image's objectness score map."""
    cfg = cfg or AnchorConfig()
    spec = StrategySpec(StrategyKind.OUR, anchors=cfg)
    return CropSet(image_id, spec, tuple(select_crops(score_map, cfg)))
