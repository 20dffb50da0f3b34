"""Anchor lattice generation, anchor scoring, NMS and top-N crop selection.

Anchors follow the detection-style recipe: at every feature cell, one box
per (size, ratio) combination, mapped into image space by the stride. The
default lattice is 12 anchors per cell (sizes 32/64/128/256, aspect ratios
0.5/1.0/2.0). Boxes are scored by the mean of the objectness score map over
their pixels, de-duplicated with greedy NMS, and the best N survivors become
the crops.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .tensor_core import ScoreMap, SummedAreaTable, build_sat

__all__ = [
    "AnchorConfig",
    "ScoredBox",
    "raw_anchors",
    "generate_anchors",
    "score_anchors",
    "nms",
    "select_crops",
]

log = logging.getLogger(__name__)

DEFAULT_SIZES = (32.0, 64.0, 128.0, 256.0)
DEFAULT_RATIOS = (0.5, 1.0, 2.0)

# Clipped anchors with a side thinner than this are dropped: slivers make
# meaningless crops, and 8 px is the smallest side that survives two halvings.
MIN_CLIPPED_SIDE = 8.0


def round_half_away(v: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    if v >= 0.0:
        return int(math.floor(v + 0.5))
    return -int(math.floor(-v + 0.5))


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor lattice and selection parameters.

    ``sizes`` are box side lengths in pixels for aspect ratio 1; a box of
    size s and ratio r (height/width) spans s*sqrt(r) x s/sqrt(r), keeping
    area s^2. ``stride`` is the image-pixels-per-feature-cell ratio.
    """

    sizes: tuple[float, ...] = DEFAULT_SIZES
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    stride: int = 32
    nms_iou: float = 0.5
    top_n: int = 5

    def __post_init__(self):
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ValueError("sizes must be non-empty and positive")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be non-empty and positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not (0.0 < self.nms_iou <= 1.0):
            raise ValueError("nms_iou must lie in (0, 1]")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        object.__setattr__(self, "sizes", tuple(float(s) for s in self.sizes))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))

    @property
    def per_cell(self) -> int:
        return len(self.sizes) * len(self.ratios)

    def config_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "ratios": list(self.ratios),
            "stride": self.stride,
            "nms_iou": self.nms_iou,
            "top_n": self.top_n,
        }


@dataclass(frozen=True)
class ScoredBox:
    """An axis-aligned box in pixel space, coordinates inclusive-exclusive.

    Coordinates are real-valued; they are rounded to integers only when a
    pixel rectangle is needed (scoring, objectness, crop extraction).
    ``score`` is the box's mean objectness in [0, 1]; 0 when not yet scored.
    """

    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 0.0

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box ({self.x1},{self.y1},{self.x2},{self.y2})")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def iou(self, other: "ScoredBox") -> float:
        iw = min(self.x2, other.x2) - max(self.x1, other.x1)
        ih = min(self.y2, other.y2) - max(self.y1, other.y1)
        if iw <= 0.0 or ih <= 0.0:
            return 0.0
        inter = iw * ih
        return inter / (self.area + other.area - inter)

    def pixel_bounds(self) -> tuple[int, int, int, int]:
        """Integer pixel rectangle (x1, y1, x2, y2), half-away-from-zero rounding."""
        return (
            round_half_away(self.x1),
            round_half_away(self.y1),
            round_half_away(self.x2),
            round_half_away(self.y2),
        )

    def coords(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def raw_anchors(H: int, W: int, cfg: AnchorConfig) -> list[ScoredBox]:
    """The full unclipped lattice for an H x W image.

    With h = floor(H/stride) and w = floor(W/stride) there are exactly
    |sizes| * |ratios| * h * w anchors, one group per feature cell, each
    centered on its cell's image-space center ((j+0.5)*s, (i+0.5)*s).
    Anchors may extend beyond the image; see ``generate_anchors``.
    """
    if H < cfg.stride or W < cfg.stride:
        raise ValueError(f"image {W}x{H} smaller than stride {cfg.stride}")
    h = H // cfg.stride
    w = W // cfg.stride
    halves = [(s / math.sqrt(r) / 2.0, s * math.sqrt(r) / 2.0)
              for s in cfg.sizes for r in cfg.ratios]
    boxes: list[ScoredBox] = []
    for i in range(h):
        cy = (i + 0.5) * cfg.stride
        for j in range(w):
            cx = (j + 0.5) * cfg.stride
            for hw, hh in halves:
                boxes.append(ScoredBox(cx - hw, cy - hh, cx + hw, cy + hh))
    return boxes


def generate_anchors(H: int, W: int, cfg: AnchorConfig) -> list[ScoredBox]:
    """Generate the anchor lattice, clipped to the image and de-slivered.

    Anchors are clipped to the image bounds rather than discarded (objects
    touching the border stay reachable); clipped anchors with width or
    height below ``MIN_CLIPPED_SIDE`` are dropped. Pre-clip and post-filter
    counts are reported on the debug log.
    """
    raw = raw_anchors(H, W, cfg)
    kept: list[ScoredBox] = []
    for b in raw:
        x1 = max(b.x1, 0.0)
        y1 = max(b.y1, 0.0)
        x2 = min(b.x2, float(W))
        y2 = min(b.y2, float(H))
        if x2 - x1 < MIN_CLIPPED_SIDE or y2 - y1 < MIN_CLIPPED_SIDE:
            continue
        kept.append(ScoredBox(x1, y1, x2, y2))
    log.debug("anchors for %dx%d image: %d pre-clip, %d after clip/filter",
              W, H, len(raw), len(kept))
    return kept


def score_anchors(boxes: list[ScoredBox], sat: SummedAreaTable) -> list[ScoredBox]:
    """Score each box with the mean score-map value over its pixels.

    The mean is the SAT rectangle sum divided by the pixel count of the
    rounded box, identical to a naive per-pixel average. Boxes must lie
    within the map; boxes that round to zero area are an error.
    """
    if not boxes:
        return []
    W, H = sat.W, sat.H
    eps = 1e-9
    bounds = np.empty((len(boxes), 4), dtype=np.intp)
    for k, b in enumerate(boxes):
        if b.x1 < -eps or b.y1 < -eps or b.x2 > W + eps or b.y2 > H + eps:
            raise ValueError(f"box {b.coords()} outside {W}x{H} score map")
        ix1, iy1, ix2, iy2 = b.pixel_bounds()
        ix1, iy1 = max(ix1, 0), max(iy1, 0)
        ix2, iy2 = min(ix2, W), min(iy2, H)
        if ix2 <= ix1 or iy2 <= iy1:
            raise ValueError(f"box {b.coords()} rounds to zero pixel area")
        bounds[k] = (ix1, iy1, ix2, iy2)
    sums = sat.box_sums(bounds[:, 0], bounds[:, 1], bounds[:, 2], bounds[:, 3])
    areas = (bounds[:, 2] - bounds[:, 0]) * (bounds[:, 3] - bounds[:, 1])
    # Clip: SAT differences can land an ulp outside [0, 1] on saturated maps.
    scores = np.clip(sums / areas, 0.0, 1.0)
    return [replace(b, score=float(s)) for b, s in zip(boxes, scores)]


def _ranked_order(boxes: list[ScoredBox]) -> list[int]:
    # Total order for reproducibility: score desc, area desc, then x1, y1 asc.
    return sorted(range(len(boxes)),
                  key=lambda k: (-boxes[k].score, -boxes[k].area, boxes[k].x1, boxes[k].y1))


def nms(boxes: list[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    """Greedy non-maximum suppression.

    Boxes are visited in ranked order (score desc with deterministic
    tie-breaks); each kept box suppresses every remaining box whose IoU with
    it exceeds the threshold. The result is a subset of the input, sorted by
    descending score, with pairwise IoU <= threshold.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError("iou_threshold must lie in (0, 1]")
    if not boxes:
        return []
    order = _ranked_order(boxes)
    arr = np.array([boxes[k].coords() for k in order], dtype=np.float64)
    areas = (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])
    live = np.arange(len(order))
    kept: list[int] = []
    while live.size:
        i = live[0]
        kept.append(i)
        rest = live[1:]
        if rest.size == 0:
            break
        iw = np.minimum(arr[i, 2], arr[rest, 2]) - np.maximum(arr[i, 0], arr[rest, 0])
        ih = np.minimum(arr[i, 3], arr[rest, 3]) - np.maximum(arr[i, 1], arr[rest, 1])
        inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
        iou = inter / (areas[i] + areas[rest] - inter)
        live = rest[iou <= iou_threshold]
    return [boxes[order[i]] for i in kept]


def select_crops(score_map: ScoreMap, cfg: AnchorConfig) -> list[ScoredBox]:
    """Full anchor pipeline: generate, score, NMS, take the top N.

    Returns min(top_n, survivors) boxes, deterministically: identical
    inputs always yield identical output.
    """
    anchors = generate_anchors(score_map.H, score_map.W, cfg)
    scored = score_anchors(anchors, build_sat(score_map))
    survivors = nms(scored, cfg.nms_iou)
    return survivors[: cfg.top_n]
