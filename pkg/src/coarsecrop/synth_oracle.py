"""Deterministic synthetic scenes with exact instance masks.

A scene is a colored background with a few non-overlapping rectangles or
ellipses; the generator returns the rendered image, the exact union mask,
and tight ground-truth boxes. ``oracle_features`` converts a mask into an
idealized single-channel feature map (per-cell object density), which makes
end-to-end pipeline checks independent of feature quality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anchor_engine import ScoredBox
from .objectness_eval import InstanceMask
from .tensor_core import FeatureMap

__all__ = ["SceneSpec", "generate_scene", "oracle_features", "write_corpus"]

_PLACEMENT_RETRIES = 200

DEFAULT_COLORS = (
    (220, 60, 60), (60, 180, 90), (70, 90, 220), (235, 200, 60),
    (170, 70, 200), (240, 140, 50),
)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene; identical specs render identically."""

    height: int = 256
    width: int = 320
    n_objects: tuple[int, int] = (1, 3)
    shapes: tuple[str, ...] = ("rectangle", "ellipse")
    colors: tuple[tuple[int, int, int], ...] = DEFAULT_COLORS
    background: str = "flat"  # "flat" or "textured"
    bg_color: tuple[int, int, int] = (24, 28, 32)
    size_range: tuple[int, int] = (40, 128)
    seed: int = 0

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("scene must be at least 16x16")
        lo, hi = self.n_objects
        if not (0 <= lo <= hi):
            raise ValueError(f"bad object count range {self.n_objects}")
        if self.background not in ("flat", "textured"):
            raise ValueError(f"background must be 'flat' or 'textured', got {self.background!r}")
        for s in self.shapes:
            if s not in ("rectangle", "ellipse"):
                raise ValueError(f"unknown shape kind {s!r}")
        slo, shi = self.size_range
        if not (4 <= slo <= shi):
            raise ValueError(f"bad size range {self.size_range}")


def _shape_mask(kind: str, x1: int, y1: int, w: int, h: int, H: int, W: int) -> np.ndarray:
    m = np.zeros((H, W), dtype=bool)
    if kind == "rectangle":
        m[y1:y1 + h, x1:x1 + w] = True
    else:
        cy = y1 + h / 2.0
        cx = x1 + w / 2.0
        a = w / 2.0
        b = h / 2.0
        jj, ii = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
        m = ((jj - cx) / a) ** 2 + ((ii - cy) / b) ** 2 <= 1.0
    return m


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, InstanceMask, list[ScoredBox]]:
    """Render a scene: (RGB uint8 image, exact union mask, tight GT boxes).

    Objects are placed fully inside the image without bbox overlap; if a
    placement cannot be found within the retry budget the scene is
    infeasible and an error is raised.
    """
    rng = np.random.default_rng(spec.seed)
    H, W = spec.height, spec.width
    if spec.background == "flat":
        img = np.empty((H, W, 3), dtype=np.uint8)
        img[:] = spec.bg_color
    else:
        noise = rng.integers(-12, 13, size=(H, W, 3))
        img = np.clip(np.asarray(spec.bg_color)[None, None] + noise, 0, 255).astype(np.uint8)

    union = np.zeros((H, W), dtype=bool)
    gt_boxes: list[ScoredBox] = []
    placed: list[tuple[int, int, int, int]] = []
    n = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    slo, shi = spec.size_range
    for _ in range(n):
        for _attempt in range(_PLACEMENT_RETRIES):
            kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
            w = int(rng.integers(slo, min(shi, W - 1) + 1))
            h = int(rng.integers(slo, min(shi, H - 1) + 1))
            x1 = int(rng.integers(0, W - w + 1))
            y1 = int(rng.integers(0, H - h + 1))
            if any(x1 < px2 and px1 < x1 + w and y1 < py2 and py1 < y1 + h
                   for px1, py1, px2, py2 in placed):
                continue
            sm = _shape_mask(kind, x1, y1, w, h, H, W)
            ys, xs = np.nonzero(sm)
            color = spec.colors[int(rng.integers(len(spec.colors)))]
            img[sm] = color
            union |= sm
            gt_boxes.append(ScoredBox(float(xs.min()), float(ys.min()),
                                      float(xs.max() + 1), float(ys.max() + 1)))
            placed.append((x1, y1, x1 + w, y1 + h))
            break
        else:
            raise RuntimeError(f"could not place object {len(placed) + 1} of {n} "
                               f"within {_PLACEMENT_RETRIES} retries")
    return img, InstanceMask(union), gt_boxes


def oracle_features(mask: InstanceMask, stride: int) -> FeatureMap:
    """Idealized d=1 features: each cell's value is its object-pixel density.

    Cell (i, j) covers the stride x stride pixel block at (i*stride,
    j*stride); rows/cols beyond the floor grid are ignored. Channel-summing
    this map reproduces the object density exactly, which isolates the
    anchor pipeline from feature-quality questions.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h = mask.H // stride
    w = mask.W // stride
    if h < 1 or w < 1:
        raise ValueError(f"mask {mask.W}x{mask.H} smaller than stride {stride}")
    trimmed = mask.bitmap[:h * stride, :w * stride].astype(np.float64)
    cells = trimmed.reshape(h, stride, w, stride).mean(axis=(1, 3))
    return FeatureMap(cells[None].astype(np.float32))


def write_corpus(out_dir, count: int, base_seed: int = 0,
                 spec: SceneSpec | None = None, with_features: bool = False,
                 feature_stride: int = 32) -> Path:
    """Emit a complete corpus directory of seeded scenes.

    Layout: ``images/<id>.png``, ``annotations.json`` and, when requested,
    ``features/<id>.ccft`` holding the oracle features. Rectangles are
    annotated with polygon segmentations and ellipses with uncompressed
    RLE, both exact. Returns the annotations path.
    """
    from . import dataset_io, feature_provider

    base = spec or SceneSpec()
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    features_dir = out_dir / "features"
    if with_features:
        features_dir.mkdir(parents=True, exist_ok=True)

    images_json = []
    annotations_json = []
    for k in range(count):
        image_id = k + 1
        scene_spec = SceneSpec(**{**base.__dict__, "seed": base_seed + k})
        img, mask, gt = generate_scene(scene_spec)
        file_name = f"{image_id:06d}.png"
        dataset_io.save_image(img, images_dir / file_name)
        images_json.append({"id": image_id, "file_name": file_name,
                            "height": scene_spec.height, "width": scene_spec.width})
        for b in gt:
            instance_bitmap = _instance_bitmap(mask, b)
            if _is_filled_box(instance_bitmap, b):
                seg = [[b.x1, b.y1, b.x2, b.y1, b.x2, b.y2, b.x1, b.y2]]
            else:
                seg = dataset_io.rle_encode(instance_bitmap)
            annotations_json.append({
                "image_id": image_id,
                "bbox": [b.x1, b.y1, b.width, b.height],
                "segmentation": seg,
            })
        if with_features:
            feats = oracle_features(mask, feature_stride)
            feature_provider.write_feature_file(features_dir / f"{image_id}.ccft", feats)

    annotations_path = out_dir / "annotations.json"
    annotations_path.write_text(json.dumps(
        {"images": images_json, "annotations": annotations_json}, sort_keys=True, indent=2) + "\n")
    return annotations_path


def _instance_bitmap(mask: InstanceMask, box: ScoredBox) -> np.ndarray:
    # Objects never overlap, so the union restricted to the GT box is the instance.
    out = np.zeros_like(mask.bitmap)
    x1, y1, x2, y2 = (int(box.x1), int(box.y1), int(box.x2), int(box.y2))
    out[y1:y2, x1:x2] = mask.bitmap[y1:y2, x1:x2]
    return out


def _is_filled_box(bitmap: np.ndarray, box: ScoredBox) -> bool:
    x1, y1, x2, y2 = (int(box.x1), int(box.y1), int(box.x2), int(box.y2))
    return bool(bitmap[y1:y2, x1:x2].all())
