"""Image and annotation ingestion, crop extraction, manifests and overlays.

Annotation input is a documented JSON subset of the usual detection format::

    {
      "images":      [{"id": int, "file_name": str, "height": int, "width": int}, ...],
      "annotations": [{"image_id": int, "bbox": [x, y, w, h],
                       "segmentation": [[x0, y0, x1, y1, ...], ...]     # polygons, or
                                       {"size": [H, W], "counts": [...]} # uncompressed RLE
                      }, ...]
    }

``segmentation`` may be omitted, in which case the instance's bbox is taken
as its mask. Polygon fill uses the even-odd rule on pixel centers; RLE
counts are column-major, starting with the background run. Compressed
(string-counts) RLE is not supported.

Crop manifests are canonical JSON: sorted keys, images ordered by id, crops
in rank order, so identical runs produce byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from . import __version__
from .anchor_engine import ScoredBox
from .objectness_eval import CropCategory, InstanceMask, ObjectnessReport

__all__ = [
    "AnnotationError",
    "Instance",
    "ImageRecord",
    "CocoSubsetAnnotations",
    "parse_annotations",
    "rasterize_polygon",
    "rle_encode",
    "rle_decode",
    "DegenerateCropError",
    "extract_crop",
    "load_image",
    "save_image",
    "emit_overlay",
    "ManifestVersionError",
    "CropRecord",
    "ImageEntry",
    "CropManifest",
    "config_hash",
    "write_manifest",
    "read_manifest",
    "write_report_csv",
    "write_report_json",
    "format_summary",
]

log = logging.getLogger(__name__)

MANIFEST_FORMAT_VERSION = 1


class AnnotationError(ValueError):
    """Annotation JSON failed validation; the message names the record."""


class DegenerateCropError(ValueError):
    """A box rounds to an empty pixel rectangle."""


class ManifestVersionError(ValueError):
    """Manifest file carries an incompatible format version."""


# ---------------------------------------------------------------------------
# Mask rasterization


def rasterize_polygon(coords: Sequence[float], H: int, W: int) -> np.ndarray:
    """Fill one polygon into an H x W boolean mask.

    ``coords`` is a flat [x0, y0, x1, y1, ...] ring. A pixel is inside when
    its center (j + 0.5, i + 0.5) is inside by the even-odd rule; axis-
    aligned rectangles with integer corners rasterize to exactly their area.
    """
    if len(coords) < 6 or len(coords) % 2 != 0:
        raise AnnotationError(f"polygon needs >= 3 (x, y) pairs, got {len(coords)} numbers")
    xs = np.asarray(coords[0::2], dtype=np.float64)
    ys = np.asarray(coords[1::2], dtype=np.float64)
    mask = np.zeros((H, W), dtype=bool)
    x0, y0 = xs, ys
    x1, y1 = np.roll(xs, -1), np.roll(ys, -1)
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    ylo, yhi = np.minimum(y0, y1), np.maximum(y0, y1)
    row_lo = max(int(np.floor(ylo.min() - 0.5)), 0) if ylo.size else 0
    row_hi = min(int(np.ceil(yhi.max())), H)
    for row in range(row_lo, row_hi):
        yc = row + 0.5
        hit = (ylo <= yc) & (yc < yhi)
        if not np.any(hit):
            continue
        t = (yc - y0[hit]) / (y1[hit] - y0[hit])
        crossings = np.sort(x0[hit] + t * (x1[hit] - x0[hit]))
        for a, b in zip(crossings[0::2], crossings[1::2]):
            j0 = max(int(np.ceil(a - 0.5)), 0)
            j1 = min(int(np.ceil(b - 0.5)), W)
            if j1 > j0:
                mask[row, j0:j1] = True
    return mask


def rle_encode(mask: np.ndarray) -> dict:
    """Uncompressed column-major RLE of a boolean mask."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    flat = m.T.ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts  # runs must start with a background count
    return {"size": [h, w], "counts": counts}


def rle_decode(rle: dict, H: int, W: int) -> np.ndarray:
    """Decode uncompressed column-major RLE into an H x W boolean mask."""
    size = rle.get("size")
    counts = rle.get("counts")
    if size != [H, W] and tuple(size or ()) != (H, W):
        raise AnnotationError(f"RLE size {size} does not match image {H}x{W}")
    if not isinstance(counts, list):
        raise AnnotationError("compressed RLE (string counts) is not supported; "
                              "use uncompressed integer counts")
    total = sum(counts)
    if total != H * W:
        raise AnnotationError(f"RLE counts sum to {total}, expected {H * W}")
    flat = np.zeros(H * W, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if run:
            flat[pos:pos + run] = value
        pos += run
        value = not value
    return flat.reshape(W, H).T


# ---------------------------------------------------------------------------
# Annotations


@dataclass(frozen=True)
class Instance:
    bbox: tuple[float, float, float, float]  # x, y, width, height
    polygons: tuple[tuple[float, ...], ...] = ()
    rle: dict | None = None

    def to_box(self) -> ScoredBox:
        x, y, w, h = self.bbox
        return ScoredBox(x, y, x + w, y + h)


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_name: str
    height: int
    width: int
    instances: tuple[Instance, ...] = ()


@dataclass(frozen=True)
class CocoSubsetAnnotations:
    images: tuple[ImageRecord, ...]

    def __post_init__(self):
        ordered = tuple(sorted(self.images, key=lambda r: r.image_id))
        object.__setattr__(self, "images", ordered)
        object.__setattr__(self, "_by_id", {r.image_id: r for r in ordered})

    def image_ids(self) -> list[int]:
        return [r.image_id for r in self.images]

    def get(self, image_id: int) -> ImageRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise KeyError(f"image id {image_id} not in annotations") from None

    def gt_boxes(self, image_id: int) -> list[ScoredBox]:
        return [inst.to_box() for inst in self.get(image_id).instances]

    def mask_for(self, image_id: int) -> InstanceMask:
        """Union of all instance masks of an image (class-agnostic)."""
        rec = self.get(image_id)
        H, W = rec.height, rec.width
        union = np.zeros((H, W), dtype=bool)
        for inst in rec.instances:
            if inst.polygons:
                for poly in inst.polygons:
                    union |= rasterize_polygon(poly, H, W)
            elif inst.rle is not None:
                union |= rle_decode(inst.rle, H, W)
            else:
                x, y, w, h = inst.bbox
                union[int(round(y)):int(round(y + h)), int(round(x)):int(round(x + w))] = True
        return InstanceMask(union)


def _require(record: dict, key: str, context: str):
    if key not in record:
        raise AnnotationError(f"{context}: missing field {key!r}")
    return record[key]


def parse_annotations(path) -> CocoSubsetAnnotations:
    """Parse and validate the documented annotation JSON subset."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise AnnotationError(f"{path}: malformed JSON ({e})") from e
    if not isinstance(doc, dict):
        raise AnnotationError(f"{path}: top level must be a JSON object")

    records: dict[int, dict] = {}
    for k, img in enumerate(doc.get("images", [])):
        ctx = f"{path}: images[{k}]"
        image_id = _require(img, "id", ctx)
        if not isinstance(image_id, int):
            raise AnnotationError(f"{ctx}: id must be an integer, got {image_id!r}")
        if image_id in records:
            raise AnnotationError(f"{ctx}: duplicate image id {image_id}")
        file_name = _require(img, "file_name", ctx)
        height = _require(img, "height", ctx)
        width = _require(img, "width", ctx)
        if not (isinstance(height, int) and isinstance(width, int) and height > 0 and width > 0):
            raise AnnotationError(f"{ctx}: height/width must be positive integers")
        records[image_id] = {"file_name": file_name, "height": height,
                             "width": width, "instances": []}
    if not records:
        raise AnnotationError(f"{path}: no images listed")

    for k, ann in enumerate(doc.get("annotations", [])):
        ctx = f"{path}: annotations[{k}]"
        image_id = _require(ann, "image_id", ctx)
        if image_id not in records:
            raise AnnotationError(f"{ctx}: references unknown image id {image_id}")
        rec = records[image_id]
        bbox = _require(ann, "bbox", ctx)
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise AnnotationError(f"{ctx}: bbox must be [x, y, w, h]")
        x, y, w, h = (float(v) for v in bbox)
        eps = 1e-6
        if w <= 0 or h <= 0 or x < -eps or y < -eps or \
                x + w > rec["width"] + eps or y + h > rec["height"] + eps:
            raise AnnotationError(
                f"{ctx}: bbox {bbox} out of bounds for image {image_id} "
                f"({rec['width']}x{rec['height']})")
        seg = ann.get("segmentation")
        polygons: tuple[tuple[float, ...], ...] = ()
        rle = None
        if isinstance(seg, list):
            if not seg or not all(isinstance(p, list) for p in seg):
                raise AnnotationError(f"{ctx}: polygon segmentation must be a list of rings")
            polygons = tuple(tuple(float(v) for v in p) for p in seg)
        elif isinstance(seg, dict):
            rle = seg
        elif seg is not None:
            raise AnnotationError(f"{ctx}: unsupported segmentation type {type(seg).__name__}")
        rec["instances"].append(Instance((x, y, w, h), polygons, rle))

    images = tuple(
        ImageRecord(image_id, rec["file_name"], rec["height"], rec["width"],
                    tuple(rec["instances"]))
        for image_id, rec in sorted(records.items())
    )
    return CocoSubsetAnnotations(images)


# ---------------------------------------------------------------------------
# Images and crops


def load_image(path) -> np.ndarray:
    """Load an image file as an H x W x 3 uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(array: np.ndarray, path, lossy: bool = False) -> None:
    """Save an RGB array; PNG by default so crops stay pixel-exact."""
    path = Path(path)
    im = Image.fromarray(array)
    if lossy:
        im.save(path, format="JPEG", quality=95)
    else:
        im.save(path, format="PNG")


def extract_crop(image: np.ndarray, box: ScoredBox) -> np.ndarray:
    """Pixel-exact sub-image at the box's rounded integer rectangle."""
    H, W = image.shape[:2]
    ix1, iy1, ix2, iy2 = box.pixel_bounds()
    ix1, iy1 = max(ix1, 0), max(iy1, 0)
    ix2, iy2 = min(ix2, W), min(iy2, H)
    if ix2 <= ix1 or iy2 <= iy1:
        raise DegenerateCropError(f"box {box.coords()} rounds to an empty rectangle")
    return np.ascontiguousarray(image[iy1:iy2, ix1:ix2])


# One outline color per box rank, cycled.
_BOX_PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230),
)


def _heat_rgb(values: np.ndarray) -> np.ndarray:
    # Linear blue (low) to red (high).
    v = np.clip(values, 0.0, 1.0)
    out = np.zeros(v.shape + (3,), dtype=np.float64)
    out[..., 0] = 255.0 * v
    out[..., 2] = 255.0 * (1.0 - v)
    return out


def emit_overlay(image: np.ndarray, score_map, boxes: Sequence[ScoredBox],
                 out_prefix) -> tuple[Path, Path]:
    """Write the score-map overlay and the box-outline image.

    ``<prefix>_scoremap.png`` blends a blue-to-red rendering of the map over
    the source at alpha 0.5; ``<prefix>_boxes.png`` draws one 3 px outline
    per box, colored by rank. Output bytes are deterministic.
    """
    H, W = image.shape[:2]
    if (score_map.H, score_map.W) != (H, W):
        raise ValueError(f"score map {score_map.W}x{score_map.H} does not match "
                         f"image {W}x{H}")
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)

    heat = _heat_rgb(score_map.values)
    blended = np.round(0.5 * image.astype(np.float64) + 0.5 * heat).astype(np.uint8)
    score_path = out_prefix.parent / f"{out_prefix.name}_scoremap.png"
    save_image(blended, score_path)

    boxed = Image.fromarray(image.copy())
    draw = ImageDraw.Draw(boxed)
    for rank, b in enumerate(boxes):
        ix1, iy1, ix2, iy2 = b.pixel_bounds()
        color = _BOX_PALETTE[rank % len(_BOX_PALETTE)]
        draw.rectangle((ix1, iy1, max(ix2 - 1, ix1), max(iy2 - 1, iy1)),
                       outline=color, width=3)
    boxes_path = out_prefix.parent / f"{out_prefix.name}_boxes.png"
    boxed.save(boxes_path, format="PNG")
    return score_path, boxes_path


# ---------------------------------------------------------------------------
# Manifests


@dataclass(frozen=True)
class CropRecord:
    box: tuple[float, float, float, float]
    score: float
    path: str  # relative to the manifest's directory


@dataclass(frozen=True)
class ImageEntry:
    image_id: int
    source: str
    crops: tuple[CropRecord, ...]
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class CropManifest:
    """Reproducible record of one crop-generation run."""

    strategy: dict
    run_config: dict
    images: tuple[ImageEntry, ...]
    toolkit_version: str = __version__
    format_version: int = MANIFEST_FORMAT_VERSION
    config_hash: str = field(default="")

    def __post_init__(self):
        ordered = tuple(sorted(self.images, key=lambda e: e.image_id))
        object.__setattr__(self, "images", ordered)
        if not self.config_hash:
            object.__setattr__(self, "config_hash", config_hash(self.strategy, self.run_config))

    def to_json_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "toolkit_version": self.toolkit_version,
            "strategy": self.strategy,
            "run_config": self.run_config,
            "config_hash": self.config_hash,
            "images": [
                {
                    "image_id": e.image_id,
                    "source": e.source,
                    "crops": [
                        {"box": list(c.box), "score": c.score, "path": c.path}
                        for c in e.crops
                    ],
                    "warnings": list(e.warnings),
                }
                for e in self.images
            ],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "CropManifest":
        version = doc.get("format_version")
        if version != MANIFEST_FORMAT_VERSION:
            raise ManifestVersionError(
                f"manifest format version {version} is incompatible with "
                f"this toolkit (expected {MANIFEST_FORMAT_VERSION})")
        images = tuple(
            ImageEntry(
                image_id=e["image_id"],
                source=e["source"],
                crops=tuple(CropRecord(tuple(c["box"]), c["score"], c["path"])
                            for c in e["crops"]),
                warnings=tuple(e.get("warnings", [])),
            )
            for e in doc["images"]
        )
        return CropManifest(
            strategy=doc["strategy"],
            run_config=doc["run_config"],
            images=images,
            toolkit_version=doc["toolkit_version"],
            config_hash=doc["config_hash"],
        )


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def config_hash(strategy: dict, run_config: dict) -> str:
    """SHA-256 over the canonical strategy + run configuration."""
    blob = json.dumps({"strategy": strategy, "run_config": run_config},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(manifest: CropManifest, path) -> None:
    Path(path).write_text(_canonical_json(manifest.to_json_dict()) + "\n")


def read_manifest(path) -> CropManifest:
    doc = json.loads(Path(path).read_text())
    return CropManifest.from_json_dict(doc)


# ---------------------------------------------------------------------------
# Objectness reports


def write_report_csv(report: ObjectnessReport, path) -> None:
    """UTF-8 CSV with columns image_id, strategy, box, objectness, category."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "strategy", "box", "objectness", "category"])
        for r in report.rows:
            box = ",".join(repr(v) for v in r.box)
            writer.writerow([r.image_id, r.strategy, box, repr(r.objectness),
                             r.category.value])


def write_report_json(report: ObjectnessReport, path) -> None:
    doc = {
        "strategy": report.strategy,
        "num_crops": len(report.rows),
        "mean_objectness": report.mean,
        "category_fractions": {cat.value: f for cat, f in report.fractions.items()},
        "rows": [
            {"image_id": r.image_id, "box": list(r.box),
             "objectness": r.objectness, "category": r.category.value}
            for r in report.rows
        ],
    }
    Path(path).write_text(_canonical_json(doc) + "\n")


def format_summary(reports: Sequence[ObjectnessReport]) -> str:
    """Fixed-width strategy summary: mean objectness and category fractions."""
    lines = [f"{'strategy':<10} {'crops':>6} {'objectness':>11} "
             f"{'poor':>7} {'coarse':>7} {'precise':>8}"]
    for rep in reports:
        f = rep.fractions
        lines.append(
            f"{rep.strategy:<10} {len(rep.rows):>6} {100.0 * rep.mean:>10.1f}% "
            f"{100.0 * f[CropCategory.POOR]:>6.1f}% "
            f"{100.0 * f[CropCategory.COARSE]:>6.1f}% "
            f"{100.0 * f[CropCategory.PRECISE]:>7.1f}%")
    return "\n".join(lines)
