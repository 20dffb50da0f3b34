"""Per-image feature sources: CCFT tensor files and a seeded random extractor.

CCFT binary format (little-endian throughout)::

    offset  size  field
    0       4     magic  b"CCFT"
    4       2     version  (u16, currently 1)
    6       2     dtype code  (u16, 1 = float32 little-endian)
    8       4     d  (u32, channels)
    12      4     h  (u32, rows)
    16      4     w  (u32, cols)
    20      4*d*h*w   payload, float32, channel-major (d outer, then rows)

The random extractor is a small stack of seeded 3x3 convolutions with
stride 2 and ReLU; random weights are enough to drive the box-filtering
score map, so no pretrained backbone is required. A pretrained exporter can
produce the same CCFT files externally and is consumed via
``ExternalFeatureSource``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import FeatureMap

__all__ = [
    "CCFT_MAGIC",
    "CCFT_VERSION",
    "CCFT_DTYPE_FLOAT32_LE",
    "FeatureFileError",
    "write_feature_file",
    "load_feature_file",
    "RandomExtractorConfig",
    "random_extract",
    "DirectoryFeatureSource",
    "ExternalFeatureSource",
    "RandomFeatureSource",
    "parse_feature_spec",
]

CCFT_MAGIC = b"CCFT"
CCFT_VERSION = 1
CCFT_DTYPE_FLOAT32_LE = 1
_HEADER = struct.Struct("<4sHHIII")

# Keep extraction desk-scale: inputs larger than this are downscaled first.
MAX_EXTRACT_SIDE = 1024

# Reject headers whose payload would exceed 1 GiB; anything that big in a
# per-image tensor is a corrupt or hostile file.
_MAX_PAYLOAD = 1 << 30


class FeatureFileError(ValueError):
    """A CCFT file failed to parse; the message names the offending field."""


def write_feature_file(path, f: FeatureMap) -> None:
    """Write a FeatureMap as a CCFT file (bit-exact round trip with load)."""
    path = Path(path)
    header = _HEADER.pack(CCFT_MAGIC, CCFT_VERSION, CCFT_DTYPE_FLOAT32_LE, f.d, f.h, f.w)
    payload = np.ascontiguousarray(f.values, dtype="<f4").tobytes()
    path.write_bytes(header + payload)


def load_feature_file(path) -> FeatureMap:
    """Load a CCFT file, validating magic, version, dtype, dims and length."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FeatureFileError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, dtype, d, h, w = _HEADER.unpack_from(blob)
    if magic != CCFT_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}, expected {CCFT_MAGIC!r}")
    if version != CCFT_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}, expected {CCFT_VERSION}")
    if dtype != CCFT_DTYPE_FLOAT32_LE:
        raise FeatureFileError(f"{path}: unsupported dtype code {dtype}, "
                               f"expected {CCFT_DTYPE_FLOAT32_LE} (float32 LE)")
    if min(d, h, w) == 0:
        raise FeatureFileError(f"{path}: zero dimension in header (d={d}, h={h}, w={w})")
    expected = 4 * d * h * w
    if expected > _MAX_PAYLOAD:
        raise FeatureFileError(f"{path}: header dims (d={d}, h={h}, w={w}) overflow the "
                               f"{_MAX_PAYLOAD}-byte payload limit")
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise FeatureFileError(f"{path}: truncated payload, expected {expected} bytes, "
                               f"got {actual}")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(d, h, w)
    try:
        return FeatureMap(values)
    except ValueError as e:
        raise FeatureFileError(f"{path}: {e}") from e


@dataclass(frozen=True)
class RandomExtractorConfig:
    """Seeded random conv stack: (out_channels, stride) per 3x3 stage.

    The default five stride-2 stages give total stride 32 and 512 output
    channels, matching the default anchor stride.
    """

    seed: int = 0
    stages: tuple[tuple[int, int], ...] = ((32, 2), (64, 2), (128, 2), (256, 2), (512, 2))

    def __post_init__(self):
        if not self.stages:
            raise ValueError("extractor needs at least one stage")
        for c, s in self.stages:
            if c < 1 or s < 1:
                raise ValueError(f"bad stage ({c}, {s}): channels and stride must be >= 1")

    @property
    def total_stride(self) -> int:
        p = 1
        for _, s in self.stages:
            p *= s
        return p

    @property
    def out_channels(self) -> int:
        return self.stages[-1][0]


def _stage_weights(rng: np.random.Generator, c_in: int, c_out: int) -> np.ndarray:
    # He-scaled Gaussian init keeps activation magnitudes stable through ReLUs.
    fan_in = c_in * 9
    w = rng.standard_normal((c_out, c_in, 3, 3)) * math.sqrt(2.0 / fan_in)
    return w.reshape(c_out, -1).astype(np.float32)


def _conv3x3(x: np.ndarray, wmat: np.ndarray, stride: int) -> np.ndarray:
    # 3x3 convolution, padding 1, via im2col. Spatial dims are truncated to
    # a multiple of the stride first so that out = floor(in / stride).
    c, h, w = x.shape
    ht = (h // stride) * stride
    wt = (w // stride) * stride
    oh, ow = ht // stride, wt // stride
    xp = np.pad(x[:, :ht, :wt], ((0, 0), (1, 1), (1, 1)))
    patches = np.empty((c, 3, 3, oh, ow), dtype=np.float32)
    for di in range(3):
        for dj in range(3):
            patches[:, di, dj] = xp[:, di:di + stride * oh:stride, dj:dj + stride * ow:stride]
    y = wmat @ patches.reshape(c * 9, oh * ow)
    return np.maximum(y.reshape(-1, oh, ow), 0.0)


def _downscale_rgb(image: np.ndarray, max_side: int) -> np.ndarray:
    from PIL import Image

    h, w = image.shape[:2]
    if max(h, w) <= max_side:
        return image
    scale = max_side / max(h, w)
    nh = max(int(round(h * scale)), 1)
    nw = max(int(round(w * scale)), 1)
    pil = Image.fromarray(image).resize((nw, nh), Image.BILINEAR)
    return np.asarray(pil)


def random_extract(image: np.ndarray, cfg: RandomExtractorConfig) -> FeatureMap:
    """Run the seeded random conv stack over an H x W x 3 uint8 image.

    Deterministic given (image bytes, seed). Output dims are
    floor(H / total_stride) x floor(W / total_stride) with cfg.out_channels
    channels; a convolution with no bias and ReLU maps an all-zero image to
    all-zero features.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected H x W x 3 uint8 image, got {img.shape} {img.dtype}")
    stride = cfg.total_stride
    if img.shape[0] < stride or img.shape[1] < stride:
        raise ValueError(f"image {img.shape[1]}x{img.shape[0]} smaller than "
                         f"total stride {stride}")
    img = _downscale_rgb(img, MAX_EXTRACT_SIDE)
    x = (img.astype(np.float32) / 255.0).transpose(2, 0, 1)
    rng = np.random.default_rng(cfg.seed)
    for c_out, s in cfg.stages:
        wmat = _stage_weights(rng, x.shape[0], c_out)
        x = _conv3x3(x, wmat, s)
    return FeatureMap(x)


class DirectoryFeatureSource:
    """CCFT files named ``<image_id>.ccft`` in one directory."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"feature directory not found: {self.root}")

    def features_for(self, image_id: int, image: np.ndarray | None = None) -> FeatureMap:
        path = self.root / f"{image_id}.ccft"
        if not path.is_file():
            raise FileNotFoundError(f"no feature file for image {image_id}: {path}")
        return load_feature_file(path)


class ExternalFeatureSource:
    """CCFT corpus written by an external exporter, located via index.json.

    The index maps ``str(image_id)`` to a CCFT path relative to the index
    file's directory.
    """

    def __init__(self, root):
        self.root = Path(root)
        index_path = self.root / "index.json"
        if not index_path.is_file():
            raise FileNotFoundError(f"external feature index not found: {index_path}")
        index = json.loads(index_path.read_text())
        images = index.get("images")
        if not isinstance(images, dict):
            raise FeatureFileError(f"{index_path}: missing or malformed 'images' mapping")
        self._paths = {key: self.root / entry["path"] for key, entry in images.items()}

    def features_for(self, image_id: int, image: np.ndarray | None = None) -> FeatureMap:
        key = str(image_id)
        if key not in self._paths:
            raise FileNotFoundError(f"image {image_id} not present in external feature index")
        return load_feature_file(self._paths[key])


class RandomFeatureSource:
    """Random-extractor features computed from the image pixels on demand."""

    def __init__(self, cfg: RandomExtractorConfig):
        self.cfg = cfg

    def features_for(self, image_id: int, image: np.ndarray | None = None) -> FeatureMap:
        if image is None:
            raise ValueError("random feature source needs the image pixels")
        return random_extract(image, self.cfg)


def parse_feature_spec(spec: str, corpus_dir=None):
    """Build a feature source from a CLI spec string.

    Accepted forms: ``file:<dir>``, ``rand:<seed>``, ``external:<dir>`` and
    bare ``external`` (defaults to ``<corpus>/features``).
    """
    if spec.startswith("file:"):
        return DirectoryFeatureSource(spec[len("file:"):])
    if spec.startswith("rand:"):
        try:
            seed = int(spec[len("rand:"):])
        except ValueError:
            raise ValueError(f"bad random feature seed in {spec!r}") from None
        return RandomFeatureSource(RandomExtractorConfig(seed=seed))
    if spec == "external" or spec.startswith("external:"):
        root = spec[len("external:"):] if spec.startswith("external:") else ""
        if not root:
            if corpus_dir is None:
                raise ValueError("bare 'external' needs a corpus directory to locate features")
            root = Path(corpus_dir) / "features"
        return ExternalFeatureSource(root)
    raise ValueError(f"unknown feature spec {spec!r}: "
                     "expected file:<dir>, rand:<seed> or external[:<dir>]")
