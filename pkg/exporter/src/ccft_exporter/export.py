"""Run a pretrained convolutional backbone over a corpus and dump CCFT files.

The output contract is the coarsecrop toolkit's CCFT format (little-endian)::

    magic b"CCFT" | u16 version=1 | u16 dtype=1 (float32 LE)
    u32 d | u32 h | u32 w | float32 payload, channel-major

plus an ``index.json`` mapping image ids to the emitted files, consumed by
the toolkit's ``--features external:<dir>`` source.

Images are cropped top-left to a multiple of the layer stride before
inference so the emitted dims are exactly d x floor(H/stride) x
floor(W/stride). Checkpoints are optional: a randomly initialized backbone
already produces usable box-filtering features.
"""

from __future__ import annotations

import argparse
import json
import logging
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger("ccft_exporter")

CCFT_MAGIC = b"CCFT"
CCFT_VERSION = 1
CCFT_DTYPE_FLOAT32_LE = 1
_HEADER = struct.Struct("<4sHHIII")

INDEX_FORMAT_VERSION = 1

# Final stage of each supported cut point and its total stride.
LAYER_STRIDES = {"layer1": 4, "layer2": 8, "layer3": 16, "layer4": 32}

# Standard ImageNet preprocessing, what torchvision checkpoints expect.
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class ExportError(RuntimeError):
    """Configuration or checkpoint problems that must abort the export."""


@dataclass
class ExportConfig:
    corpus: Path
    out: Path
    backbone: str = "resnet50"
    layer: str = "layer4"
    checkpoint: Path | None = None
    device: str = "cpu"
    batch_size: int = 4

    @property
    def stride(self) -> int:
        return LAYER_STRIDES[self.layer]


def write_ccft(path: Path, values: np.ndarray) -> None:
    """Write one d x h x w float32 tensor in CCFT layout."""
    d, h, w = values.shape
    header = _HEADER.pack(CCFT_MAGIC, CCFT_VERSION, CCFT_DTYPE_FLOAT32_LE, d, h, w)
    path.write_bytes(header + np.ascontiguousarray(values, dtype="<f4").tobytes())


def _strip_prefix(key: str) -> str:
    for prefix in ("module.", "backbone.", "encoder."):
        if key.startswith(prefix):
            return key[len(prefix):]
    return key


def load_backbone(cfg: ExportConfig) -> torch.nn.Module:
    """Build the truncated backbone, optionally loading a checkpoint."""
    import torchvision.models

    if cfg.layer not in LAYER_STRIDES:
        raise ExportError(f"unknown layer {cfg.layer!r}, expected one of "
                          f"{sorted(LAYER_STRIDES)}")
    factory = getattr(torchvision.models, cfg.backbone, None)
    if factory is None:
        raise ExportError(f"unknown backbone {cfg.backbone!r}")
    model = factory(weights=None)

    if cfg.checkpoint is not None:
        state = torch.load(cfg.checkpoint, map_location="cpu", weights_only=True)
        for wrapper in ("state_dict", "model"):
            if isinstance(state, dict) and wrapper in state and isinstance(state[wrapper], dict):
                state = state[wrapper]
        state = {_strip_prefix(k): v for k, v in state.items()}
        model_keys = set(model.state_dict().keys())
        matched = {k: v for k, v in state.items() if k in model_keys}
        if not matched:
            raise ExportError(f"checkpoint {cfg.checkpoint} shares no parameter names "
                              f"with backbone {cfg.backbone!r}")
        missing, unexpected = model.load_state_dict(matched, strict=False)
        log.info("checkpoint loaded: %d tensors matched, %d model keys missing, "
                 "%d checkpoint keys unused",
                 len(matched), len(missing), len(state) - len(matched))

    stages = []
    for name, child in model.named_children():
        stages.append(child)
        if name == cfg.layer:
            break
    else:
        raise ExportError(f"backbone {cfg.backbone!r} has no stage named {cfg.layer!r}")
    trunk = torch.nn.Sequential(*stages)
    trunk.eval()
    return trunk.to(cfg.device)


def _load_cropped(path: Path, stride: int) -> np.ndarray | None:
    """Image as float32 CHW, top-left cropped to a stride multiple."""
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"))
    except OSError as e:
        log.warning("skipping unreadable image %s: %s", path, e)
        return None
    H, W = rgb.shape[:2]
    if H < stride or W < stride:
        log.warning("skipping %s: %dx%d smaller than stride %d", path, W, H, stride)
        return None
    rgb = rgb[: (H // stride) * stride, : (W // stride) * stride]
    x = (rgb.astype(np.float32) / 255.0 - _MEAN) / _STD
    return x.transpose(2, 0, 1)


def _image_key(path: Path) -> str:
    stem = path.stem
    return str(int(stem)) if stem.isdigit() else stem


def export_corpus(cfg: ExportConfig) -> Path:
    """Write one CCFT file per readable corpus image plus index.json.

    Same-shaped images are batched together up to ``batch_size``. Returns
    the index path.
    """
    if not cfg.corpus.is_dir():
        raise ExportError(f"corpus directory not found: {cfg.corpus}")
    files = sorted(p for p in cfg.corpus.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ExportError(f"no images found in {cfg.corpus}")

    trunk = load_backbone(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)

    buckets: dict[tuple[int, int], list[tuple[str, np.ndarray]]] = {}
    for path in files:
        x = _load_cropped(path, cfg.stride)
        if x is None:
            continue
        buckets.setdefault(x.shape[1:], []).append((_image_key(path), x))

    index: dict[str, dict] = {}
    with torch.no_grad():
        for shape in sorted(buckets):
            items = buckets[shape]
            for start in range(0, len(items), cfg.batch_size):
                chunk = items[start:start + cfg.batch_size]
                batch = torch.from_numpy(np.stack([x for _, x in chunk])).to(cfg.device)
                features = trunk(batch).cpu().numpy()
                for (key, _), fmap in zip(chunk, features):
                    out_name = f"{key}.ccft"
                    write_ccft(cfg.out / out_name, fmap)
                    d, h, w = fmap.shape
                    index[key] = {"path": out_name, "d": int(d), "h": int(h), "w": int(w)}

    index_path = cfg.out / "index.json"
    index_path.write_text(json.dumps({
        "format_version": INDEX_FORMAT_VERSION,
        "backbone": cfg.backbone,
        "layer": cfg.layer,
        "stride": cfg.stride,
        "images": index,
    }, sort_keys=True, indent=2) + "\n")
    log.info("exported %d feature file(s) to %s", len(index), cfg.out)
    return index_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ccft-export",
        description="Dump pretrained-backbone feature maps as CCFT files.")
    parser.add_argument("--corpus", type=Path, required=True, help="image directory")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--backbone", default="resnet50",
                        help="torchvision model name (default resnet50)")
    parser.add_argument("--layer", default="layer4", choices=sorted(LAYER_STRIDES),
                        help="stage to cut at (default layer4, stride 32)")
    parser.add_argument("--checkpoint", type=Path,
                        help="state-dict path; random init when omitted")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=4, dest="batch_size")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = ExportConfig(corpus=args.corpus, out=args.out, backbone=args.backbone,
                       layer=args.layer, checkpoint=args.checkpoint,
                       device=args.device, batch_size=args.batch_size)
    try:
        index_path = export_corpus(cfg)
    except ExportError as e:
        print(f"ccft-export: error: {e}", file=sys.stderr)
        return 1
    print(f"index written to {index_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
