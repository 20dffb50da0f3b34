"""Command-line entry point.

Subcommands::

    generate      crop a corpus with one strategy, write crops + manifest
    evaluate      score a manifest's crops against ground-truth masks
    visualize     emit score-map and box overlays per image
    synth         build a synthetic corpus (images + annotations + features)
    losses-check  run the loss-gradient verification harness

Exit codes: 0 ok, 1 configuration error, 2 partial failure. The env var
``COARSECROP_LOG`` selects the log level (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse

import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .anchor_engine import AnchorConfig, ScoredBox
from .crop_strategies import (
    DEFAULT_PAD_RATIO,
    DEFAULT_POOR_BAND,
    CropSet,
    StrategyKind,
    StrategySpec,
    grid_crop,
    gt_crop,
    gtpad_crop,
    image_crop,
    our_crop,
    poor_crop,
)
from .dataset_io import (
    AnnotationError,
    CropManifest,
    CropRecord,
    DegenerateCropError,
    ImageEntry,
    ManifestVersionError,
    emit_overlay,
    extract_crop,
    format_summary,
    load_image,
    parse_annotations,
    read_manifest,
    save_image,
    write_manifest,
    write_report_csv,
    write_report_json,
)
from .feature_provider import FeatureFileError, parse_feature_spec
from .objectness_eval import ObjectnessReport, ReportRow, categorize, crop_objectness
from .ssl_losses import byol_loss, infonce_loss
from .synth_oracle import SceneSpec, write_corpus
from .tensor_core import bilinear_upsample, channel_sum, minmax_normalize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


class ConfigError(Exception):
    """Bad flags or missing inputs; maps to exit code 1."""


@dataclass
class RunConfig:
    """Resolved configuration of one CLI invocation."""

    command: str
    corpus: Path | None = None
    annotations: Path | None = None
    features: str | None = None
    strategy_text: str = "our"
    strategy: StrategySpec | None = None
    top_n: int = 5
    nms_iou: float = 0.5
    stride: int = 32
    out: Path | None = None
    workers: int = 1
    seed: int = 0
    strict: bool = False
    lossy: bool = False
    manifest: Path | None = None
    # synth
    count: int = 8
    height: int = 256
    width: int = 320
    min_objects: int = 1
    max_objects: int = 3
    min_size: int = 40
    max_size: int = 128
    shapes: str = "rectangle,ellipse"
    background: str = "flat"
    with_features: bool = False
    # losses-check
    tau: float = 0.2
    trials: int = 100


def parse_strategy(text: str, anchors: AnchorConfig, seed: int) -> StrategySpec:
    """Parse ``image|grid|gt|gtpad:<ratio>|poor:<lo>,<hi>|our`` into a spec."""
    name, _, params = text.partition(":")
    try:
        kind = StrategyKind(name)
    except ValueError:
        raise ConfigError(f"unknown strategy {name!r}") from None
    if kind is StrategyKind.GTPAD:
        pad = DEFAULT_PAD_RATIO
        if params:
            try:
                pad = float(params)
            except ValueError:
                raise ConfigError(f"bad gtpad ratio {params!r}") from None
        return StrategySpec(kind, pad_ratio=pad, anchors=anchors, seed=seed)
    if kind is StrategyKind.POOR:
        band = DEFAULT_POOR_BAND
        if params:
            try:
                lo, hi = (float(v) for v in params.split(","))
            except ValueError:
                raise ConfigError(f"bad poor band {params!r}, expected lo,hi") from None
            band = (lo, hi)
        return StrategySpec(kind, poor_band=band, anchors=anchors, seed=seed)
    if params:
        raise ConfigError(f"strategy {name!r} takes no parameters, got {params!r}")
    return StrategySpec(kind, anchors=anchors, seed=seed)


def _image_seed(seed: int, image_id: int) -> int:
    # Stable per-image stream, independent of worker scheduling.
    return int(np.random.SeedSequence([seed, image_id]).generate_state(1, dtype=np.uint64)[0])


def _require_dir(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required")
    if not path.is_dir():
        raise ConfigError(f"{what} directory not found: {path}")
    return path


def _require_file(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required")
    if not path.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return path


def _list_images(corpus: Path, ann) -> list[tuple[int, Path]]:
    """(image_id, path) pairs, ordered by id.

    Ids come from the annotations when given; otherwise from numeric file
    stems, falling back to 1-based order over the sorted listing.
    """
    if ann is not None:
        return [(rec.image_id, corpus / rec.file_name) for rec in ann.images]
    files = sorted(p for p in corpus.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not files:
        raise ConfigError(f"no images found in {corpus}")
    if all(p.stem.lstrip("0").isdigit() or p.stem.isdigit() for p in files):
        return sorted(((int(p.stem), p) for p in files), key=lambda t: t[0])
    return [(k + 1, p) for k, p in enumerate(files)]


@dataclass
class _Failure:
    image_id: int
    reason: str


def _score_map_for(image_id: int, img: np.ndarray, source):
    fm = source.features_for(image_id, img)
    H, W = img.shape[:2]
    return bilinear_upsample(minmax_normalize(channel_sum(fm)), H, W)


def _crops_for_image(cfg: RunConfig, image_id: int, img: np.ndarray, ann, source) -> CropSet:
    spec = cfg.strategy
    H, W = img.shape[:2]
    kind = spec.kind
    if kind is StrategyKind.IMAGE:
        return image_crop(image_id, H, W)
    if kind is StrategyKind.GRID:
        return grid_crop(image_id, H, W)
    if kind is StrategyKind.GT:
        return gt_crop(image_id, ann.gt_boxes(image_id))
    if kind is StrategyKind.GTPAD:
        return gtpad_crop(image_id, ann.gt_boxes(image_id), H, W, pad_ratio=spec.pad_ratio)
    if kind is StrategyKind.POOR:
        return poor_crop(image_id, ann.mask_for(image_id), band=spec.poor_band,
                         n=spec.anchors.top_n, seed=_image_seed(cfg.seed, image_id))
    return our_crop(image_id, _score_map_for(image_id, img, source), spec.anchors)


def _generate_one(cfg: RunConfig, image_id: int, path: Path, ann, source,
                  out_dir: Path) -> ImageEntry:
    img = load_image(path)
    H, W = img.shape[:2]
    if ann is not None:
        rec = ann.get(image_id)
        if (rec.height, rec.width) != (H, W):
            raise ValueError(f"annotated size {rec.width}x{rec.height} does not match "
                             f"file {W}x{H}")
    crop_set = _crops_for_image(cfg, image_id, img, ann, source)
    warnings = list(crop_set.warnings)
    ext = "jpg" if cfg.lossy else "png"
    image_dir = out_dir / "crops" / f"{image_id:06d}"
    records = []
    saved_any = False
    for rank, box in enumerate(crop_set.boxes):
        try:
            pixels = extract_crop(img, box)
        except DegenerateCropError as e:
            warnings.append(f"crop {rank} skipped: {e}")
            continue
        if not saved_any:
            image_dir.mkdir(parents=True, exist_ok=True)
            saved_any = True
        crop_path = image_dir / f"crop_{rank:02d}.{ext}"
        save_image(pixels, crop_path, lossy=cfg.lossy)
        records.append(CropRecord(box.coords(), box.score,
                                  str(crop_path.relative_to(out_dir))))
    try:
        source_rel = str(path.relative_to(cfg.corpus))
    except ValueError:
        source_rel = str(path)
    return ImageEntry(image_id, source_rel, tuple(records), tuple(warnings))


def _run_over_corpus(cfg: RunConfig, worker) -> tuple[list, list[_Failure]]:
    """Run a per-image callable over the corpus with a thread pool.

    Results are merged in image-id order, so worker count never changes any
    output bytes.
    """
    ann = parse_annotations(cfg.annotations) if cfg.annotations else None
    corpus = _require_dir(cfg.corpus, "corpus")
    images = _list_images(corpus, ann)
    source = None
    if cfg.features:
        source = parse_feature_spec(cfg.features, corpus)

    def run_one(item):
        image_id, path = item
        try:
            return image_id, worker(image_id, path, ann, source), None
        except (OSError, ValueError, KeyError) as e:
            return image_id, None, _Failure(image_id, str(e))

    with ThreadPoolExecutor(max_workers=max(cfg.workers, 1)) as pool:
        outcomes = list(pool.map(run_one, images))
    outcomes.sort(key=lambda t: t[0])
    results = [r for _, r, f in outcomes if f is None]
    failures = [f for _, _, f in outcomes if f is not None]
    return results, failures


def _report_failures(failures: list[_Failure], strict: bool) -> None:
    for f in failures:
        print(f"  image {f.image_id}: {f.reason}", file=sys.stderr)
    mode = "aborting (strict)" if strict else "skipped"
    print(f"{len(failures)} image(s) failed, {mode}", file=sys.stderr)


def run_generate(cfg: RunConfig) -> int:
    """Crop every corpus image with the configured strategy."""
    if cfg.out is None:
        raise ConfigError("--out is required")
    anchors = AnchorConfig(stride=cfg.stride, nms_iou=cfg.nms_iou, top_n=cfg.top_n)
    cfg.strategy = parse_strategy(cfg.strategy_text, anchors, cfg.seed)
    kind = cfg.strategy.kind
    if kind in (StrategyKind.GT, StrategyKind.GTPAD, StrategyKind.POOR):
        _require_file(cfg.annotations, "annotations")
    if kind is StrategyKind.OUR and not cfg.features:
        raise ConfigError("strategy 'our' needs --features (file:<dir>, rand:<seed> "
                          "or external[:<dir>])")
    out_dir = cfg.out
    out_dir.mkdir(parents=True, exist_ok=True)

    def worker(image_id, path, ann, source):
        return _generate_one(cfg, image_id, path, ann, source, out_dir)

    entries, failures = _run_over_corpus(cfg, worker)
    if failures:
        _report_failures(failures, cfg.strict)
        if cfg.strict:
            return EXIT_PARTIAL
    manifest = CropManifest(
        strategy=cfg.strategy.config_dict(),
        run_config={
            "command": "generate",
            "corpus": str(cfg.corpus),
            "annotations": str(cfg.annotations) if cfg.annotations else None,
            "features": cfg.features,
            "strategy": cfg.strategy_text,
            "top_n": cfg.top_n,
            "nms_iou": cfg.nms_iou,
            "stride": cfg.stride,
            "seed": cfg.seed,
            "lossy": cfg.lossy,
        },
        images=tuple(entries),
    )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest, manifest_path)
    n_crops = sum(len(e.crops) for e in entries)
    print(f"wrote {n_crops} crops for {len(entries)} image(s) to {out_dir} "
          f"(manifest: {manifest_path.name})")
    return EXIT_PARTIAL if failures else EXIT_OK


def run_evaluate(cfg: RunConfig) -> int:
    """Measure a manifest's crops against ground-truth masks."""
    manifest_path = _require_file(cfg.manifest, "manifest")
    annotations_path = _require_file(cfg.annotations, "annotations")
    manifest = read_manifest(manifest_path)
    ann = parse_annotations(annotations_path)
    manifest_ids = [e.image_id for e in manifest.images]
    missing = sorted(set(manifest_ids) - set(ann.image_ids()))
    if missing:
        raise ConfigError("manifest/annotation image-id mismatch; ids without "
                          f"annotations: {missing}")
    strategy = manifest.strategy.get("kind", "unknown")
    rows = []
    for entry in manifest.images:
        if not entry.crops:
            continue
        mask = ann.mask_for(entry.image_id)
        for c in entry.crops:
            box = ScoredBox(*c.box, score=min(max(c.score, 0.0), 1.0))
            o = crop_objectness(box, mask)
            rows.append(ReportRow(entry.image_id, strategy, c.box, o, categorize(o)))
    if not rows:
        raise ConfigError("manifest contains no crops to evaluate")
    report = ObjectnessReport(strategy, tuple(rows))
    out_dir = cfg.out or manifest_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out_dir / "report.csv")
    write_report_json(report, out_dir / "report.json")
    print(format_summary([report]))
    print(f"reports written to {out_dir / 'report.csv'} and {out_dir / 'report.json'}")
    return EXIT_OK


def run_visualize(cfg: RunConfig) -> int:
    """Write score-map and box overlays for every corpus image."""
    if cfg.out is None:
        raise ConfigError("--out is required")
    if not cfg.features:
        raise ConfigError("visualize needs --features (file:<dir>, rand:<seed> "
                          "or external[:<dir>])")
    anchors = AnchorConfig(stride=cfg.stride, nms_iou=cfg.nms_iou, top_n=cfg.top_n)
    cfg.out.mkdir(parents=True, exist_ok=True)

    def worker(image_id, path, ann, source):
        img = load_image(path)
        score_map = _score_map_for(image_id, img, source)
        crop_set = our_crop(image_id, score_map, anchors)
        return emit_overlay(img, score_map, crop_set.boxes, cfg.out / f"{image_id:06d}")

    results, failures = _run_over_corpus(cfg, worker)
    if failures:
        _report_failures(failures, cfg.strict)
        return EXIT_PARTIAL
    print(f"wrote {2 * len(results)} overlay image(s) to {cfg.out}")
    return EXIT_OK


def run_synth(cfg: RunConfig) -> int:
    """Emit a synthetic corpus: images, annotations, optional features."""
    if cfg.out is None:
        raise ConfigError("--out is required")
    shapes = tuple(s.strip() for s in cfg.shapes.split(",") if s.strip())
    try:
        spec = SceneSpec(height=cfg.height, width=cfg.width,
                         n_objects=(cfg.min_objects, cfg.max_objects),
                         size_range=(cfg.min_size, cfg.max_size),
                         shapes=shapes, background=cfg.background)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    annotations_path = write_corpus(cfg.out, cfg.count, base_seed=cfg.seed, spec=spec,
                                    with_features=cfg.with_features,
                                    feature_stride=cfg.stride)
    extra = " + features" if cfg.with_features else ""
    print(f"wrote {cfg.count} scene(s){extra} to {cfg.out} "
          f"(annotations: {annotations_path.name})")
    return EXIT_OK


def _fd_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (fn(hi) - fn(lo)) / (2.0 * step)
    return g


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(fd)), 1e-12)
    return float(np.linalg.norm(analytic - fd)) / denom


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def run_losses_check(cfg: RunConfig) -> int:
    """Check analytic loss gradients against central finite differences.

    Embeddings are drawn unit-norm, as the losses see them in practice;
    unnormalized draws can saturate the softmax into vanishing gradients
    where finite differences carry no signal.
    """
    rng = np.random.default_rng(cfg.seed)
    tol = 1e-6
    worst_info = 0.0
    for _ in range(cfg.trials):
        q = _unit(rng.standard_normal(8))
        k_pos = _unit(rng.standard_normal(8))
        k_negs = [_unit(rng.standard_normal(8)) for _ in range(4)]
        _, grad = infonce_loss(q, k_pos, k_negs, cfg.tau)
        fd = _fd_gradient(lambda v: infonce_loss(v, k_pos, k_negs, cfg.tau)[0], q)
        worst_info = max(worst_info, _rel_err(grad, fd))
    worst_byol = 0.0
    for _ in range(cfg.trials):
        q = rng.standard_normal(16)
        z = rng.standard_normal(16)
        _, gq, gz = byol_loss(q, z)
        fq = _fd_gradient(lambda v: byol_loss(v, z)[0], q)
        fz = _fd_gradient(lambda v: byol_loss(q, v)[0], z)
        worst_byol = max(worst_byol, _rel_err(gq, fq), _rel_err(gz, fz))
    print(f"temperature tau={cfg.tau}, {cfg.trials} instances per loss, seed={cfg.seed}")
    ok_info = worst_info < tol
    ok_byol = worst_byol < tol
    print(f"infonce gradient: max relative error {worst_info:.3e} "
          f"[{'PASS' if ok_info else 'FAIL'}]")
    print(f"byol gradient:    max relative error {worst_byol:.3e} "
          f"[{'PASS' if ok_byol else 'FAIL'}]")
    return EXIT_OK if ok_info and ok_byol else EXIT_PARTIAL


class _Parser(argparse.ArgumentParser):
    # Flag mistakes are configuration errors: exit 1, not argparse's 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coarsecrop",
                     description="Coarse object-crop generation and evaluation.")
    parser.add_argument("--version", action="version", version=f"coarsecrop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p, with_features=True):
        p.add_argument("--corpus", type=Path, help="directory of source images")
        p.add_argument("--annotations", type=Path, help="annotation JSON path")
        if with_features:
            p.add_argument("--features",
                           help="feature source: file:<dir> | rand:<seed> | external[:<dir>]")
        p.add_argument("--top-n", type=int, default=5, dest="top_n",
                       help="crops per image (default 5)")
        p.add_argument("--nms-iou", type=float, default=0.5, dest="nms_iou",
                       help="NMS IoU threshold (default 0.5)")
        p.add_argument("--stride", type=int, default=32,
                       help="feature stride in pixels (default 32)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="worker threads")
        p.add_argument("--seed", type=int, default=0, help="global seed")
        p.add_argument("--strict", action="store_true",
                       help="abort on the first per-image failure")

    g = sub.add_parser("generate", help="crop a corpus and write a manifest")
    add_common(g)
    g.add_argument("--strategy", default="our", dest="strategy_text",
                   help="image|grid|gt|gtpad:<ratio>|poor:<lo>,<hi>|our (default our)")
    g.add_argument("--lossy", action="store_true",
                   help="save crops as JPEG instead of lossless PNG")
    g.set_defaults(func=run_generate)

    e = sub.add_parser("evaluate", help="evaluate a manifest against masks")
    e.add_argument("--manifest", type=Path, required=True, help="manifest JSON path")
    e.add_argument("--annotations", type=Path, required=True, help="annotation JSON path")
    e.add_argument("--out", type=Path, help="report directory (default: manifest dir)")
    e.set_defaults(func=run_evaluate)

    v = sub.add_parser("visualize", help="emit score-map and box overlays")
    add_common(v)
    v.set_defaults(func=run_visualize)

    s = sub.add_parser("synth", help="emit a synthetic corpus")
    s.add_argument("--out", type=Path, required=True, help="corpus output directory")
    s.add_argument("--count", type=int, default=8, help="number of scenes (default 8)")
    s.add_argument("--seed", type=int, default=0, help="base seed")
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--min-objects", type=int, default=1, dest="min_objects")
    s.add_argument("--max-objects", type=int, default=3, dest="max_objects")
    s.add_argument("--min-size", type=int, default=40, dest="min_size",
                   help="smallest object side in pixels (default 40)")
    s.add_argument("--max-size", type=int, default=128, dest="max_size",
                   help="largest object side in pixels (default 128)")
    s.add_argument("--shapes", default="rectangle,ellipse",
                   help="comma-separated shape kinds (default rectangle,ellipse)")
    s.add_argument("--background", default="flat", choices=("flat", "textured"))
    s.add_argument("--with-features", action="store_true", dest="with_features",
                   help="also write oracle CCFT features per image")
    s.add_argument("--stride", type=int, default=32,
                   help="feature stride for oracle features (default 32)")
    s.set_defaults(func=run_synth)

    l = sub.add_parser("losses-check", help="verify loss gradients numerically")
    l.add_argument("--tau", type=float, default=0.2, help="temperature (default 0.2)")
    l.add_argument("--trials", type=int, default=100, help="instances per loss")
    l.add_argument("--seed", type=int, default=0)
    l.set_defaults(func=run_losses_check)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("COARSECROP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK
    cfg = RunConfig(command=args.command)
    for name, value in vars(args).items():
        if name not in ("command", "func") and hasattr(cfg, name):
            setattr(cfg, name, value)
    if cfg.top_n < 1:
        print("coarsecrop: error: --top-n must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(cfg)
    except ConfigError as e:
        print(f"coarsecrop: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (AnnotationError, ManifestVersionError, FeatureFileError,
            FileNotFoundError, NotADirectoryError, ValueError) as e:
        print(f"coarsecrop: error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
