"""Walk through the crop pipeline on one synthetic scene.

Every stage is shown on real arrays: feature tensor -> channel sum ->
normalization -> bilinear upsampling -> anchor scoring -> NMS -> top-5
crops, with the overlay images written next to this script.
"""

from pathlib import Path

from coarsecrop import AnchorConfig, channel_sum, minmax_normalize, bilinear_upsample
from coarsecrop.anchor_engine import generate_anchors, nms, score_anchors
from coarsecrop.dataset_io import emit_overlay
from coarsecrop.synth_oracle import SceneSpec, generate_scene, oracle_features
from coarsecrop.tensor_core import build_sat

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# A 256 x 320 scene with a couple of objects and a flat background. The
# generator also returns the exact object mask, which we use here as an
# idealized feature source (per-cell object density).
spec = SceneSpec(seed=7, n_objects=(2, 3))
image, mask, gt_boxes = generate_scene(spec)
print(f"scene: {spec.width}x{spec.height}, {len(gt_boxes)} objects, "
      f"{mask.total} object pixels")

# Stage 1: features. In production these come from a conv backbone (CCFT
# files or the seeded random extractor); the oracle features make the
# walkthrough exact.
features = oracle_features(mask, stride=32)
print(f"feature tensor: {features.d} x {features.h} x {features.w}")

# Stage 2: collapse channels, normalize to [0, 1], upsample to image size.
raw = channel_sum(features)
normalized = minmax_normalize(raw)
score_map = bilinear_upsample(normalized, spec.height, spec.width)
print(f"score map: {score_map.H} x {score_map.W}, "
      f"range [{score_map.values.min():.2f}, {score_map.values.max():.2f}]")

# Stage 3: the anchor lattice. 12 anchors per feature cell (4 sizes x 3
# aspect ratios), clipped to the image.
cfg = AnchorConfig()
anchors = generate_anchors(spec.height, spec.width, cfg)
print(f"anchors after clipping: {len(anchors)}")

# Stage 4: score every anchor with its mean map value (O(1) per box via the
# summed-area table), then greedily de-duplicate with NMS.
scored = score_anchors(anchors, build_sat(score_map))
survivors = nms(scored, cfg.nms_iou)
crops = survivors[: cfg.top_n]
print("top-5 crops (x1, y1, x2, y2, score):")
for box in crops:
    print(f"  ({box.x1:6.1f}, {box.y1:6.1f}, {box.x2:6.1f}, {box.y2:6.1f})  "
          f"{box.score:.3f}")

score_path, boxes_path = emit_overlay(image, score_map, crops, out_dir / "walkthrough")
print(f"overlays written: {score_path.name}, {boxes_path.name}")
