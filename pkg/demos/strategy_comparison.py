"""Compare every cropping strategy on one synthetic corpus.

Builds 40 seeded scenes, crops each with all six strategies, and prints the
mean objectness plus the poor/coarse/precise split per strategy, in the
same shape the `evaluate` subcommand reports.
"""

from coarsecrop import AnchorConfig, channel_sum, minmax_normalize, bilinear_upsample
from coarsecrop.crop_strategies import (
    grid_crop,
    gt_crop,
    gtpad_crop,
    image_crop,
    our_crop,
    poor_crop,
)
from coarsecrop.dataset_io import format_summary
from coarsecrop.objectness_eval import strategy_report
from coarsecrop.synth_oracle import SceneSpec, generate_scene, oracle_features

N_SCENES = 40
H, W = 256, 320

masks = {}
crop_sets = {"image": [], "grid": [], "gt": [], "gtpad": [], "poor": [], "our": []}

for seed in range(N_SCENES):
    spec = SceneSpec(seed=seed, height=H, width=W, n_objects=(1, 3))
    _, mask, gt_boxes = generate_scene(spec)
    masks[seed] = mask

    # The deterministic baselines.
    crop_sets["image"].append(image_crop(seed, H, W))
    crop_sets["grid"].append(grid_crop(seed, H, W))
    crop_sets["gt"].append(gt_crop(seed, gt_boxes))
    crop_sets["gtpad"].append(gtpad_crop(seed, gt_boxes, H, W, pad_ratio=0.3))

    # Low-objectness rejection sampling, seeded per image.
    crop_sets["poor"].append(poor_crop(seed, mask, band=(0.15, 0.25), n=5, seed=seed))

    # The anchor pipeline, driven here by oracle (mask-density) features so
    # the comparison isolates the cropping logic from feature quality.
    score_map = bilinear_upsample(minmax_normalize(channel_sum(
        oracle_features(mask, 32))), H, W)
    crop_sets["our"].append(our_crop(seed, score_map, AnchorConfig()))

reports = [strategy_report(sets, masks) for sets in crop_sets.values()]
print(f"{N_SCENES} scenes, {H}x{W}\n")
print(format_summary(reports))
print("\ngt is pure object except for the corners of ellipse boxes; grid and")
print("image pick up whatever objectness the layout gives them; the anchor")
print("pipeline concentrates its crops on object regions and starves the")
print("poor bucket.")
