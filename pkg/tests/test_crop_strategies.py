import numpy as np
import pytest

from coarsecrop.anchor_engine import AnchorConfig, ScoredBox, select_crops
from coarsecrop.crop_strategies import (
    POOR_DRAW_BUDGET,
    StrategyKind,
    StrategySpec,
    grid_crop,
    gt_crop,
    gtpad_crop,
    image_crop,
    our_crop,
    poor_crop,
)
from coarsecrop.objectness_eval import InstanceMask
from coarsecrop.tensor_core import ScoreMap


def count_true_loops(bitmap, box):
    ix1, iy1, ix2, iy2 = box.pixel_bounds()
    n = 0
    for i in range(iy1, iy2):
        for j in range(ix1, ix2):
            if bitmap[i, j]:
                n += 1
    return n


# ---------------------------------------------------------------------------
# image / grid


def test_image_crop_is_full_frame():
    cs = image_crop(1, 480, 640)
    assert [b.coords() for b in cs.boxes] == [(0.0, 0.0, 640.0, 480.0)]
    assert cs.boxes[0].area == 480 * 640
    tiny = image_crop(2, 1, 1)
    assert tiny.boxes[0].coords() == (0.0, 0.0, 1.0, 1.0)


def test_grid_crop_divisible_case():
    cs = grid_crop(1, 400, 600)
    assert [b.coords() for b in cs.boxes] == [
        (0.0, 0.0, 200.0, 200.0), (200.0, 0.0, 400.0, 200.0), (400.0, 0.0, 600.0, 200.0),
        (0.0, 200.0, 300.0, 400.0), (300.0, 200.0, 600.0, 400.0),
    ]


def test_grid_crop_remainders_go_to_last_cell():
    cs = grid_crop(1, 401, 601)
    widths_top = [b.width for b in cs.boxes[:3]]
    widths_bottom = [b.width for b in cs.boxes[3:]]
    assert widths_top == [200.0, 200.0, 201.0]
    assert widths_bottom == [300.0, 301.0]
    assert [b.height for b in cs.boxes] == [200.0, 200.0, 200.0, 201.0, 201.0]


def test_grid_crop_partitions_every_image():
    rng = np.random.default_rng(73)
    for _ in range(40):
        H = int(rng.integers(2, 500))
        W = int(rng.integers(6, 500))
        boxes = grid_crop(1, H, W).boxes
        assert len(boxes) == 5
        assert sum(b.area for b in boxes) == H * W
        paint = np.zeros((H, W), dtype=np.int32)
        for b in boxes:
            x1, y1, x2, y2 = (int(v) for v in b.coords())
            paint[y1:y2, x1:x2] += 1
        assert paint.min() == 1 and paint.max() == 1


def test_grid_crop_rejects_tiny_images():
    with pytest.raises(ValueError):
        grid_crop(1, 1, 100)
    with pytest.raises(ValueError):
        grid_crop(1, 100, 5)


# ---------------------------------------------------------------------------
# gt / gtpad


def test_gt_crop_copies_boxes_in_order():
    boxes = [ScoredBox(1, 2, 3, 4), ScoredBox(5, 6, 9, 9), ScoredBox(0, 0, 2, 2)]
    cs = gt_crop(4, boxes)
    assert list(cs.boxes) == boxes
    assert cs.warnings == ()


def test_gt_crop_empty_is_flagged():
    cs = gt_crop(4, [])
    assert cs.boxes == ()
    assert cs.warnings


def test_gtpad_zero_ratio_equals_gt():
    boxes = [ScoredBox(10, 10, 60, 40), ScoredBox(100, 5, 140, 95)]
    padded = gtpad_crop(1, boxes, 200, 300, pad_ratio=0.0)
    assert [b.coords() for b in padded.boxes] == [b.coords() for b in boxes]


def test_gtpad_expands_by_ratio():
    cs = gtpad_crop(1, [ScoredBox(100, 100, 200, 200)], 1000, 1000, pad_ratio=0.5)
    assert cs.boxes[0].coords() == (50.0, 50.0, 250.0, 250.0)


def test_gtpad_clips_at_corners():
    cs = gtpad_crop(1, [ScoredBox(0, 0, 100, 100)], 120, 120, pad_ratio=0.5)
    assert cs.boxes[0].coords() == (0.0, 0.0, 120.0, 120.0)


# ---------------------------------------------------------------------------
# poor


def dither_mask(H, W, period=5):
    """Exactly one object pixel per `period` pixels, evenly spread."""
    m = np.zeros(H * W, dtype=bool)
    m[::period] = True
    return InstanceMask(m.reshape(H, W))


def test_poor_crop_easy_band_fills_quota():
    mask = dither_mask(200, 200)  # 20% everywhere at box scale
    cs = poor_crop(9, mask, band=(0.15, 0.25), n=5, seed=123)
    assert len(cs.boxes) == 5
    assert cs.warnings == ()
    for b in cs.boxes:
        o = count_true_loops(mask.bitmap, b) / ((b.x2 - b.x1) * (b.y2 - b.y1))
        assert 0.15 <= o <= 0.25


def test_poor_crop_infeasible_exhausts_budget():
    mask = InstanceMask(np.zeros((128, 128), dtype=bool))
    cs = poor_crop(9, mask, band=(0.15, 0.25), n=3, seed=1)
    assert cs.boxes == ()
    assert any(str(POOR_DRAW_BUDGET) in w for w in cs.warnings)


def test_poor_crop_is_seed_deterministic():
    rng = np.random.default_rng(79)
    mask = InstanceMask(rng.random((160, 160)) < 0.2)
    a = poor_crop(9, mask, n=4, seed=42)
    b = poor_crop(9, mask, n=4, seed=42)
    c = poor_crop(9, mask, n=4, seed=43)
    assert a.boxes == b.boxes
    assert a.boxes != c.boxes


def test_poor_crop_rejects_tiny_images():
    with pytest.raises(ValueError):
        poor_crop(1, InstanceMask(np.zeros((16, 100), dtype=bool)))


# ---------------------------------------------------------------------------
# our + shared plumbing


def test_our_crop_delegates_to_select_crops():
    v = np.zeros((128, 128))
    v[32:96, 32:96] = 1.0
    sm = ScoreMap(v)
    cfg = AnchorConfig(top_n=3)
    cs = our_crop(5, sm, cfg)
    assert list(cs.boxes) == select_crops(sm, cfg)
    assert cs.strategy.kind is StrategyKind.OUR


def test_all_strategies_emit_valid_boxes_within_bounds():
    H, W = 96, 160
    rng = np.random.default_rng(83)
    mask = InstanceMask(rng.random((H, W)) < 0.2)
    sm = ScoreMap(rng.uniform(0.0, 1.0, (H, W)))
    gt = [ScoredBox(10, 10, 50, 60)]
    crop_sets = [
        image_crop(1, H, W),
        grid_crop(1, H, W),
        gt_crop(1, gt),
        gtpad_crop(1, gt, H, W, 0.4),
        poor_crop(1, mask, n=2, seed=7),
        our_crop(1, sm),
    ]
    for cs in crop_sets:
        for b in cs.boxes:
            assert 0.0 <= b.x1 < b.x2 <= W
            assert 0.0 <= b.y1 < b.y2 <= H
            assert 0.0 <= b.score <= 1.0


def test_strategy_spec_validation():
    with pytest.raises(ValueError):
        StrategySpec(StrategyKind.GTPAD, pad_ratio=-0.1)
    with pytest.raises(ValueError):
        StrategySpec(StrategyKind.POOR, poor_band=(0.5, 0.4))
    with pytest.raises(ValueError):
        StrategySpec(StrategyKind.POOR, poor_band=(-0.1, 0.4))


def test_strategy_config_dict_carries_relevant_params():
    gtpad = StrategySpec(StrategyKind.GTPAD, pad_ratio=0.4)
    assert gtpad.config_dict() == {"kind": "gtpad", "pad_ratio": 0.4}
    poor = StrategySpec(StrategyKind.POOR, poor_band=(0.1, 0.3), seed=5)
    assert poor.config_dict()["poor_band"] == [0.1, 0.3]
    our = StrategySpec(StrategyKind.OUR, anchors=AnchorConfig(top_n=7))
    assert our.config_dict()["anchors"]["top_n"] == 7
    assert image_crop(1, 10, 10).strategy.config_dict() == {"kind": "image"}
