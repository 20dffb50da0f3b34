import numpy as np
import pytest

from coarsecrop.anchor_engine import (
    MIN_CLIPPED_SIDE,
    AnchorConfig,
    ScoredBox,
    generate_anchors,
    nms,
    raw_anchors,
    score_anchors,
    select_crops,
)
from coarsecrop.tensor_core import ScoreMap, build_sat


# ---------------------------------------------------------------------------
# Oracles


def naive_box_mean(values, box):
    """Mean score over the rounded pixel rectangle, by direct summation."""
    H, W = values.shape
    ix1, iy1, ix2, iy2 = box.pixel_bounds()
    ix1, iy1 = max(ix1, 0), max(iy1, 0)
    ix2, iy2 = min(ix2, W), min(iy2, H)
    acc = 0.0
    for i in range(iy1, iy2):
        for j in range(ix1, ix2):
            acc += float(values[i, j])
    return acc / ((ix2 - ix1) * (iy2 - iy1))


def iou_ref(a, b):
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    return inter / (area_a + area_b - inter)


def nms_ref(boxes, threshold):
    """O(n^2) reference: keep a box iff it clears every already-kept box."""
    order = sorted(range(len(boxes)),
                   key=lambda k: (-boxes[k].score, -boxes[k].area, boxes[k].x1, boxes[k].y1))
    kept = []
    for k in order:
        if all(iou_ref(boxes[k], boxes[j]) <= threshold for j in kept):
            kept.append(k)
    return [boxes[k] for k in kept]


def clip_filter_ref(boxes, H, W):
    """Independent restatement of the clip-then-discard rule."""
    out = []
    for b in boxes:
        x1, y1 = max(b.x1, 0.0), max(b.y1, 0.0)
        x2, y2 = min(b.x2, float(W)), min(b.y2, float(H))
        if x2 - x1 >= MIN_CLIPPED_SIDE and y2 - y1 >= MIN_CLIPPED_SIDE:
            out.append((x1, y1, x2, y2))
    return out


def random_boxes(rng, n, H=100.0, W=100.0):
    out = []
    for _ in range(n):
        x1 = rng.uniform(0, W - 2)
        y1 = rng.uniform(0, H - 2)
        out.append(ScoredBox(x1, y1,
                             x1 + rng.uniform(1, W - x1),
                             y1 + rng.uniform(1, H - y1),
                             score=float(rng.uniform(0, 1))))
    return out


# ---------------------------------------------------------------------------
# generate_anchors


def test_anchor_count_64x64_default_lattice():
    assert len(raw_anchors(64, 64, AnchorConfig())) == 12 * 2 * 2


def test_single_cell_square_anchor_clips_to_image():
    cfg = AnchorConfig(sizes=(32,), ratios=(1.0,))
    anchors = generate_anchors(32, 32, cfg)
    assert len(anchors) == 1
    assert anchors[0].coords() == (0.0, 0.0, 32.0, 32.0)


def test_pre_clip_count_and_filter_match_geometry_oracle():
    cfg = AnchorConfig()
    raw = raw_anchors(128, 96, cfg)
    assert len(raw) == 12 * 4 * 3
    kept = generate_anchors(128, 96, cfg)
    expected = clip_filter_ref(raw, 128, 96)
    assert [b.coords() for b in kept] == expected


def test_anchor_count_law_random_configs():
    rng = np.random.default_rng(31)
    cfg0 = AnchorConfig()
    for _ in range(25):
        stride = int(rng.integers(8, 65))
        H = int(rng.integers(stride, 600))
        W = int(rng.integers(stride, 600))
        cfg = AnchorConfig(sizes=cfg0.sizes, ratios=cfg0.ratios, stride=stride)
        assert len(raw_anchors(H, W, cfg)) == 12 * (H // stride) * (W // stride)


def test_anchor_area_is_size_squared_pre_clip():
    for b, (s, r) in zip(raw_anchors(32, 32, AnchorConfig()),
                         [(s, r) for s in AnchorConfig().sizes for r in AnchorConfig().ratios]):
        assert b.area == pytest.approx(s * s, rel=1e-6)
        assert b.height / b.width == pytest.approx(r, rel=1e-6)


def test_anchor_centering():
    cfg = AnchorConfig(sizes=(16,), ratios=(1.0,), stride=32)
    anchors = raw_anchors(96, 64, cfg)
    centers = sorted(((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2) for b in anchors)
    assert centers == [(16.0, 16.0), (16.0, 48.0), (16.0, 80.0),
                       (48.0, 16.0), (48.0, 48.0), (48.0, 80.0)]


def test_image_smaller_than_stride_rejected():
    with pytest.raises(ValueError):
        raw_anchors(16, 64, AnchorConfig(stride=32))


# ---------------------------------------------------------------------------
# score_anchors


def test_all_ones_map_scores_one():
    sat = build_sat(ScoreMap(np.ones((64, 64))))
    boxes = [ScoredBox(0, 0, 64, 64), ScoredBox(3, 5, 20, 40)]
    assert [b.score for b in score_anchors(boxes, sat)] == [1.0, 1.0]


def test_half_and_half_map_symmetry():
    v = np.zeros((64, 64))
    v[:, 32:] = 1.0
    sat = build_sat(ScoreMap(v))
    ones_half = score_anchors([ScoredBox(32, 0, 64, 64)], sat)[0]
    both = score_anchors([ScoredBox(0, 0, 64, 64)], sat)[0]
    assert ones_half.score == 1.0
    assert both.score == 0.5


def test_sat_scores_match_naive_means():
    rng = np.random.default_rng(37)
    v = rng.uniform(0.0, 1.0, size=(64, 64))
    sat = build_sat(ScoreMap(v))
    boxes = random_boxes(rng, 50, H=64.0, W=64.0)
    for b, scored in zip(boxes, score_anchors(boxes, sat)):
        assert scored.score == pytest.approx(naive_box_mean(v, b), rel=1e-6)


def test_score_anchors_rejects_degenerate_and_out_of_bounds():
    sat = build_sat(ScoreMap(np.ones((16, 16))))
    with pytest.raises(ValueError):
        score_anchors([ScoredBox(4.1, 4.1, 4.4, 4.4)], sat)  # rounds to zero area
    with pytest.raises(ValueError):
        score_anchors([ScoredBox(0, 0, 20, 4)], sat)


# ---------------------------------------------------------------------------
# nms


def test_nms_single_box_passes_through():
    b = ScoredBox(0, 0, 10, 10, score=0.5)
    assert nms([b], 0.5) == [b]


def test_nms_identical_boxes_keep_highest_score():
    hi = ScoredBox(0, 0, 10, 10, score=0.9)
    lo = ScoredBox(0, 0, 10, 10, score=0.8)
    assert nms([lo, hi], 0.5) == [hi]


def test_nms_matches_reference_on_random_sets():
    rng = np.random.default_rng(41)
    for _ in range(40):
        boxes = random_boxes(rng, int(rng.integers(1, 201)))
        for t in (0.3, 0.5, 0.7):
            assert nms(boxes, t) == nms_ref(boxes, t)


def test_nms_idempotent_and_bounded_overlap():
    rng = np.random.default_rng(43)
    boxes = random_boxes(rng, 150)
    for t in (0.3, 0.5, 0.7):
        kept = nms(boxes, t)
        assert nms(kept, t) == kept
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert a.iou(b) <= t
        scores = [b.score for b in kept]
        assert scores == sorted(scores, reverse=True)


def test_nms_empty_and_bad_threshold():
    assert nms([], 0.5) == []
    with pytest.raises(ValueError):
        nms([ScoredBox(0, 0, 1, 1)], 0.0)
    with pytest.raises(ValueError):
        nms([ScoredBox(0, 0, 1, 1)], 1.5)


# ---------------------------------------------------------------------------
# select_crops


def exhaustive_top1(score_values, cfg):
    """Best anchor by naive mean under the production tie-break order."""
    H, W = score_values.shape
    anchors = generate_anchors(H, W, cfg)
    scored = [(naive_box_mean(score_values, b), b) for b in anchors]
    return max(scored, key=lambda t: (t[0], t[1].area, -t[1].x1, -t[1].y1))[1]


def test_select_crops_finds_bright_blob():
    v = np.zeros((192, 192))
    v[60:100, 80:120] = 1.0  # 40x40 blob centered at (100, 80)
    cfg = AnchorConfig(top_n=1)
    top = select_crops(ScoreMap(v), cfg)[0]
    best = exhaustive_top1(v, cfg)
    assert (top.x1, top.y1, top.x2, top.y2) == best.coords()
    cx, cy = (top.x1 + top.x2) / 2, (top.y1 + top.y2) / 2
    assert abs(cx - 100.0) <= cfg.stride
    assert abs(cy - 80.0) <= cfg.stride


def test_select_crops_uniform_map_is_deterministic_tie_break():
    sm = ScoreMap(np.zeros((128, 128)))
    cfg = AnchorConfig()
    first = select_crops(sm, cfg)
    second = select_crops(sm, cfg)
    assert first == second
    assert len(first) == cfg.top_n
    anchors = generate_anchors(128, 128, cfg)
    assert first[0].area == max(b.area for b in anchors)


def test_select_crops_caps_at_survivor_count():
    sm = ScoreMap(np.zeros((32, 32)))
    cfg = AnchorConfig(sizes=(32,), ratios=(1.0,), top_n=50)
    crops = select_crops(sm, cfg)
    assert 1 <= len(crops) <= 50
    survivors = nms(score_anchors(generate_anchors(32, 32, cfg), build_sat(sm)), cfg.nms_iou)
    assert crops == survivors


def test_affine_rescale_of_raw_map_keeps_ranking():
    from coarsecrop.tensor_core import RawScoreMap, bilinear_upsample, minmax_normalize

    rng = np.random.default_rng(47)
    raw = rng.standard_normal((4, 5))
    cfg = AnchorConfig()
    outputs = []
    for alpha, beta in [(1.0, 0.0), (3.5, 10.0), (0.2, -7.0)]:
        normalized = minmax_normalize(RawScoreMap(alpha * raw + beta))
        sm = bilinear_upsample(normalized, 128, 160)
        outputs.append(select_crops(sm, cfg))
    base = outputs[0]
    for other in outputs[1:]:
        assert [b.coords() for b in other] == [b.coords() for b in base]
        for a, b in zip(base, other):
            assert b.score == pytest.approx(a.score, abs=1e-9)


def test_scored_box_validation():
    with pytest.raises(ValueError):
        ScoredBox(5, 0, 5, 10)
    with pytest.raises(ValueError):
        ScoredBox(0, 0, 1, 1, score=1.5)
    with pytest.raises(ValueError):
        AnchorConfig(sizes=())
    with pytest.raises(ValueError):
        AnchorConfig(nms_iou=0.0)


def test_pixel_bounds_rounding():
    assert ScoredBox(0.5, 1.49, 10.5, 12.51).pixel_bounds() == (1, 1, 11, 13)
    assert ScoredBox(-6.63, -0.5, 38.6, 31.4).pixel_bounds() == (-7, -1, 39, 31)
