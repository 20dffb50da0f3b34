import struct

import numpy as np
import pytest

from coarsecrop.feature_provider import (
    CCFT_MAGIC,
    DirectoryFeatureSource,
    ExternalFeatureSource,
    FeatureFileError,
    RandomExtractorConfig,
    RandomFeatureSource,
    load_feature_file,
    parse_feature_spec,
    random_extract,
    write_feature_file,
)
from coarsecrop.tensor_core import FeatureMap


def random_feature_map(rng, d=3, h=4, w=5):
    return FeatureMap(rng.standard_normal((d, h, w)).astype(np.float32))


# ---------------------------------------------------------------------------
# CCFT files


def test_round_trip_is_bitwise_identical(tmp_path):
    rng = np.random.default_rng(89)
    fm = random_feature_map(rng)
    path = tmp_path / "t.ccft"
    write_feature_file(path, fm)
    loaded = load_feature_file(path)
    assert loaded.values.shape == fm.values.shape
    assert np.array_equal(loaded.values.view(np.uint32), fm.values.view(np.uint32))


def test_header_arithmetic_for_large_tensor(tmp_path):
    # A d=2048, h=7, w=7 header implies a 401,408-byte payload.
    path = tmp_path / "big.ccft"
    header = struct.pack("<4sHHIII", CCFT_MAGIC, 1, 1, 2048, 7, 7)
    payload = np.zeros(2048 * 7 * 7, dtype="<f4").tobytes()
    assert len(payload) == 401_408
    path.write_bytes(header + payload)
    fm = load_feature_file(path)
    assert (fm.d, fm.h, fm.w) == (2048, 7, 7)


def test_truncated_payload_error_names_byte_counts(tmp_path):
    rng = np.random.default_rng(97)
    path = tmp_path / "t.ccft"
    write_feature_file(path, random_feature_map(rng))
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(FeatureFileError, match=r"expected 240 bytes, got 233"):
        load_feature_file(path)


def test_distinct_parse_errors(tmp_path):
    rng = np.random.default_rng(101)
    good = tmp_path / "good.ccft"
    write_feature_file(good, random_feature_map(rng))
    blob = bytearray(good.read_bytes())

    bad_magic = tmp_path / "magic.ccft"
    bad_magic.write_bytes(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(FeatureFileError, match="magic"):
        load_feature_file(bad_magic)

    bad_version = tmp_path / "version.ccft"
    bad_version.write_bytes(bytes(blob[:4]) + struct.pack("<H", 9) + bytes(blob[6:]))
    with pytest.raises(FeatureFileError, match="version 9"):
        load_feature_file(bad_version)

    bad_dtype = tmp_path / "dtype.ccft"
    bad_dtype.write_bytes(bytes(blob[:6]) + struct.pack("<H", 7) + bytes(blob[8:]))
    with pytest.raises(FeatureFileError, match="dtype"):
        load_feature_file(bad_dtype)

    zero_dim = tmp_path / "zero.ccft"
    zero_dim.write_bytes(bytes(blob[:8]) + struct.pack("<III", 0, 4, 5))
    with pytest.raises(FeatureFileError, match="zero dimension"):
        load_feature_file(zero_dim)

    overflow = tmp_path / "overflow.ccft"
    overflow.write_bytes(bytes(blob[:8]) + struct.pack("<III", 2 ** 31, 2 ** 10, 2 ** 10))
    with pytest.raises(FeatureFileError, match="overflow"):
        load_feature_file(overflow)

    short = tmp_path / "short.ccft"
    short.write_bytes(b"CC")
    with pytest.raises(FeatureFileError, match="header"):
        load_feature_file(short)


def test_non_finite_payload_rejected(tmp_path):
    path = tmp_path / "nan.ccft"
    header = struct.pack("<4sHHIII", CCFT_MAGIC, 1, 1, 1, 1, 2)
    payload = np.array([1.0, np.nan], dtype="<f4").tobytes()
    path.write_bytes(header + payload)
    with pytest.raises(FeatureFileError, match="non-finite"):
        load_feature_file(path)


# ---------------------------------------------------------------------------
# random extractor


def test_random_extract_is_deterministic():
    rng = np.random.default_rng(103)
    img = rng.integers(0, 256, size=(96, 64, 3), dtype=np.uint8)
    cfg = RandomExtractorConfig(seed=5)
    a = random_extract(img, cfg)
    b = random_extract(img, cfg)
    assert np.array_equal(a.values, b.values)


def test_random_extract_zero_image_gives_zero_features():
    img = np.zeros((64, 64, 3), dtype=np.uint8)
    fm = random_extract(img, RandomExtractorConfig(seed=1))
    assert np.all(fm.values == 0.0)


def test_random_extract_output_dims():
    img = np.zeros((224, 224, 3), dtype=np.uint8)
    cfg = RandomExtractorConfig(seed=0)
    fm = random_extract(img, cfg)
    assert (fm.d, fm.h, fm.w) == (512, 7, 7)
    assert cfg.total_stride == 32


def test_random_extract_floor_division_law():
    rng = np.random.default_rng(107)
    cfg = RandomExtractorConfig(seed=2, stages=((4, 2), (8, 2), (8, 2), (8, 2), (8, 2)))
    for _ in range(6):
        H = int(rng.integers(32, 300))
        W = int(rng.integers(32, 300))
        img = rng.integers(0, 256, size=(H, W, 3), dtype=np.uint8)
        fm = random_extract(img, cfg)
        assert (fm.h, fm.w) == (H // 32, W // 32)
        assert np.all(np.isfinite(fm.values))


def test_random_extract_seed_sensitivity():
    rng = np.random.default_rng(109)
    img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    small = ((8, 2), (8, 2), (8, 2), (8, 2), (8, 2))
    a = random_extract(img, RandomExtractorConfig(seed=1, stages=small))
    b = random_extract(img, RandomExtractorConfig(seed=2, stages=small))
    assert not np.array_equal(a.values, b.values)


def test_random_extract_rejects_small_or_malformed_images():
    cfg = RandomExtractorConfig(seed=0)
    with pytest.raises(ValueError):
        random_extract(np.zeros((16, 64, 3), dtype=np.uint8), cfg)
    with pytest.raises(ValueError):
        random_extract(np.zeros((64, 64), dtype=np.uint8), cfg)


# ---------------------------------------------------------------------------
# sources


def test_directory_source_lookup(tmp_path):
    rng = np.random.default_rng(113)
    fm = random_feature_map(rng)
    write_feature_file(tmp_path / "17.ccft", fm)
    src = DirectoryFeatureSource(tmp_path)
    assert np.array_equal(src.features_for(17).values, fm.values)
    with pytest.raises(FileNotFoundError):
        src.features_for(18)


def test_external_source_reads_index(tmp_path):
    rng = np.random.default_rng(127)
    fm = random_feature_map(rng)
    (tmp_path / "blobs").mkdir()
    write_feature_file(tmp_path / "blobs" / "a.ccft", fm)
    (tmp_path / "index.json").write_text(
        '{"images": {"3": {"path": "blobs/a.ccft"}}}')
    src = ExternalFeatureSource(tmp_path)
    assert np.array_equal(src.features_for(3).values, fm.values)
    with pytest.raises(FileNotFoundError):
        src.features_for(4)


def test_parse_feature_spec_variants(tmp_path):
    (tmp_path / "feats").mkdir()
    assert isinstance(parse_feature_spec(f"file:{tmp_path / 'feats'}"), DirectoryFeatureSource)
    assert isinstance(parse_feature_spec("rand:7"), RandomFeatureSource)
    with pytest.raises(ValueError):
        parse_feature_spec("rand:xyz")
    with pytest.raises(ValueError):
        parse_feature_spec("bogus:1")
    with pytest.raises(FileNotFoundError):
        parse_feature_spec(f"external:{tmp_path / 'missing'}")
