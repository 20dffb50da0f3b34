"""Exporter tests: the CCFT contract is validated with the primary toolkit's
own loader, which must be installed alongside (pip install -e ../).
"""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from ccft_exporter.export import ExportConfig, ExportError, export_corpus, load_backbone

from coarsecrop.feature_provider import ExternalFeatureSource, load_feature_file

SIZES = [
    (224, 224), (160, 192), (96, 64), (130, 70), (64, 257),
    (224, 96), (33, 33), (128, 128), (100, 224), (191, 191),
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(17)
    for k, (h, w) in enumerate(SIZES, start=1):
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        Image.fromarray(img).save(root / f"{k:06d}.png")
    Image.fromarray(np.zeros((64, 64, 3), dtype=np.uint8)).save(root / "black.png")
    (root / "broken.png").write_bytes(b"not an image at all")
    return root


@pytest.fixture(scope="module")
def exported(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("features")
    cfg = ExportConfig(corpus=corpus, out=out, backbone="resnet18", batch_size=3)
    index_path = export_corpus(cfg)
    return out, index_path


def test_export_writes_index_and_skips_unreadable(exported):
    out, index_path = exported
    index = json.loads(index_path.read_text())
    assert index["stride"] == 32
    assert index["layer"] == "layer4"
    # 10 sized images + the black one; the broken file is skipped.
    assert len(index["images"]) == 11
    assert "broken" not in index["images"]


def test_emitted_files_load_in_primary_toolkit_with_correct_dims(exported):
    out, index_path = exported
    index = json.loads(index_path.read_text())
    for k, (h, w) in enumerate(SIZES, start=1):
        entry = index["images"][str(k)]
        fm = load_feature_file(out / entry["path"])  # primary toolkit's loader
        assert (fm.d, fm.h, fm.w) == (512, h // 32, w // 32)
        assert np.all(np.isfinite(fm.values))


def test_external_source_round_trip(exported):
    out, _ = exported
    source = ExternalFeatureSource(out)
    fm = source.features_for(1)
    assert (fm.h, fm.w) == (224 // 32, 224 // 32)


def test_constant_black_image_gives_finite_features(exported):
    out, index_path = exported
    index = json.loads(index_path.read_text())
    entry = index["images"]["black"]
    fm = load_feature_file(out / entry["path"])
    assert np.all(np.isfinite(fm.values))


def test_resnet50_dims_at_224(tmp_path):
    rng = np.random.default_rng(23)
    (tmp_path / "images").mkdir()
    img = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    Image.fromarray(img).save(tmp_path / "images" / "1.png")
    cfg = ExportConfig(corpus=tmp_path / "images", out=tmp_path / "out")
    export_corpus(cfg)
    fm = load_feature_file(tmp_path / "out" / "1.ccft")
    assert (fm.d, fm.h, fm.w) == (2048, 7, 7)


def test_checkpoint_round_trip_and_mismatch(tmp_path):
    import torchvision.models

    model = torchvision.models.resnet18(weights=None)
    good = tmp_path / "good.pt"
    torch.save({"state_dict": {f"module.{k}": v for k, v in model.state_dict().items()}},
               good)
    cfg = ExportConfig(corpus=tmp_path, out=tmp_path, backbone="resnet18",
                       checkpoint=good)
    trunk = load_backbone(cfg)
    ref = model.state_dict()["conv1.weight"]
    got = trunk.state_dict()["0.weight"]
    assert torch.equal(ref, got)

    bad = tmp_path / "bad.pt"
    torch.save({"completely": torch.zeros(1), "different": torch.ones(1)}, bad)
    with pytest.raises(ExportError, match="no parameter names"):
        load_backbone(ExportConfig(corpus=tmp_path, out=tmp_path,
                                   backbone="resnet18", checkpoint=bad))


def test_bad_config_aborts(tmp_path):
    with pytest.raises(ExportError, match="unknown backbone"):
        load_backbone(ExportConfig(corpus=tmp_path, out=tmp_path, backbone="nosuchnet"))
    with pytest.raises(ExportError, match="corpus"):
        export_corpus(ExportConfig(corpus=tmp_path / "missing", out=tmp_path))
