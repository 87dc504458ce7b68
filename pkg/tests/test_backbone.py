import numpy as np
import pytest

from mcua.backbone import (
    Backbone,
    BackboneSpec,
    extract_feature_maps,
    fine_tune,
    predict_patch,
)
from mcua.errors import ValidationError
from mcua.patches import extract_patches


@pytest.mark.parametrize(
    "arch,size,shape",
    [
        ("arch-A", 32, (4, 6, 6)),
        ("arch-B", 32, (4, 6, 6)),
        ("arch-A", (24, 16), (4, 2, 4)),
        ("arch-B", (24, 16), (4, 2, 4)),
    ],
)
def test_feature_shapes(arch, size, shape):
    spec = BackboneSpec(arch, 1, size)
    assert spec.feature_shape == shape
    b = Backbone(spec, np.random.default_rng(0))
    pw, ph = spec.patch_size
    x = np.random.default_rng(1).random((3, ph, pw, 3))
    assert b.feature_maps(x).shape == (3,) + shape


def test_square_int_is_normalized_and_ids():
    s = BackboneSpec("arch-B", 2, 32)
    assert s.patch_size == (32, 32) and s.backbone_id == "arch-B.s2"
    with pytest.raises(ValidationError):
        BackboneSpec("arch-C", 1, 32)


def test_wrong_patch_size_is_rejected():
    b = Backbone(BackboneSpec("arch-A", 2, (24, 16)), np.random.default_rng(0))
    with pytest.raises(ValidationError, match="24x16"):
        b.feature_maps(np.zeros((1, 24, 16, 3)))


def test_zero_head_gives_uniform_prediction():
    b = Backbone(BackboneSpec("arch-A", 1, 32), np.random.default_rng(0), zero_init_head=True)
    p = b.predict(np.random.default_rng(1).random((5, 32, 32, 3)))
    np.testing.assert_allclose(p, 0.25, atol=1e-15)
    np.testing.assert_allclose(predict_patch(b, np.zeros((32, 32, 3))), 0.25, atol=1e-15)


def test_extract_feature_maps_orders_by_grid_index():
    b = Backbone(BackboneSpec("arch-B", 1, 32), np.random.default_rng(0))
    img = np.random.default_rng(2).random((48, 64, 3))
    patches, _ = extract_patches(img, 32, 32, 16)
    fwd = extract_feature_maps(b, patches)
    rev = extract_feature_maps(b, patches[::-1])
    np.testing.assert_array_equal(fwd, rev)
    assert fwd.shape == (6, 4, 6, 6)


def test_memorizes_sixteen_patches():
    rng = np.random.default_rng(0)
    labels = np.arange(16) % 4
    x = rng.random((16, 32, 32, 3))  # pure noise: only memorization can fit it
    b = Backbone(BackboneSpec("arch-A", 1, 32), np.random.default_rng(1))
    hist = fine_tune(b, x, labels, 60, 1e-2, 8, np.random.default_rng(2))
    assert hist[-1][2] < 0.2 * hist[0][2]
    assert b.predict(x).argmax(axis=1).tolist() == labels.tolist()


def test_fine_tune_is_deterministic_and_logs(tmp_path):
    x = np.random.default_rng(0).random((8, 32, 32, 3))
    y = np.arange(8) % 4
    states = []
    for k in range(2):
        b = Backbone(BackboneSpec("arch-B", 1, 32), np.random.default_rng(1))
        with open(tmp_path / f"log{k}.csv", "w") as fh:
            fine_tune(b, x, y, 2, 1e-3, 4, np.random.default_rng(2), loss_log=fh)
        states.append(b.state_dict())
    assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])
    log = (tmp_path / "log0.csv").read_text().splitlines()
    assert len(log) == 4 and log == (tmp_path / "log1.csv").read_text().splitlines()


def test_fine_tune_input_errors():
    b = Backbone(BackboneSpec("arch-A", 1, 32), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        fine_tune(b, np.zeros((0, 32, 32, 3)), [], 1, 1e-3, 4, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        fine_tune(b, np.zeros((2, 32, 32, 3)), [0], 1, 1e-3, 4, np.random.default_rng(0))
