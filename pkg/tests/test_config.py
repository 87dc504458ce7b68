import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcua.config import (
    DEFAULT_DELTA_GRID,
    PAPER_PROFILE,
    RunConfig,
    dump_config,
    load_config,
    parse_config_text,
    resolve,
)
from mcua.errors import DataIOError, ValidationError


def test_desk_defaults():
    cfg = RunConfig()
    assert cfg.profile == "desk"
    assert cfg.scale_dims == [(64, 48), (42, 32)]
    assert cfg.patch_dims == [(32, 32), (24, 16)]
    assert cfg.backbone_ids == ["arch-A.s1", "arch-A.s2", "arch-B.s1"]
    assert cfg.mc_passes == 50 and cfg.folds == 5
    assert cfg.delta_grid == DEFAULT_DELTA_GRID
    assert DEFAULT_DELTA_GRID[0] == 0.001 and DEFAULT_DELTA_GRID[-1] == 1.75


def test_full_size_profile_values():
    cfg = resolve({"profile": "paper"})
    assert cfg.scale_dims == [(448, 336), (296, 224)]
    assert cfg.patch_dims == [(224, 224), (224, 224)]
    assert cfg.context_strides == (112, 9)
    assert cfg.backbone_train_strides == (28, 9) and cfg.backbone_test_strides == (56, 18)
    assert (cfg.dropout, cfg.backbone_lr, cfg.context_lr) == (0.7, 1e-4, 1e-4)
    assert (cfg.backbone_epochs, cfg.context_epochs) == (5, 10)
    assert (cfg.backbone_batch_size, cfg.context_batch_size) == (32, 8)
    assert set(PAPER_PROFILE) <= {f.name for f in dataclasses.fields(RunConfig)}


def test_file_then_flags_precedence(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nseed = 3\ncontext-epochs = 4\nscales = 64x48, 40x30\n")
    cfg = load_config(p, {"seed": 9})
    assert cfg.seed == 9 and cfg.context_epochs == 4
    assert cfg.scales == ("64x48", "40x30")


def test_unknown_and_malformed_keys_rejected(tmp_path):
    with pytest.raises(ValidationError, match="unknown key"):
        parse_config_text("learning_rate = 0.1")
    with pytest.raises(ValidationError):
        parse_config_text("seed: 3")
    with pytest.raises(ValidationError):
        parse_config_text("seed = three")
    with pytest.raises(ValidationError):
        parse_config_text("dump_patches = maybe")
    with pytest.raises(DataIOError):
        load_config(tmp_path / "nope.cfg")


def test_validation():
    with pytest.raises(ValidationError):
        RunConfig(profile="laptop")
    with pytest.raises(ValidationError):
        RunConfig(patch_sizes=("32",))  # one entry per scale
    with pytest.raises(ValidationError):
        RunConfig(patch_sizes=("80", "24x16"))
    with pytest.raises(ValidationError):
        RunConfig(dropout=1.0)
    with pytest.raises(ValidationError):
        RunConfig(mc_passes=1)
    with pytest.raises(ValidationError):
        RunConfig(delta_grid=(0.1, 0.01))
    with pytest.raises(ValidationError):
        RunConfig(backbones=("arch-A@3",))
    with pytest.raises(ValidationError):
        RunConfig(scales=("64by48", "42x32"))


def test_dump_round_trip():
    cfg = RunConfig(seed=11, delta=0.006, dump_patches=True, roster="r.txt")
    assert resolve(parse_config_text(dump_config(cfg))) == cfg
    paper = resolve({"profile": "paper"})
    assert resolve(parse_config_text(dump_config(paper))) == paper


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    dropout=st.floats(0, 0.95),
    delta=st.floats(1e-6, 10, allow_nan=False),
    z=st.integers(2, 500),
)
def test_dump_round_trip_random(seed, dropout, delta, z):
    cfg = RunConfig(seed=seed, dropout=dropout, delta=delta, mc_passes=z)
    assert resolve(parse_config_text(dump_config(cfg))) == cfg
