import numpy as np
import pytest

from mcua.checkpoint import load_checkpoint, save_checkpoint
from mcua.errors import NumericError, ValidationError
from mcua.optim import AdamState, adam_step


def test_zero_learning_rate_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    before = p["w"].copy()
    adam_step(p, {"w": np.array([0.5, 0.3])}, AdamState(learning_rate=0.0))
    assert np.array_equal(p["w"], before)


@pytest.mark.parametrize("g", [3.0, -0.02, 1e3])
def test_first_step_is_lr_times_sign(g):
    p = {"w": np.array([0.0])}
    state = AdamState(learning_rate=0.01)
    adam_step(p, {"w": np.array([g])}, state)
    # bias-corrected first step: lr * g / (|g| + eps)
    expected = -0.01 * g / (abs(g) + 1e-8)
    assert p["w"][0] == pytest.approx(expected, rel=1e-12)
    assert state.step_count == 1


def test_descends_quadratic():
    p = {"w": np.array([1.0])}
    state = AdamState(learning_rate=0.1)
    for _ in range(100):
        adam_step(p, {"w": 2 * p["w"]}, state)
    assert abs(p["w"][0]) < 0.5


def test_nonfinite_gradient_leaves_state():
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = AdamState()
    with pytest.raises(NumericError):
        adam_step(p, {"a": np.array([1.0]), "b": np.array([np.nan])}, state)
    assert p["a"][0] == 1.0 and state.step_count == 0 and not state.m


def test_bad_betas():
    with pytest.raises(ValidationError):
        AdamState(beta1=1.0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    state = {"0.weight": rng.normal(size=(4, 3, 3, 3)), "1.running_var": rng.uniform(size=4), "s": np.array(2.5)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(state)
    for k in state:
        np.testing.assert_array_equal(loaded[k], state[k].astype(np.float32).astype(np.float64))
    raw = path.read_bytes()
    assert raw[:4] == b"MCUA"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 3
    save_checkpoint(tmp_path / "again.ckpt", loaded)
    assert (tmp_path / "again.ckpt").read_bytes() == raw


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE1234")
    with pytest.raises(ValidationError):
        load_checkpoint(path)
    save_checkpoint(path, {"w": np.ones(3)})
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(ValidationError):
        load_checkpoint(path)
