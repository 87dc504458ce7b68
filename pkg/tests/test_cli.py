import csv

import numpy as np
import pytest

from mcua.checkpoint import load_checkpoint
from mcua.cli import build_parser, main
from mcua.config import DEFAULT_DELTA_GRID, load_config

ROSTER = """# six models over two backbones
arch-A.s1.P2_S1
arch-A.s1.P3_S1
arch-A.s1.P4_S2
arch-B.s1.P2_S1
arch-B.s1.P3_S1
arch-B.s1.P5_S1
"""


def tiny_flags(tmp_path, run="run"):
    roster = tmp_path / "roster.txt"
    roster.write_text(ROSTER)
    return [
        "--data-dir", str(tmp_path / "data"), "--run-dir", str(tmp_path / run),
        "--n-per-class", "4", "--folds", "2", "--roster", str(roster),
        "--backbones", "arch-A@1,arch-B@1",
        "--backbone-epochs", "1", "--backbone-aug-versions", "1",
        "--context-epochs", "2", "--context-batch-size", "4", "--mc-passes", "4",
    ]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    flags = tiny_flags(tmp)
    assert main(["generate"] + flags) == 0
    assert main(["train"] + flags) == 0
    return tmp, flags


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_train_writes_one_checkpoint_per_model(trained):
    tmp, _ = trained
    for f in (0, 1):
        ckpts = sorted(p.name for p in (tmp / "run" / f"fold{f}" / "checkpoints").iterdir())
        context = [c for c in ckpts if c.count(".") == 3]
        assert len(context) == 6
        assert sorted(set(ckpts) - set(context)) == ["arch-A.s1.ckpt", "arch-B.s1.ckpt"]
        logs = list((tmp / "run" / f"fold{f}" / "logs").glob("*.loss.csv"))
        assert len(logs) == 8
    state = load_checkpoint(tmp / "run" / "fold0" / "checkpoints" / "arch-A.s1.P2_S1.ckpt")
    assert all(np.isfinite(v).all() for v in state.values())


def test_evaluate_outputs(trained, capsys):
    tmp, flags = trained
    assert main(["evaluate", "--delta", "0.05"] + flags) == 0
    out = capsys.readouterr().out
    assert "WA_ACC" in out and "baseline" in out
    dec = rows(tmp / "run" / "decisions.csv")
    assert len(dec) == 16
    assert sum(1 for k in dec[0] if k.startswith("sigma:")) == 6
    assert all(r["delta"] == "0.05" for r in dec)
    assert all((r["predicted"] == "ABSTAIN") == (r["selected"] == "0") for r in dec)
    metrics = rows(tmp / "run" / "metrics.csv")
    assert {r["mode"] for r in metrics} >= {"dynamic", "patch-majority"}


def test_static_evaluation_never_abstains(trained):
    tmp, flags = trained
    assert main(["evaluate", "--static"] + flags) == 0
    dec = rows(tmp / "run" / "decisions.csv")
    assert all(r["delta"] == "inf" and r["predicted"] != "ABSTAIN" for r in dec)
    assert all(r["selected"] == "6" for r in dec)


def test_sweep_and_report(trained, capsys):
    tmp, flags = trained
    assert main(["sweep"] + flags) == 0
    assert "WA_ACC" in capsys.readouterr().out
    sweep = rows(tmp / "run" / "sweep.csv")
    assert [float(r["delta"]) for r in sweep] == list(DEFAULT_DELTA_GRID)
    abs_pct = [float(r["abs_pct"]) for r in sweep]
    assert all(a >= b for a, b in zip(abs_pct, abs_pct[1:]))
    assert main(["report"] + flags) == 0
    for name in ("sweep.svg", "roc.svg"):
        assert (tmp / "run" / name).read_text().lstrip().startswith("<?xml")


def test_run_record_round_trips(trained):
    tmp, flags = trained
    rec = tmp / "run" / "run_record_train.txt"
    cfg = load_config(rec)
    assert cfg.n_per_class == 4 and cfg.folds == 2 and cfg.mc_passes == 4
    assert cfg.backbones == ("arch-A@1", "arch-B@1")


def test_exit_codes(tmp_path, capsys):
    flags = tiny_flags(tmp_path)
    # no dataset yet: validation error
    assert main(["train"] + flags) == 2
    assert "mcua generate" in capsys.readouterr().err
    assert main(["generate", "--dropout", "1.5", "--run-dir", str(tmp_path / "r")]) == 2
    assert main(["generate", "--config", str(tmp_path / "missing.cfg"), "--run-dir", str(tmp_path / "r")]) == 3
    assert main(["generate"] + flags) == 0
    # trained checkpoints missing
    assert main(["evaluate"] + flags) == 2
    assert main(["report"] + flags) == 3
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bogus"])


def test_bool_flag_forms(tmp_path):
    p = build_parser()
    assert p.parse_args(["train", "--dump-patches"]).dump_patches == "true"
    assert p.parse_args(["train", "--dump-patches", "false"]).dump_patches == "false"
    assert p.parse_args(["train"]).dump_patches is None
