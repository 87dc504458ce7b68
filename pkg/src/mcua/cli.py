"""Command-line front end: generate, train, evaluate, sweep, report.

Every config key is also a flag (``--context-epochs 5``); flags override a
``--config`` file, which overrides the profile defaults. Each run writes
``run_record_<command>.txt`` into the run directory; passing that file back
as ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import evaluation as ev
from .config import RunConfig, dump_config, load_config, parse_value
from .ensemble import STATIC
from .errors import MCUAError, ValidationError
from .metrics import stratified_kfold
from .patches import dump_patches, extract_patches, resize_image
from .pipeline import FoldOutput, load_roster, read_roster, scale_specs, train_roster
from .synth import SynthSpec, generate_dataset, load_dataset, load_images

log = logging.getLogger("mcua")

COMMANDS = ("generate", "train", "evaluate", "sweep", "report")


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file (a run record works too)")
    p.add_argument("-v", "--verbose", action="store_true")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            p.add_argument(flag, dest=f.name, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def build_parser():
    parser = argparse.ArgumentParser(prog="mcua", description="Uncertainty-gated dynamic ensembles of context-aware CNNs.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write the synthetic dataset to data_dir",
        "train": "train backbones and context models for every cross-validation fold",
        "evaluate": "score trained folds at one delta, or statically",
        "sweep": "score trained folds over the whole delta grid",
        "report": "render sweep.csv and roc.csv as SVG charts",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _add_config_flags(p)
        if name == "evaluate":
            mode = p.add_mutually_exclusive_group()
            mode.add_argument("--static", action="store_true", help="static ensemble (every model selected)")
            mode.add_argument("--sweep", action="store_true", help="also write sweep.csv over delta_grid")
    return parser


def resolve_config(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = parse_value(f.name, value)
    return load_config(args.config, overrides)


def write_run_record(cfg: RunConfig, command):
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / f"run_record_{command}.txt"
    path.write_text(f"# mcua {command}\n" + dump_config(cfg))
    return path


# -- commands ------------------------------------------------------------------


def cmd_generate(cfg: RunConfig):
    spec = SynthSpec(width=cfg.image_width, height=cfg.image_height, noise=cfg.synth_noise, seed=cfg.seed)
    manifest = generate_dataset(spec, cfg.n_per_class, cfg.data_dir)
    counts = ", ".join(f"{c}={n}" for c, n in zip(manifest.classes, manifest.counts()))
    print(f"wrote {len(manifest.records)} images to {cfg.data_dir} ({counts})")
    return manifest


def _dataset(cfg: RunConfig):
    if not Path(cfg.data_dir).is_dir():
        raise ValidationError(f"dataset directory {cfg.data_dir} not found; run 'mcua generate' first")
    manifest = load_dataset(cfg.data_dir)
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    images = load_images(manifest)
    if images.shape[1:3] != (cfg.image_height, cfg.image_width):
        raise ValidationError(
            f"images are {images.shape[2]}x{images.shape[1]} but the config expects {cfg.image_width}x{cfg.image_height}"
        )
    if len(manifest.classes) != cfg.num_classes:
        raise ValidationError(f"dataset has {len(manifest.classes)} classes, config expects {cfg.num_classes}")
    return manifest, images


def _fold_dirs(cfg, fold):
    base = Path(cfg.run_dir) / f"fold{fold}"
    return base / "checkpoints", base / "logs"


def _dump_patches(cfg, manifest, images):
    out = Path(cfg.run_dir) / "patches"
    for img_id, img in zip(manifest.ids, images):
        name = img_id.replace("/", "_")
        for spec, (pw, ph), stride in zip(scale_specs(cfg), cfg.patch_dims, cfg.context_strides):
            patches, _ = extract_patches(resize_image(img, spec), pw, ph, stride, name, spec.scale_id)
            dump_patches(patches, out, name, spec.scale_id)


def cmd_train(cfg: RunConfig):
    manifest, images = _dataset(cfg)
    labels = manifest.labels
    splits = stratified_kfold(labels, cfg.folds, cfg.seed)
    if cfg.dump_patches:
        _dump_patches(cfg, manifest, images)
    n_models = len(read_roster(cfg))
    for f, (tr, _) in enumerate(splits):
        ckpt, logs = _fold_dirs(cfg, f)
        t0 = time.process_time()
        roster = train_roster(cfg, images[tr], labels[tr], cfg.seed, ckpt, logs, tag=f"fold{f}")
        print(
            f"fold {f}: {len(roster.backbones)} backbones + {len(roster.models)} context models "
            f"({n_models} in roster) in {ckpt} [{time.process_time() - t0:.1f}s cpu]"
        )


def collect_folds(cfg: RunConfig):
    """Rebuild every fold's trained roster and summarize its test images."""
    manifest, images = _dataset(cfg)
    labels = manifest.labels
    ids = manifest.ids
    out = []
    for f, (_, te) in enumerate(stratified_kfold(labels, cfg.folds, cfg.seed)):
        ckpt, _ = _fold_dirs(cfg, f)
        if not ckpt.is_dir():
            raise ValidationError(f"no checkpoints for fold {f} in {ckpt}; run 'mcua train' first")
        roster = load_roster(cfg, ckpt, cfg.seed)
        test_ids = [ids[i] for i in te]
        summaries = roster.summarize(images[te], test_ids)
        out.append(FoldOutput(f, te, test_ids, labels[te], summaries, roster.patch_majority(images[te])))
    return manifest, out


def cmd_evaluate(cfg: RunConfig, static=False, sweep=False):
    manifest, folds = collect_folds(cfg)
    delta = STATIC if static else cfg.delta
    result = ev.evaluate(folds, delta, cfg.num_classes)
    baseline = ev.baseline_report(folds, cfg.num_classes)
    rows = ev.sweep(folds, cfg.delta_grid) if sweep else None
    ev.save_all(cfg.run_dir, folds, result, cfg.num_classes, rows, baseline)
    print(ev.summary_table(result, manifest.classes, baseline))
    if rows is not None:
        print(_sweep_text(rows))
    return result, rows


def _sweep_text(rows):
    lines = [f"  {'delta':>8}{'WA_ACC':>10}{'Abs %':>9}{'excl.':>7}{'excl. acc':>11}"]
    for r in rows:
        wa = "   no cov." if r.wa_acc_included is None else f"{r.wa_acc_included:>10.4f}"
        ex = "NA" if r.wa_acc_excluded_static is None else f"{r.wa_acc_excluded_static:.4f}"
        lines.append(f"  {r.delta:>8g}{wa:>10}{r.abs_pct:>9.2f}{r.excluded:>7d}{ex:>11}")
    return "\n".join(lines)


def cmd_report(cfg: RunConfig):
    from .report import render_report

    paths = render_report(cfg.run_dir)
    for p in paths:
        print(f"wrote {p}")
    return paths


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve_config(args)
        write_run_record(cfg, args.command)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, static=args.static, sweep=args.sweep)
        elif args.command == "sweep":
            cmd_evaluate(cfg, sweep=True)
        else:
            cmd_report(cfg)
    except MCUAError as exc:
        print(f"mcua {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mcua {args.command}: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
