"""End-to-end training and inference for one roster of backbones and context models."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneSpec, fine_tune
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DEFAULT_ROSTER, RunConfig
from .context import ContextModel, ContextModelSpec, train_context_model
from .ensemble import decide, summarize_passes, unavailable_summary
from .errors import DataIOError, NoContextError, ValidationError
from .patches import (
    GEOMETRIC_VARIANTS,
    ColorJitter,
    ImageScaleSpec,
    color_perturb,
    geometric_variant,
    make_grid,
    patch_array,
    resize_image,
)
from .patterns import all_placements, load_library
from .seeding import stream

log = logging.getLogger(__name__)


def read_roster(cfg: RunConfig):
    if not cfg.roster:
        return list(DEFAULT_ROSTER)
    try:
        with open(cfg.roster, encoding="utf-8") as fh:
            ids = [ln.split("#", 1)[0].strip() for ln in fh]
    except OSError as exc:
        raise DataIOError(f"cannot read roster {cfg.roster}: {exc}") from exc
    ids = [i for i in ids if i]
    if not ids:
        raise ValidationError(f"roster {cfg.roster} lists no models")
    return ids


def backbone_specs(cfg: RunConfig):
    out = {}
    for entry in cfg.backbones:
        arch, scale = entry.split("@")
        spec = BackboneSpec(arch, int(scale), cfg.patch_dims[int(scale) - 1], cfg.feature_channels, cfg.num_classes)
        out[spec.backbone_id] = spec
    return out


def context_specs(cfg: RunConfig, backbones=None):
    backbones = backbones or backbone_specs(cfg)
    library = load_library(cfg.pattern_library or None)
    specs = {}
    for model_id in read_roster(cfg):
        bid, _, pid = model_id.rpartition(".")
        if bid not in backbones:
            raise ValidationError(f"roster model {model_id}: backbone {bid!r} is not configured")
        if pid not in library:
            raise ValidationError(f"roster model {model_id}: pattern {pid!r} not in the pattern library")
        b = backbones[bid]
        spec = ContextModelSpec(
            bid, b.scale_id, library[pid], b.feature_channels, cfg.num_classes, cfg.dropout,
            tuple(cfg.context_conv_widths), tuple(cfg.context_fc_widths),
        )
        if spec.model_id in specs:
            raise ValidationError(f"roster lists {model_id} twice")
        specs[spec.model_id] = spec
    return specs


def scale_specs(cfg: RunConfig):
    return [ImageScaleSpec(i + 1, w, h) for i, (w, h) in enumerate(cfg.scale_dims)]


def context_grids(cfg: RunConfig):
    return {
        s.scale_id: make_grid(s.width, s.height, pw, ph, stride, s.scale_id)
        for s, (pw, ph), stride in zip(scale_specs(cfg), cfg.patch_dims, cfg.context_strides)
    }


def resize_all(cfg: RunConfig, images):
    return {s.scale_id: np.stack([resize_image(im, s) for im in images]) for s in scale_specs(cfg)}


def grid_patches(scaled, grid):
    """(N, a, ph, pw, 3) patches of every image on ``grid``."""
    return np.stack([patch_array(im, grid) for im in scaled])


def backbone_training_set(cfg: RunConfig, scaled, labels, spec: BackboneSpec, rng):
    """Augmented patches at the backbone training stride; each patch inherits its image label."""
    s = spec.scale_id
    pw, ph = spec.patch_size
    grid = make_grid(scaled.shape[2], scaled.shape[1], pw, ph, cfg.backbone_train_strides[s - 1], s)
    jitter = ColorJitter(cfg.jitter_brightness, cfg.jitter_contrast, cfg.jitter_channel)
    # quarter turns would transpose a non-square patch, so only half turns and flips remain
    variants = [(r, f) for r, f in GEOMETRIC_VARIANTS if pw == ph or r % 2 == 0]
    k = min(cfg.backbone_aug_versions, len(variants))
    xs, ys = [], []
    for img, y in zip(scaled, labels):
        for patch in patch_array(img, grid):
            for v in rng.choice(len(variants), size=k, replace=False):
                rot, flip = variants[v]
                xs.append(color_perturb(geometric_variant(patch, rot, flip), rng, jitter))
                ys.append(y)
    return np.stack(xs), np.array(ys, dtype=np.int64)


@dataclass
class Roster:
    cfg: RunConfig
    seed: int
    backbones: dict
    models: dict
    grids: dict
    histories: dict = field(default_factory=dict)

    def feature_maps(self, images):
        """backbone id -> (N, a, C_f, h_f, w_f) on the context grids."""
        scaled = resize_all(self.cfg, images)
        out = {}
        for bid, b in self.backbones.items():
            grid = self.grids[b.spec.scale_id]
            patches = grid_patches(scaled[b.spec.scale_id], grid)
            n, a = patches.shape[:2]
            fm = b.feature_maps(patches.reshape(n * a, *patches.shape[2:]))
            out[bid] = fm.reshape(n, a, *fm.shape[1:])
        return out

    def model_inputs(self, model: ContextModel, maps):
        """(N, P, g*C_f, h_f, w_f) placement stacks for every image."""
        grid = self.grids[model.spec.scale_id]
        placements = all_placements(grid, model.spec.pattern)
        if not placements:
            raise NoContextError(f"{model.spec.model_id}: no pattern placement fits a {grid.cols}x{grid.rows} grid")
        idx = np.array([p.members for p in placements])
        n = maps.shape[0]
        stacked = maps[:, idx]  # (N, P, g, C, h, w)
        return stacked.reshape(n, len(placements), -1, *maps.shape[3:])

    def summarize(self, images, ids, z=None):
        """Per image, one PassSummary per context model in ascending model-id order."""
        z = z or self.cfg.mc_passes
        feats = self.feature_maps(images)
        out = [[] for _ in ids]
        for mid in sorted(self.models):
            model = self.models[mid]
            try:
                x = self.model_inputs(model, feats[model.spec.backbone_id])
            except NoContextError:
                for row in out:
                    row.append(unavailable_summary(mid, self.cfg.num_classes))
                continue
            n, p = x.shape[:2]
            trunk = model.trunk(x.reshape(n * p, *x.shape[2:])).reshape(n, p, -1)
            for i, image_id in enumerate(ids):
                rng = stream(self.seed, "mc", mid, image_id)
                passes = model.head_passes(trunk[i], z, rng).mean(axis=1)
                out[i].append(summarize_passes(passes, mid, self.cfg.uncertainty_reduction))
        return out

    def pass_summaries(self, image, z=None, image_id=""):
        return self.summarize(np.asarray(image)[None], [image_id], z)[0]

    def patch_majority(self, images, backbone_id=None):
        """Baseline: majority vote of single-patch predictions on the context grid."""
        bid = backbone_id or next(b for b, m in self.backbones.items() if m.spec.scale_id == 1)
        b = self.backbones[bid]
        scaled = resize_all(self.cfg, images)[b.spec.scale_id]
        patches = grid_patches(scaled, self.grids[b.spec.scale_id])
        n, a = patches.shape[:2]
        votes = b.predict(patches.reshape(n * a, *patches.shape[2:])).argmax(axis=1).reshape(n, a)
        return np.array([np.bincount(v, minlength=self.cfg.num_classes).argmax() for v in votes])

    # -- persistence -------------------------------------------------------

    def save(self, ckpt_dir):
        ckpt_dir = Path(ckpt_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        for mid, m in {**self.backbones, **self.models}.items():
            save_checkpoint(ckpt_dir / f"{mid}.ckpt", m.state_dict())


def _loss_log(log_dir, name):
    if log_dir is None:
        return None
    fh = open(Path(log_dir) / f"{name}.loss.csv", "w")
    fh.write("epoch,batch,loss\n")
    return fh


def _as_stored(model):
    """Round parameters to the f32 checkpoint precision so in-memory and reloaded models agree."""
    model.load_state_dict({k: v.astype(np.float32).astype(np.float64) for k, v in model.state_dict().items()})


def _restore(model, path):
    model.load_state_dict(load_checkpoint(path))
    return True


def train_roster(cfg: RunConfig, images, labels, seed, ckpt_dir=None, log_dir=None, tag="") -> Roster:
    """Fine-tune every backbone, then train every context model on frozen features.

    With ``ckpt_dir`` set, models whose checkpoint already exists are loaded
    instead of retrained, and new checkpoints are written as training finishes.
    """
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValidationError("no training images")
    bspecs = backbone_specs(cfg)
    cspecs = context_specs(cfg, bspecs)
    needed = {s.backbone_id for s in cspecs.values()}
    bspecs = {k: v for k, v in bspecs.items() if k in needed}
    grids = context_grids(cfg)
    for d in (ckpt_dir, log_dir):
        if d is not None:
            Path(d).mkdir(parents=True, exist_ok=True)

    scaled = resize_all(cfg, images)
    backbones, histories = {}, {}
    for bid, spec in bspecs.items():
        b = Backbone(spec, stream(seed, tag, "init", bid))
        path = Path(ckpt_dir) / f"{bid}.ckpt" if ckpt_dir else None
        if path is not None and path.exists():
            _restore(b, path)
        else:
            t0 = time.process_time()
            rng = stream(seed, tag, "train", bid)
            x, y = backbone_training_set(cfg, scaled[spec.scale_id], labels, spec, rng)
            fh = _loss_log(log_dir, bid)
            try:
                histories[bid] = fine_tune(b, x, y, cfg.backbone_epochs, cfg.backbone_lr, cfg.backbone_batch_size, rng, fh)
            finally:
                if fh:
                    fh.close()
            _as_stored(b)
            if path is not None:
                save_checkpoint(path, b.state_dict())
            log.info("%s trained on %d patches in %.1fs", bid, len(x), time.process_time() - t0)
        backbones[bid] = b

    roster = Roster(cfg, seed, backbones, {}, grids, histories)
    feats = roster.feature_maps(images)
    for mid, spec in cspecs.items():
        m = ContextModel(spec, stream(seed, tag, "init", mid))
        path = Path(ckpt_dir) / f"{mid}.ckpt" if ckpt_dir else None
        if path is not None and path.exists():
            _restore(m, path)
        else:
            t0 = time.process_time()
            x = roster.model_inputs(m, feats[spec.backbone_id])
            fh = _loss_log(log_dir, mid)
            try:
                histories[mid] = train_context_model(
                    m, list(x), labels, cfg.context_epochs, cfg.context_lr, cfg.context_batch_size,
                    stream(seed, tag, "train", mid), fh,
                )
            finally:
                if fh:
                    fh.close()
            _as_stored(m)
            if path is not None:
                save_checkpoint(path, m.state_dict())
            log.info("%s trained in %.1fs", mid, time.process_time() - t0)
        roster.models[mid] = m
    return roster


def load_roster(cfg: RunConfig, ckpt_dir, seed) -> Roster:
    """Rebuild a trained roster from checkpoints; a missing model is a validation error."""
    ckpt_dir = Path(ckpt_dir)
    bspecs = backbone_specs(cfg)
    cspecs = context_specs(cfg, bspecs)
    needed = {s.backbone_id for s in cspecs.values()}
    backbones, models = {}, {}
    for bid in sorted(needed):
        path = ckpt_dir / f"{bid}.ckpt"
        if not path.exists():
            raise ValidationError(f"checkpoint for backbone {bid} missing in {ckpt_dir}")
        b = Backbone(bspecs[bid], np.random.default_rng(0))
        _restore(b, path)
        backbones[bid] = b
    for mid, spec in cspecs.items():
        path = ckpt_dir / f"{mid}.ckpt"
        if not path.exists():
            raise ValidationError(f"checkpoint for context model {mid} missing in {ckpt_dir}")
        m = ContextModel(spec, np.random.default_rng(0))
        _restore(m, path)
        models[mid] = m
    return Roster(cfg, seed, backbones, models, context_grids(cfg))


# -- cross-validation --------------------------------------------------------


@dataclass
class FoldOutput:
    fold: int
    test_idx: np.ndarray
    ids: list
    labels: np.ndarray
    summaries: list
    baseline: np.ndarray
    cpu_seconds: float = 0.0

    def decisions(self, delta):
        return [decide(s, delta, i, int(y)) for s, i, y in zip(self.summaries, self.ids, self.labels)]


def run_fold(cfg, images, labels, ids, train_idx, test_idx, fold, seed, ckpt_dir=None, log_dir=None):
    t0 = time.process_time()
    roster = train_roster(cfg, images[train_idx], labels[train_idx], seed, ckpt_dir, log_dir, tag=f"fold{fold}")
    test_ids = [ids[i] for i in test_idx]
    summaries = roster.summarize(images[test_idx], test_ids)
    baseline = roster.patch_majority(images[test_idx])
    return FoldOutput(fold, np.asarray(test_idx), test_ids, labels[test_idx], summaries, baseline, time.process_time() - t0)


def run_cv(cfg: RunConfig, images, labels, ids, seed=None, folds=None, out_dir=None):
    """Stratified k-fold train/evaluate; returns one FoldOutput per fold in fold order."""
    from .metrics import stratified_kfold

    seed = cfg.seed if seed is None else seed
    labels = np.asarray(labels)
    splits = stratified_kfold(labels, cfg.folds, seed)
    chosen = range(cfg.folds) if folds is None else folds
    jobs = []
    for f in chosen:
        tr, te = splits[f]
        ck = lg = None
        if out_dir is not None:
            ck = Path(out_dir) / f"fold{f}" / "checkpoints"
            lg = Path(out_dir) / f"fold{f}" / "logs"
        jobs.append((cfg, images, labels, ids, tr, te, f, seed, ck, lg))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_run_fold_job, jobs))
    return [_run_fold_job(j) for j in jobs]


def _run_fold_job(args):
    return run_fold(*args)
