"""Run configuration: plain-text ``key=value`` files with two built-in profiles.

``desk`` (default) shrinks the published setup so a full cross-validated run
fits on one CPU; ``paper`` restores the published hyperparameters. The
comment beside each field says which value is published and which is a desk
analogue.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields

from .errors import DataIOError, ValidationError

DEFAULT_DELTA_GRID = (0.001, 0.002, 0.003, 0.006, 0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0, 1.75)

# Default roster: every pattern per backbone except P8_S1 at scale 1 and P4_S1 at scale 2.
DEFAULT_ROSTER = tuple(
    f"{b}.{p}"
    for b, patterns in (
        ("arch-A.s1", ("P2_S1", "P3_S1", "P4_S1", "P4_S2", "P5_S1", "P6_S1")),
        ("arch-A.s2", ("P2_S1", "P3_S1", "P4_S2", "P5_S1", "P6_S1", "P8_S1")),
        ("arch-B.s1", ("P2_S1", "P3_S1", "P4_S1", "P4_S2", "P5_S1", "P6_S1")),
    )
    for p in patterns
)


def _dims(text, what, square=False):
    """'WxH' -> (W, H); with ``square``, a bare number N means NxN."""
    parts = str(text).lower().split("x")
    try:
        if square and len(parts) == 1:
            return int(parts[0]), int(parts[0])
        w, h = (int(v) for v in parts)
    except ValueError:
        raise ValidationError(f"{what} {text!r} should look like WIDTHxHEIGHT") from None
    return w, h


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    data_dir: str = "data"
    run_dir: str = "run"
    # dataset
    n_per_class: int = 100  # published: 400 images, 100 per class
    image_width: int = 64  # desk; published 2048
    image_height: int = 48  # desk; published 1536
    synth_noise: float = 0.03
    # multi-scale patches, one entry per scale
    scales: tuple = ("64x48", "42x32")  # desk; published 448x336, 296x224
    patch_sizes: tuple = ("32x32", "24x16")  # desk, WxH or a bare side; published 224, 224
    backbone_train_strides: tuple = (16, 8)  # desk; published 28, 9
    backbone_test_strides: tuple = (8, 4)  # desk; published 56, 18
    context_strides: tuple = (16, 8)  # desk; published 112, 9
    # backbones: arch@scale
    backbones: tuple = ("arch-A@1", "arch-A@2", "arch-B@1")  # published: DenseNet-161@1,2 + ResNet-152@1
    feature_channels: int = 4
    backbone_epochs: int = 3  # published 5
    backbone_lr: float = 1e-3  # published 1e-4 (pre-trained nets)
    backbone_batch_size: int = 32  # published
    backbone_aug_versions: int = 2  # of 8 rotation/flip versions per patch; published 8
    jitter_brightness: float = 0.1
    jitter_contrast: float = 0.1
    jitter_channel: float = 0.05
    # context models
    pattern_library: str = ""  # empty: built-in library
    roster: str = ""  # empty: built-in 18-model roster; else a file of model ids
    context_epochs: int = 20  # published 10
    context_lr: float = 2e-3  # published 1e-4
    context_batch_size: int = 16  # published 8
    context_conv_widths: tuple = (16, 32)
    context_fc_widths: tuple = (32, 16)
    dropout: float = 0.5  # published 0.7
    # ensemble and evaluation
    mc_passes: int = 50  # published
    delta: float = 0.001
    delta_grid: tuple = DEFAULT_DELTA_GRID  # published range 0.001 .. 1.75
    uncertainty_reduction: str = "argmax"
    folds: int = 5  # published
    num_classes: int = 4
    workers: int = 1
    dump_patches: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.profile not in PROFILES:
            raise ValidationError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        m = len(self.scales)
        for name in ("patch_sizes", "backbone_train_strides", "backbone_test_strides", "context_strides"):
            if len(getattr(self, name)) != m:
                raise ValidationError(f"{name} needs one entry per scale ({m})")
        for w, h in self.scale_dims:
            if w < 1 or h < 1:
                raise ValidationError(f"bad scale {w}x{h}")
        for (w, h), (pw, ph) in zip(self.scale_dims, self.patch_dims):
            if pw < 1 or ph < 1 or pw > w or ph > h:
                raise ValidationError(f"patch {pw}x{ph} does not fit scale {w}x{h}")
        for b in self.backbones:
            arch, _, scale = b.partition("@")
            if not scale.isdigit() or not 1 <= int(scale) <= m:
                raise ValidationError(f"backbone {b!r} must look like arch@scale with scale in 1..{m}")
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.mc_passes < 2:
            raise ValidationError("mc_passes must be >= 2")
        if list(self.delta_grid) != sorted(self.delta_grid):
            raise ValidationError("delta_grid must be ascending")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    @property
    def scale_dims(self):
        return [_dims(s, "scale") for s in self.scales]

    @property
    def patch_dims(self):
        return [_dims(p, "patch size", square=True) for p in self.patch_sizes]

    @property
    def backbone_ids(self):
        return [f"{b.split('@')[0]}.s{b.split('@')[1]}" for b in self.backbones]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


PAPER_PROFILE = dict(
    image_width=2048,
    image_height=1536,
    scales=("448x336", "296x224"),
    patch_sizes=("224", "224"),
    backbone_train_strides=(28, 9),
    backbone_test_strides=(56, 18),
    context_strides=(112, 9),
    backbone_epochs=5,
    backbone_lr=1e-4,
    backbone_aug_versions=8,
    context_epochs=10,
    context_lr=1e-4,
    context_batch_size=8,
    dropout=0.7,
    context_conv_widths=(32, 64),
    context_fc_widths=(32, 16),
)
PROFILES = {"desk": {}, "paper": PAPER_PROFILE}

_HINTS = None


def _field_types():
    global _HINTS
    if _HINTS is None:
        _HINTS = typing.get_type_hints(RunConfig)
    return _HINTS


def parse_value(name, text):
    kind = _field_types()[name]
    default = RunConfig.__dataclass_fields__[name].default
    text = str(text).strip()
    try:
        if kind is bool:
            if text.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            items = [t.strip() for t in text.split(",") if t.strip()]
            elem = type(default[0]) if default else str
            return tuple(elem(t) for t in items)
        return text
    except ValueError:
        raise ValidationError(f"config key {name}: cannot parse {text!r}") from None


def format_value(value):
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text) -> dict:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        values[key] = parse_value(key, value)
    return values


def resolve(file_values=None, overrides=None) -> RunConfig:
    """Profile defaults, then file values, then explicit overrides."""
    merged = dict(file_values or {})
    merged.update(overrides or {})
    profile = merged.get("profile", "desk")
    if profile not in PROFILES:
        raise ValidationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    base = dict(PROFILES[profile])
    base.update(merged)
    return RunConfig(**base)


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                values = parse_config_text(fh.read())
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from exc
    return resolve(values, overrides)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name}={format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))
