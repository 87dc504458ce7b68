"""Synthetic four-class "histology-like" images and directory datasets.

Images are pink backgrounds with dark purple blobs ("nuclei"). The image is
viewed as a 4x3 grid of cells:

* class0 ``sparse``: few blobs scattered uniformly.
* class1 ``dense``: many blobs scattered uniformly.
* class2 ``aligned``: filler blobs in the two middle columns, plus a tight
  clump in the left column and one in the right column, both in the same
  row (top or bottom, chosen at random).
* class3 ``staggered``: as class2, but the right clump sits in the opposite
  row to the left one.

In classes 2 and 3 each clump's row is uniformly top/bottom, so any window
that covers only one edge column has the same distribution in both classes.
Only a view spanning both edges can separate them.
"""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataIOError, ValidationError
from .imageio import IMAGE_SUFFIXES, read_image, write_image

log = logging.getLogger(__name__)

CLASS_NAMES = ("class0", "class1", "class2", "class3")
RECIPES = ("sparse", "dense", "aligned", "staggered")


@dataclass(frozen=True)
class SynthSpec:
    width: int = 64
    height: int = 48
    sparse_blobs: tuple = (3, 9)
    dense_blobs: tuple = (18, 30)
    filler_blobs: tuple = (5, 9)
    clump_blobs: int = 4
    blob_radius: tuple = (1.8, 3.0)
    noise: float = 0.03
    stain_jitter: float = 0.06
    seed: int = 0


@dataclass
class ImageRecord:
    path: Path
    label: int
    seed: int | None = None
    tags: tuple = ()


@dataclass
class DatasetManifest:
    root: Path
    classes: tuple
    records: list
    seed: int | None = None
    warnings: list = field(default_factory=list)

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def ids(self):
        return [f"{self.classes[r.label]}/{r.path.stem}" for r in self.records]

    def counts(self):
        return np.bincount(self.labels, minlength=len(self.classes))


def _uniform(rng, n, x0, x1, y0, y1):
    return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])


def _clump(rng, n, cx, cy, spread):
    return np.column_stack([cx + rng.uniform(-spread, spread, n), cy + rng.uniform(-spread, spread, n)])


def blob_layout(spec: SynthSpec, label, rng):
    """Blob centres (n, 2) as (x, y) for one image of class ``label``."""
    w, h = spec.width, spec.height
    cw, ch = w / 4, h / 3
    margin = spec.blob_radius[1]
    if label in (0, 1):
        lo, hi = spec.sparse_blobs if label == 0 else spec.dense_blobs
        return _uniform(rng, int(rng.integers(lo, hi + 1)), margin, w - margin, margin, h - margin)
    if label not in (2, 3):
        raise ValidationError(f"unknown class {label}")
    filler = _uniform(rng, int(rng.integers(spec.filler_blobs[0], spec.filler_blobs[1] + 1)), cw + margin, 3 * cw - margin, margin, h - margin)
    left_row = int(rng.integers(2)) * 2
    right_row = left_row if label == 2 else 2 - left_row
    spread = max(cw / 2 - margin, 0.5) * 0.6
    left = _clump(rng, spec.clump_blobs, cw / 2, (left_row + 0.5) * ch, spread)
    right = _clump(rng, spec.clump_blobs, 3.5 * cw, (right_row + 0.5) * ch, spread)
    return np.vstack([filler, left, right])


def render(spec: SynthSpec, label, rng):
    """(image, blob centres) with pixel values in [0, 1]."""
    centres = blob_layout(spec, label, rng)
    w, h = spec.width, spec.height
    tint = rng.uniform(-spec.stain_jitter, spec.stain_jitter, 3)
    background = np.array([0.92, 0.72, 0.84]) + tint
    nucleus = np.array([0.38, 0.16, 0.52]) + tint * 0.5
    img = np.broadcast_to(background, (h, w, 3)).copy()
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    for x, y in centres:
        r = rng.uniform(*spec.blob_radius)
        cover = np.clip(r - np.hypot(xx - x, yy - y) + 0.5, 0.0, 1.0)[..., None]
        img = img * (1 - cover) + nucleus * cover
    img += rng.normal(0.0, spec.noise, img.shape)
    return np.clip(img, 0.0, 1.0), centres


def image_seed(master, index) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def generate_dataset(spec: SynthSpec, n_per_class, root) -> DatasetManifest:
    """Write ``4 * n_per_class`` PNGs under root/{class}/{index}.png plus manifest.csv."""
    if n_per_class < 1:
        raise ValidationError("n_per_class must be >= 1")
    root = Path(root)
    try:
        for name in CLASS_NAMES:
            (root / name).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create dataset directory {root}: {exc}") from exc
    records = []
    width = max(4, len(str(n_per_class - 1)))
    for i in range(n_per_class):
        for label, name in enumerate(CLASS_NAMES):
            seed = image_seed(spec.seed, i * len(CLASS_NAMES) + label)
            img, _ = render(spec, label, np.random.default_rng(seed))
            path = root / name / f"{i:0{width}d}.png"
            write_image(path, img)
            records.append(ImageRecord(path, label, seed))
    records.sort(key=lambda r: (r.label, r.path.name))
    manifest = DatasetManifest(root, CLASS_NAMES, records, spec.seed)
    write_manifest(manifest)
    return manifest


def write_manifest(manifest: DatasetManifest):
    path = Path(manifest.root) / "manifest.csv"
    try:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["path", "class", "seed"])
            for r in manifest.records:
                rel = Path(r.path).relative_to(manifest.root).as_posix()
                out.writerow([rel, manifest.classes[r.label], "" if r.seed is None else r.seed])
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def load_dataset(root) -> DatasetManifest:
    """Scan root/{class}/ for PNG/PPM images; classes and files in sorted name order."""
    root = Path(root)
    if not root.is_dir():
        raise DataIOError(f"dataset root {root} is not a directory")
    seeds = {}
    manifest_csv = root / "manifest.csv"
    if manifest_csv.exists():
        with open(manifest_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                if row.get("seed"):
                    seeds[row["path"]] = int(row["seed"])
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValidationError(f"{root} has no class subdirectories")
    records, warnings = [], []
    for label, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.is_file())
        images = [p for p in files if p.suffix.lower() in IMAGE_SUFFIXES]
        for p in files:
            if p.suffix.lower() not in IMAGE_SUFFIXES:
                warnings.append(f"skipped non-image file {p}")
                log.warning("skipping non-image file %s", p)
        if not images:
            raise ValidationError(f"class directory {root / name} contains no images")
        for p in images:
            records.append(ImageRecord(p, label, seeds.get(p.relative_to(root).as_posix())))
    for r in records:
        read_image(r.path)  # raises DataIOError naming the path
    return DatasetManifest(root, tuple(classes), records, None, warnings)


def load_images(manifest: DatasetManifest) -> np.ndarray:
    imgs = [read_image(r.path) for r in manifest.records]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ValidationError(f"images differ in size: {sorted(shapes)}")
    return np.stack(imgs)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
