"""Multi-scale resizing, sliding-window patch grids and patch augmentation.

Images are float arrays of shape (height, width, 3) in [0, 1]. Patches are
numbered row-major from the top-left, starting at 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError


@dataclass(frozen=True)
class ImageScaleSpec:
    scale_id: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"scale {self.scale_id}: target size {self.width}x{self.height} must be positive")


@dataclass(frozen=True)
class PatchGrid:
    scale_id: int
    patch_width: int
    patch_height: int
    stride: int
    cols: int
    rows: int

    @property
    def count(self):
        return self.cols * self.rows

    @property
    def origins(self):
        return [((k % self.cols) * self.stride, (k // self.cols) * self.stride) for k in range(self.count)]

    def coords(self, index):
        """(col, row) of grid cell ``index``."""
        return index % self.cols, index // self.cols

    def index(self, col, row):
        return row * self.cols + col


@dataclass
class Patch:
    pixels: np.ndarray
    grid_index: int
    image_id: str = ""
    aug: str = "r0"


@dataclass(frozen=True)
class ColorJitter:
    brightness: float = 0.1
    contrast: float = 0.1
    channel: float = 0.05


def _check_window(image_w, image_h, p_w, p_h, s):
    if p_w < 1 or p_h < 1 or s < 1:
        raise ValidationError(f"patch {p_w}x{p_h} and stride {s} must be positive")
    if image_w < p_w or image_h < p_h:
        raise ValidationError(f"image {image_w}x{image_h} smaller than patch {p_w}x{p_h}")


def patch_count(image_w, image_h, p_w, p_h, s) -> int:
    _check_window(image_w, image_h, p_w, p_h, s)
    return (1 + (image_w - p_w) // s) * (1 + (image_h - p_h) // s)


def make_grid(image_w, image_h, p_w, p_h, s, scale_id=1) -> PatchGrid:
    _check_window(image_w, image_h, p_w, p_h, s)
    return PatchGrid(scale_id, p_w, p_h, s, 1 + (image_w - p_w) // s, 1 + (image_h - p_h) // s)


def resize_image(img, spec: ImageScaleSpec) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment; output is (height, width, 3)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError(f"expected an (H, W, C) image, got {img.shape}")
    src_h, src_w = img.shape[:2]
    if (src_h, src_w) == (spec.height, spec.width):
        return img.copy()

    def axis(n_src, n_dst):
        pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0, n_src - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(src_h, spec.height)
    x0, x1, fx = axis(src_w, spec.width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return np.clip(top * (1 - fy) + bottom * fy, 0.0, 1.0)


def patch_array(img, grid: PatchGrid) -> np.ndarray:
    """All patches of ``img`` on ``grid`` as one (a, p_h, p_w, 3) array."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if patch_count(w, h, grid.patch_width, grid.patch_height, grid.stride) != grid.count:
        raise ValidationError(f"grid {grid} does not match a {w}x{h} image")
    win = sliding_window_view(img, (grid.patch_height, grid.patch_width), axis=(0, 1))
    win = win[:: grid.stride, :: grid.stride][: grid.rows, : grid.cols]
    # (rows, cols, 3, p_h, p_w) -> (a, p_h, p_w, 3)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2).reshape(grid.count, grid.patch_height, grid.patch_width, -1))


def extract_patches(img, p_w, p_h, s, image_id="", scale_id=1):
    img = np.asarray(img, dtype=np.float64)
    grid = make_grid(img.shape[1], img.shape[0], p_w, p_h, s, scale_id)
    arr = patch_array(img, grid)
    return [Patch(arr[k], k, image_id) for k in range(grid.count)], grid


GEOMETRIC_VARIANTS = [(k, flip) for flip in (False, True) for k in range(4)]


def geometric_variant(pixels, rot, flip):
    out = np.flipud(pixels) if flip else pixels
    return np.ascontiguousarray(np.rot90(out, rot))


def color_perturb(pixels, rng, jitter: ColorJitter):
    b = rng.uniform(-jitter.brightness, jitter.brightness)
    c = rng.uniform(1 - jitter.contrast, 1 + jitter.contrast)
    ch = rng.uniform(1 - jitter.channel, 1 + jitter.channel, size=3)
    mean = pixels.mean()
    out = ((pixels - mean) * c + mean + b) * ch
    return np.clip(out, 0.0, 1.0)


def augment_patch(patch: Patch, mode="train", rng=None, jitter=ColorJitter()):
    """Train mode: 4 rotations x {identity, vertical flip}, each colour-jittered.
    Test mode: the patch itself."""
    if mode == "test":
        return [Patch(patch.pixels.copy(), patch.grid_index, patch.image_id, "r0")]
    if mode != "train":
        raise ValidationError(f"augment mode must be 'train' or 'test', got {mode!r}")
    if rng is None:
        raise ValidationError("train-mode augmentation needs a random generator")
    out = []
    for rot, flip in GEOMETRIC_VARIANTS:
        px = color_perturb(geometric_variant(patch.pixels, rot, flip), rng, jitter)
        out.append(Patch(px, patch.grid_index, patch.image_id, f"r{rot * 90}{'v' if flip else ''}"))
    return out


def dump_patches(patches, out_dir, image_name, scale_id):
    """Write patches as binary PPM files named {image}_{scale}_{index}_{aug}.ppm."""
    from .imageio import write_image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in patches:
        path = out_dir / f"{image_name}_{scale_id}_{p.grid_index}_{p.aug}.ppm"
        write_image(path, p.pixels)
        paths.append(path)
    return paths
