"""8-bit RGB image reading and writing (PNG and binary PPM) via Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataIOError

IMAGE_SUFFIXES = (".png", ".ppm")


def quantize(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def dequantize(arr) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


def read_image(path) -> np.ndarray:
    """Load an RGB image as float64 (H, W, 3) in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DataIOError(f"cannot read image {path}: {exc}") from exc
    return dequantize(arr)


def write_image(path, img) -> None:
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    try:
        Image.fromarray(quantize(img)).save(path, format=fmt)
    except OSError as exc:
        raise DataIOError(f"cannot write image {path}: {exc}") from exc
