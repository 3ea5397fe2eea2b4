"""PNG/PPM image and 16-bit depth-map I/O.

Images are float arrays in [0, 1] with layout (C, H, W).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParameterError


def read_image(path) -> np.ndarray:
    """Decode an 8-bit PNG/PPM (or anything Pillow reads) as RGB (3, H, W) float32."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.transpose(1, 2, 0)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, image: np.ndarray) -> None:
    """Write (3, H, W) or (H, W) in [0, 1]; format from suffix (.png or .ppm)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".png", ".ppm"):
        raise ParameterError(f"unsupported image format {suffix!r} (png or ppm)")
    arr = to_uint8(image)
    if suffix == ".ppm" and arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    Image.fromarray(arr).save(path, format="PNG" if suffix == ".png" else "PPM")


def write_depth(path, depth: np.ndarray, d_min: float, d_max: float) -> None:
    """Store depth as 16-bit grayscale PNG, linearly quantized over [d_min, d_max]."""
    if d_min >= d_max:
        raise ParameterError("d_min must be < d_max")
    q = np.round((np.clip(depth, d_min, d_max) - d_min) / (d_max - d_min) * 65535.0)
    Image.fromarray(q.astype(np.uint16)).save(Path(path), format="PNG")


def read_gray(path) -> np.ndarray:
    """Single-channel image normalized to [0, 1] by its bit depth."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return arr / 65535.0
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0
