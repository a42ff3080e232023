"""PNG reading and writing for images, masks and kernel previews.

OpenCV is used because it round-trips 16-bit color PNGs; channel order is
converted to RGB on the way in and back to BGR on the way out.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .errors import InvalidParameterError


def read_raw(path):
    """Integer pixel array (RGB order for color) and its maximum code value."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        maxval = 255
    elif raw.dtype == np.uint16:
        maxval = 65535
    else:
        raise InvalidParameterError(f"unsupported pixel type {raw.dtype} in {path}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        raw = raw[:, :, ::-1]
    return np.ascontiguousarray(raw), maxval


def read_image(path, dtype=np.float32):
    raw, maxval = read_raw(path)
    return (raw.astype(np.float64) / maxval).astype(dtype)


def read_mask(path):
    raw, _ = read_raw(path)
    if raw.ndim == 3:
        raw = raw.max(axis=2)
    return raw > 0


def quantize(img, bit_depth=8):
    if bit_depth not in (8, 16):
        raise InvalidParameterError(f"bit depth must be 8 or 16, got {bit_depth}")
    maxval = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(x * maxval).astype(dtype)


def write_raw(path, raw):
    raw = np.asarray(raw)
    if raw.ndim == 3:
        raw = np.ascontiguousarray(raw[:, :, ::-1])
    if not cv2.imwrite(str(path), raw):
        raise OSError(f"cannot write image {path}")


def write_image(path, img, bit_depth=8):
    write_raw(path, quantize(img, bit_depth))


def write_mask(path, mask):
    write_raw(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def bright_fraction(raw, maxval, threshold=250):
    """Fraction of pixels whose value channel exceeds ``threshold`` on an 8-bit scale."""
    v = raw.max(axis=2) if raw.ndim == 3 else raw
    return float(np.count_nonzero(v.astype(np.int64) * 255 > threshold * maxval)) / v.size


def ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
