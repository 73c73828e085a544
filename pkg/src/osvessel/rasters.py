"""Reading and writing raster images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .ndfield import read_field

__all__ = ["IMAGE_EXT", "load_image", "load_mask", "read_input", "save_png", "save_mask", "montage"]

IMAGE_EXT = {".jpg", ".jpeg", ".png", ".tif", ".tiff", ".bmp", ".ppm", ".pgm"}


def load_image(path, channel="green"):
    """Read an image as float64 in ``[0, 1]`` scaled from its bit depth.

    ``channel`` picks ``red``, ``green`` or ``blue`` from colour images, or
    ``gray`` for a luminance conversion; it is ignored for gray inputs.
    """
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L"):
            arr = np.asarray(im, dtype=np.uint16)
        else:
            arr = np.asarray(im)
    if arr.dtype == bool:
        arr = arr.astype(float)
    elif np.issubdtype(arr.dtype, np.integer):
        top = 65535 if arr.dtype == np.int32 else np.iinfo(arr.dtype).max
        arr = arr.astype(float) / top
    else:
        arr = arr.astype(float)
    if arr.ndim == 3:
        arr = arr[..., :3]
        idx = {"red": 0, "green": 1, "blue": 2}
        if channel in idx:
            arr = arr[..., idx[channel]]
        elif channel == "gray":
            arr = arr @ np.array([0.2125, 0.7154, 0.0721])
        else:
            raise ValueError(f"unknown channel {channel!r}")
    return arr


def load_mask(path):
    """Read a binary raster; any nonzero sample (first channel) counts as set."""
    if Path(path).suffix.lower() == ".ndf":
        data, _ = read_field(path)
        return np.asarray(data) > 0
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr > 0


def read_input(path, channel="green"):
    """Image from a raster file, a 2D ndfield dump (``.ndf``) or a ``.npy`` array."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ndf":
        data, _ = read_field(path)
        if data.ndim != 2 or np.iscomplexobj(data):
            raise ValueError(f"{path} does not hold a real 2D image")
        return data
    if suffix == ".npy":
        data = np.load(path)
        if data.ndim != 2:
            raise ValueError(f"{path} does not hold a 2D array")
        return data.astype(float)
    return load_image(path, channel)


def save_png(path, img, bits=16, normalize=False):
    """Write a gray PNG from values in ``[0, 1]`` (clipped) at 8 or 16 bits.

    ``normalize`` first maps ``[min, max]`` to ``[0, 1]``.
    """
    img = np.asarray(img, dtype=float)
    if normalize:
        lo, hi = float(img.min()), float(img.max())
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    img = np.clip(img, 0.0, 1.0)
    if bits == 16:
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    elif bits == 8:
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def save_mask(path, mask):
    """Write a 1-bit PNG."""
    Image.fromarray(np.asarray(mask, dtype=bool)).save(path)


def montage(tiles, columns=None, pad=2):
    """Arrange ``(n, H, W)`` tiles in a grid; each tile max-normalized to ``[0, 1]``."""
    tiles = np.asarray(tiles, dtype=float)
    n, h, w = tiles.shape
    columns = columns or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / columns))
    out = np.zeros((rows * (h + pad) - pad, columns * (w + pad) - pad))
    for k, tile in enumerate(tiles):
        peak = np.max(np.abs(tile))
        t = tile / peak if peak > 0 else tile
        r, c = divmod(k, columns)
        out[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = t
    return out
