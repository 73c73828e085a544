"""Synthetic vessel images with known geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Phantom", "KINDS", "make_phantom", "centerline_mask", "phantom_center"]

KINDS = ("x_crossing", "straight_bar", "curved_vessel", "gaussian_ridge", "bifurcation")


@dataclass(frozen=True)
class Phantom:
    """Geometry and intensity settings of a synthetic image.

    Vessels are dark: intensity ``background - contrast * coverage`` where
    ``coverage`` is the anti-aliased fraction of the pixel inside a bar of
    ``width`` px. Angles are in degrees, measured from the x axis towards
    increasing row index. ``sigma`` sets the profile std of
    ``gaussian_ridge``; ``radius`` the radius of the ring drawn for
    ``curved_vessel`` around the centre (default ``0.3 * min(shape)``).
    """

    kind: str = "x_crossing"
    shape: tuple = (256, 256)
    width: float = 4.0
    contrast: float = 0.5
    background: float = 0.75
    noise: float = 0.0
    seed: int = 0
    angle: float = 0.0
    crossing_angle: float = 90.0
    branch_angle: float = 30.0
    radius: float | None = None
    sigma: float = 3.8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; choose from {KINDS}")
        shape = self.shape
        if isinstance(shape, int):
            shape = (shape, shape)
        shape = tuple(int(s) for s in shape)
        if len(shape) != 2 or min(shape) < 8:
            raise ValueError("shape must be two sizes >= 8")
        object.__setattr__(self, "shape", shape)
        if self.kind == "gaussian_ridge":
            if not self.sigma > 0:
                raise ValueError("ridge sigma must be > 0")
        elif not self.width > 0:
            raise ValueError("bar width must be > 0")
        if self.noise < 0:
            raise ValueError("noise std must be >= 0")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be > 0")


def phantom_center(p):
    """Pixel coordinates ``(row, col)`` of the phantom centre (crossing point)."""
    h, w = p.shape
    return h // 2, w // 2


def _grid(p):
    h, w = p.shape
    return np.mgrid[0:h, 0:w].astype(float)


def _line_distance(y, x, cy, cx, angle_deg):
    t = math.radians(angle_deg)
    return np.abs(-(x - cx) * math.sin(t) + (y - cy) * math.cos(t))


def _ray_distance(y, x, cy, cx, angle_deg):
    """Distance to the half line starting at ``(cy, cx)`` in direction ``angle_deg``."""
    t = math.radians(angle_deg)
    dx, dy = math.cos(t), math.sin(t)
    s = np.maximum((x - cx) * dx + (y - cy) * dy, 0.0)
    return np.hypot(x - cx - s * dx, y - cy - s * dy)


def _distance(p):
    y, x = _grid(p)
    cy, cx = phantom_center(p)
    if p.kind in ("straight_bar", "gaussian_ridge"):
        return _line_distance(y, x, cy, cx, p.angle)
    if p.kind == "x_crossing":
        return np.minimum(_line_distance(y, x, cy, cx, p.angle),
                          _line_distance(y, x, cy, cx, p.angle + p.crossing_angle))
    if p.kind == "curved_vessel":
        r = p.radius if p.radius is not None else 0.3 * min(p.shape)
        return np.abs(np.hypot(y - cy, x - cx) - r)
    # bifurcation: parent enters from the left edge, two branches leave the centre
    parent = _ray_distance(y, x, cy, cx, p.angle + 180.0)
    up = _ray_distance(y, x, cy, cx, p.angle - p.branch_angle)
    down = _ray_distance(y, x, cy, cx, p.angle + p.branch_angle)
    return np.minimum(parent, np.minimum(up, down))


def make_phantom(p=None, **kw):
    """Rasterize a phantom.

    Either pass a :class:`Phantom` or its fields as keywords. The result is
    float64 and deterministic for a given seed.
    """
    if p is None:
        p = Phantom(**kw)
    elif kw:
        raise TypeError("pass either a Phantom or keyword fields, not both")
    d = _distance(p)
    if p.kind == "gaussian_ridge":
        profile = np.exp(-(d**2) / (2 * p.sigma**2))
    else:
        profile = np.clip(0.5 * p.width + 0.5 - d, 0.0, 1.0)
    img = p.background - p.contrast * profile
    if p.noise > 0:
        rng = np.random.default_rng(p.seed)
        img = img + rng.normal(0.0, p.noise, size=img.shape)
    return img


def centerline_mask(p, margin=0):
    """Pixels whose centre lies within half a pixel of a vessel centreline.

    ``margin`` clears a border band of that many pixels.
    """
    mask = _distance(p) <= 0.5
    if margin > 0:
        mask[:margin] = mask[-margin:] = False
        mask[:, :margin] = mask[:, -margin:] = False
    return mask
