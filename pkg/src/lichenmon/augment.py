"""Geometric augmentation that keeps annotations and pixels consistent.

Geometry is transformed first and the pixel grid second, with the same map:
a polygon vertex and a pixel center undergo the identical affine transform,
so flips and quarter turns preserve rasterized area exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import InstanceAnnotation
from .errors import InvalidCropError, ValidationError
from .mask import BitMask, Box, Polygon, Rle, bbox_of, rle_encode, to_bitmask

__all__ = ["HFlip", "VFlip", "Rotate", "Crop", "AugmentResult", "augment",
           "clip_polygon", "random_transform"]


@dataclass(frozen=True)
class HFlip:
    pass


@dataclass(frozen=True)
class VFlip:
    pass


@dataclass(frozen=True)
class Rotate:
    """Counter-clockwise rotation (as displayed) about the image center.

    Multiples of 90 degrees rotate the whole grid, swapping width and height
    for odd multiples. Other angles keep the grid and clip to it.
    """

    degrees: float


@dataclass(frozen=True)
class Crop:
    box: Box


@dataclass
class AugmentResult:
    width: int
    height: int
    annotations: list
    dropped: list = field(default_factory=list)
    image: Optional[np.ndarray] = None


def _quarter_turns(degrees):
    d = float(degrees) % 360.0
    if d % 90.0 == 0.0:
        return int(d // 90.0)
    return None


def clip_polygon(points, x0, y0, x1, y1):
    """Sutherland-Hodgman clip of a ring against an axis-aligned window."""

    def clip(pts, inside, cross):
        out = []
        n = len(pts)
        for k in range(n):
            cur, prev = pts[k], pts[k - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(cross(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cross(prev, cur))
        return out

    def at_x(xv):
        def f(p, q):
            t = (xv - p[0]) / (q[0] - p[0])
            return (xv, p[1] + t * (q[1] - p[1]))
        return f

    def at_y(yv):
        def f(p, q):
            t = (yv - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), yv)
        return f

    pts = list(points)
    for inside, cross in (
        (lambda p: p[0] >= x0, at_x(x0)),
        (lambda p: p[0] <= x1, at_x(x1)),
        (lambda p: p[1] >= y0, at_y(y0)),
        (lambda p: p[1] <= y1, at_y(y1)),
    ):
        if not pts:
            break
        pts = clip(pts, inside, cross)
    dedup = []
    for p in pts:
        if not dedup or p != dedup[-1]:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    return dedup


def _point_map(transform, width, height):
    """Forward map of continuous coordinates and the output grid size."""
    if isinstance(transform, HFlip):
        return (lambda x, y: (width - x, y)), width, height
    if isinstance(transform, VFlip):
        return (lambda x, y: (x, height - y)), width, height
    if isinstance(transform, Rotate):
        k = _quarter_turns(transform.degrees)
        if k == 0:
            return (lambda x, y: (x, y)), width, height
        if k == 1:
            return (lambda x, y: (y, width - x)), height, width
        if k == 2:
            return (lambda x, y: (width - x, height - y)), width, height
        if k == 3:
            return (lambda x, y: (height - y, x)), height, width
        th = math.radians(transform.degrees)
        c, s = math.cos(th), math.sin(th)
        cx, cy = width / 2.0, height / 2.0
        return (lambda x, y: (cx + (x - cx) * c + (y - cy) * s,
                              cy - (x - cx) * s + (y - cy) * c)), width, height
    if isinstance(transform, Crop):
        b = transform.box
        return (lambda x, y: (x - b.x, y - b.y)), int(b.w), int(b.h)
    raise ValidationError(f"unknown transform {transform!r}")


def _transform_bits(bits, transform, width, height):
    """Apply the transform to a 2D (or HxWxC) pixel array."""
    if isinstance(transform, HFlip):
        return bits[:, ::-1].copy()
    if isinstance(transform, VFlip):
        return bits[::-1].copy()
    if isinstance(transform, Crop):
        b = transform.box
        return bits[int(b.y):int(b.y + b.h), int(b.x):int(b.x + b.w)].copy()
    k = _quarter_turns(transform.degrees)
    if k is not None:
        return np.rot90(bits, k).copy()
    # nearest-neighbour inverse map of each output pixel center
    th = math.radians(transform.degrees)
    c, s = math.cos(th), math.sin(th)
    cx, cy = width / 2.0, height / 2.0
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    sx = cx + dx * c - dy * s
    sy = cy + dx * s + dy * c
    jj, ii = np.floor(sx).astype(int), np.floor(sy).astype(int)
    ok = (ii >= 0) & (ii < height) & (jj >= 0) & (jj < width)
    out = np.zeros_like(bits)
    out[ok] = bits[ii[ok], jj[ok]]
    return out


def _validate_crop(box, width, height):
    vals = (box.x, box.y, box.w, box.h)
    if any(v != int(v) for v in vals):
        raise InvalidCropError(f"crop box must be pixel aligned, got {box.to_list()}")
    if box.w < 1 or box.h < 1 or box.x < 0 or box.y < 0 or box.x2 > width or box.y2 > height:
        raise InvalidCropError(f"crop box {box.to_list()} is outside the {width}x{height} image")


def augment(width, height, annotations, transform, image=None) -> AugmentResult:
    """Transform annotations (and optionally the image) with one transform.

    Annotations whose geometry becomes empty are dropped and their ids
    returned in ``dropped``. Boxes are recomputed from the new masks.
    """
    if isinstance(transform, Crop):
        _validate_crop(transform.box, width, height)
    fwd, new_w, new_h = _point_map(transform, width, height)
    needs_clip = isinstance(transform, Crop) or (
        isinstance(transform, Rotate) and _quarter_turns(transform.degrees) is None)

    out, dropped = [], []
    for a in annotations:
        if isinstance(a.mask, Polygon):
            pts = [fwd(x, y) for x, y in a.mask.points]
            if needs_clip:
                pts = clip_polygon(pts, 0.0, 0.0, float(new_w), float(new_h))
            if len(pts) < 3:
                dropped.append(a.ann_id)
                continue
            mask = Polygon(tuple(pts))
            bm = to_bitmask(mask, new_h, new_w)
        else:
            bits = to_bitmask(a.mask, height, width).bits
            bm = BitMask(_transform_bits(bits, transform, width, height))
            mask = rle_encode(bm) if isinstance(a.mask, Rle) else bm
        if bm.area == 0:
            dropped.append(a.ann_id)
            continue
        out.append(InstanceAnnotation(a.ann_id, a.image_id, a.category_id, mask, bbox_of(bm)))

    new_image = None
    if image is not None:
        img = np.asarray(image)
        if img.shape[:2] != (height, width):
            raise ValidationError(f"image is {img.shape[:2]}, expected {(height, width)}")
        new_image = _transform_bits(img, transform, width, height)
    return AugmentResult(new_w, new_h, out, dropped, new_image)


def random_transform(rng, width, height, min_crop=0.5, max_angle=15.0):
    """Draw one of: horizontal flip, vertical flip, rotation, random crop."""
    kind = int(rng.integers(4))
    if kind == 0:
        return HFlip()
    if kind == 1:
        return VFlip()
    if kind == 2:
        if rng.uniform() < 0.5:
            return Rotate(90.0 * int(rng.integers(1, 4)))
        return Rotate(float(rng.uniform(-max_angle, max_angle)))
    w = int(rng.integers(max(1, int(width * min_crop)), width + 1))
    h = int(rng.integers(max(1, int(height * min_crop)), height + 1))
    x = int(rng.integers(0, width - w + 1))
    y = int(rng.integers(0, height - h + 1))
    return Crop(Box(x, y, w, h))
