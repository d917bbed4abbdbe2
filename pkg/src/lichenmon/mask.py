"""Mask geometry: polygons, run-length encodings, bitmaps and boxes.

Conventions used throughout the package:

* image coordinates have the origin at the top-left corner, x to the right
  and y down; pixel ``(i, j)`` covers ``[j, j+1) x [i, i+1)``;
* a polygon covers a pixel when the pixel *center* is inside the ring under
  the even-odd rule, or lies exactly on an edge (closed rule, so flips and
  quarter turns map covered pixels onto covered pixels);
* run lengths are taken over the column-major flattening and start with a
  background run, which may be empty. This is the COCO layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .errors import (
    CorruptRleError,
    DegeneratePolygonError,
    InvalidGeometryError,
    ShapeMismatchError,
)

__all__ = [
    "Polygon", "Rle", "BitMask", "Box", "MaskGeometry",
    "rasterize", "rle_encode", "rle_decode", "to_bitmask", "to_rle",
    "iou", "box_iou", "iou_matrix", "area", "bbox_of",
    "geometry_to_coco", "geometry_from_coco",
]


@dataclass(frozen=True)
class Polygon:
    """A closed ring of at least three finite vertices."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) < 3:
            raise DegeneratePolygonError(f"polygon needs at least 3 vertices, got {len(pts)}")
        for x, y in pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InvalidGeometryError(f"non-finite polygon coordinate ({x}, {y})")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_flat(cls, flat):
        flat = list(flat)
        if len(flat) % 2:
            raise InvalidGeometryError("flat polygon list has odd length")
        return cls(tuple(zip(flat[0::2], flat[1::2])))

    def to_flat(self):
        return [c for p in self.points for c in p]

    @property
    def xs(self):
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def ys(self):
        return np.array([p[1] for p in self.points], dtype=np.float64)

    def translate(self, dx, dy):
        return Polygon(tuple((x + dx, y + dy) for x, y in self.points))

    def signed_area(self):
        """Shoelace area; positive for clockwise rings in y-down coordinates."""
        xs, ys = self.xs, self.ys
        return 0.5 * float(np.dot(xs, np.roll(ys, -1)) - np.dot(np.roll(xs, -1), ys))

    def grid_extent(self):
        """Smallest (height, width) anchored at the origin that holds the ring."""
        return max(1, math.ceil(max(self.ys))), max(1, math.ceil(max(self.xs)))


@dataclass(frozen=True)
class Rle:
    height: int
    width: int
    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.height < 1 or self.width < 1:
            raise InvalidGeometryError(f"RLE grid must be at least 1x1, got {self.height}x{self.width}")
        if any(c < 0 for c in self.counts):
            raise CorruptRleError("negative run length")

    @property
    def area(self):
        return sum(self.counts[1::2])

    def to_coco(self):
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_coco(cls, obj):
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptRleError(f"malformed RLE object: {exc}") from None
        if isinstance(counts, str):
            raise CorruptRleError("compressed string RLE is not supported")
        return cls(int(h), int(w), tuple(counts))


class BitMask:
    """Immutable dense binary mask."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = np.array(bits, dtype=bool, copy=True)
        if arr.ndim != 2:
            raise InvalidGeometryError(f"bitmask must be 2D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def __setattr__(self, name, value):
        raise AttributeError("BitMask is immutable")

    @classmethod
    def empty(cls, height, width):
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def shape(self):
        return self.bits.shape

    @property
    def area(self):
        return int(np.count_nonzero(self.bits))

    def _check(self, other):
        if self.shape != other.shape:
            raise ShapeMismatchError(f"mask shapes differ: {self.shape} vs {other.shape}")

    def __and__(self, other):
        self._check(other)
        return BitMask(self.bits & other.bits)

    def __or__(self, other):
        self._check(other)
        return BitMask(self.bits | other.bits)

    def __sub__(self, other):
        self._check(other)
        return BitMask(self.bits & ~other.bits)

    def __eq__(self, other):
        if not isinstance(other, BitMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))

    def __repr__(self):
        return f"BitMask({self.height}x{self.width}, area={self.area})"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box as top-left corner plus extents."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InvalidGeometryError(f"non-finite box {name}")
            object.__setattr__(self, name, v)
        if self.w < 0 or self.h < 0:
            raise InvalidGeometryError(f"negative box extent ({self.w}, {self.h})")

    @property
    def area(self):
        return self.w * self.h

    @property
    def x2(self):
        return self.x + self.w

    @property
    def y2(self):
        return self.y + self.h

    def to_list(self):
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, v):
        if len(v) != 4:
            raise InvalidGeometryError(f"box needs 4 values, got {len(v)}")
        return cls(*v)


MaskGeometry = Union[Polygon, Rle, BitMask]


def rasterize(p: Polygon, height: int, width: int) -> BitMask:
    if height < 1 or width < 1:
        raise InvalidGeometryError(f"grid must be at least 1x1, got {height}x{width}")
    bits = kernels.rasterize_polygon(p.xs, p.ys, int(height), int(width))
    return BitMask(bits.astype(bool))


def rle_encode(m: BitMask) -> Rle:
    counts = kernels.rle_encode(m.bits.view(np.uint8))
    return Rle(m.height, m.width, tuple(counts.tolist()))


def rle_decode(r: Rle) -> BitMask:
    total = sum(r.counts)
    if total != r.height * r.width:
        raise CorruptRleError(
            f"run lengths sum to {total}, expected {r.height}x{r.width}={r.height * r.width}")
    bits = kernels.rle_decode(np.asarray(r.counts, dtype=np.int64), r.height, r.width)
    return BitMask(bits.astype(bool))


def _grid(geom, height, width):
    if isinstance(geom, Polygon):
        if height is None or width is None:
            return geom.grid_extent()
        return height, width
    if height is not None and width is not None and (geom.height, geom.width) != (height, width):
        raise ShapeMismatchError(
            f"mask is {geom.height}x{geom.width}, expected {height}x{width}")
    return geom.height, geom.width


def to_bitmask(geom: MaskGeometry, height=None, width=None) -> BitMask:
    """Decode or rasterize any mask geometry to a dense mask."""
    if isinstance(geom, BitMask):
        _grid(geom, height, width)
        return geom
    if isinstance(geom, Rle):
        _grid(geom, height, width)
        return rle_decode(geom)
    if isinstance(geom, Polygon):
        return rasterize(geom, *_grid(geom, height, width))
    raise InvalidGeometryError(f"not a mask geometry: {type(geom).__name__}")


def to_rle(geom: MaskGeometry, height=None, width=None) -> Rle:
    if isinstance(geom, Rle):
        _grid(geom, height, width)
        total = sum(geom.counts)
        if total != geom.height * geom.width:
            raise CorruptRleError(f"run lengths sum to {total}, expected {geom.height * geom.width}")
        return geom
    return rle_encode(to_bitmask(geom, height, width))


def box_iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def iou(a, b, mode="mask", height=None, width=None) -> float:
    """Intersection over union of two masks or two boxes.

    In ``mask`` mode both operands are brought to the same grid; polygons use
    ``height``/``width`` when given, otherwise the other operand's grid.
    In ``box`` mode masks are first reduced to their tight bounding box.
    """
    if mode == "box":
        ba = a if isinstance(a, Box) else bbox_of(a, height, width)
        bb = b if isinstance(b, Box) else bbox_of(b, height, width)
        return box_iou(ba, bb)
    if mode != "mask":
        raise ValueError(f"mode must be 'mask' or 'box', got {mode!r}")
    if isinstance(a, Box) or isinstance(b, Box):
        raise InvalidGeometryError("boxes can only be compared in box mode")
    if height is None or width is None:
        for g in (a, b):
            if not isinstance(g, Polygon):
                height, width = g.height, g.width
                break
        else:
            ha, wa = a.grid_extent()
            hb, wb = b.grid_extent()
            height, width = max(ha, hb), max(wa, wb)
    ra = to_rle(a, height, width)
    rb = to_rle(b, height, width)
    return float(kernels.rle_iou_matrix([ra.counts], [rb.counts])[0, 0])


def iou_matrix(a_list, b_list, mode="mask", height=None, width=None):
    """Pairwise IoU, rows indexed by ``a_list`` and columns by ``b_list``."""
    if mode == "box":
        out = np.zeros((len(a_list), len(b_list)))
        ba = [g if isinstance(g, Box) else bbox_of(g, height, width) for g in a_list]
        bb = [g if isinstance(g, Box) else bbox_of(g, height, width) for g in b_list]
        for i, x in enumerate(ba):
            for j, y in enumerate(bb):
                out[i, j] = box_iou(x, y)
        return out
    ca = [np.asarray(to_rle(g, height, width).counts, dtype=np.int64) for g in a_list]
    cb = [np.asarray(to_rle(g, height, width).counts, dtype=np.int64) for g in b_list]
    return kernels.rle_iou_matrix(ca, cb)


def area(m: MaskGeometry, height=None, width=None) -> int:
    """Number of covered pixels."""
    if isinstance(m, Rle):
        _grid(m, height, width)
        return m.area
    return to_bitmask(m, height, width).area


def bbox_of(m: MaskGeometry, height=None, width=None) -> Box:
    """Tightest pixel-aligned box around the covered pixels; (0,0,0,0) if empty."""
    bits = to_bitmask(m, height, width).bits
    rows = np.flatnonzero(bits.any(axis=1))
    if rows.size == 0:
        return Box(0, 0, 0, 0)
    cols = np.flatnonzero(bits.any(axis=0))
    return Box(int(cols[0]), int(rows[0]),
               int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def geometry_to_coco(geom: MaskGeometry):
    """COCO ``segmentation`` value: ``[[x1, y1, ...]]`` or an RLE object."""
    if isinstance(geom, Polygon):
        return [geom.to_flat()]
    return to_rle(geom).to_coco()


def geometry_from_coco(seg, height, width) -> MaskGeometry:
    """Inverse of :func:`geometry_to_coco`.

    Multi-ring polygon lists are rasterized to their union and returned as RLE.
    """
    if isinstance(seg, dict):
        rle = Rle.from_coco(seg)
        if (rle.height, rle.width) != (height, width):
            raise ShapeMismatchError(
                f"RLE size {rle.height}x{rle.width} does not match image {height}x{width}")
        return rle
    if not isinstance(seg, list) or not seg:
        raise InvalidGeometryError("segmentation must be an RLE object or a non-empty polygon list")
    if not isinstance(seg[0], list):
        seg = [seg]
    rings = [Polygon.from_flat(r) for r in seg]
    if len(rings) == 1:
        return rings[0]
    bits = np.zeros((height, width), dtype=bool)
    for r in rings:
        bits |= rasterize(r, height, width).bits
    return rle_encode(BitMask(bits))
