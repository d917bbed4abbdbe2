import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lichenmon.augment import Crop, HFlip, Rotate, VFlip, augment, clip_polygon, random_transform
from lichenmon.dataset import InstanceAnnotation
from lichenmon.errors import InvalidCropError
from lichenmon.mask import BitMask, Box, Polygon, area, bbox_of, rasterize, rle_encode

import oracles

lattice = st.integers(-16, 40 * 8).map(lambda v: v / 8.0)
polys = st.lists(st.tuples(lattice, lattice), min_size=3, max_size=7)


def ann(poly, h, w, ann_id=1):
    p = Polygon(poly) if not isinstance(poly, Polygon) else poly
    return InstanceAnnotation(ann_id, 1, 1, p, bbox_of(p, h, w))


def test_hflip_coordinates():
    a = ann(((1, 0), (3, 0), (3, 2), (1, 2)), 10, 10)
    res = augment(10, 10, [a], HFlip())
    xs = {x for x, _ in res.annotations[0].mask.points}
    assert xs == {9.0, 7.0}
    assert area(res.annotations[0].mask, 10, 10) == area(a.mask, 10, 10)


@settings(max_examples=100, deadline=None)
@given(polys, st.sampled_from([HFlip(), VFlip(), Rotate(90), Rotate(180), Rotate(270), Rotate(-90)]))
def test_flip_and_quarter_turn_preserve_area(pts, t):
    h, w = 37, 41
    a = ann(pts, h, w)
    before = area(a.mask, h, w)
    res = augment(w, h, [a], t)
    after = sum(area(x.mask, res.height, res.width) for x in res.annotations)
    assert after == before


@settings(max_examples=50, deadline=None)
@given(polys, st.sampled_from([HFlip(), VFlip()]))
def test_double_flip_is_identity(pts, t):
    a = ann(pts, 40, 40)
    once = augment(40, 40, [a], t)
    if not once.annotations:
        return
    twice = augment(40, 40, once.annotations, t)
    for (x0, y0), (x1, y1) in zip(a.mask.points, twice.annotations[0].mask.points):
        assert abs(x0 - x1) <= 1e-9 and abs(y0 - y1) <= 1e-9


def test_quarter_turn_matches_pixel_rotation(rng):
    h, w = 20, 30
    image = rng.integers(0, 255, size=(h, w), dtype=np.uint8)
    a = ann(((2.5, 3), (17, 4.25), (12, 15.5)), h, w)
    res = augment(w, h, [a], Rotate(90), image=image)
    assert (res.width, res.height) == (h, w)
    assert np.array_equal(res.image, np.rot90(image))
    rotated_mask = np.rot90(rasterize(a.mask, h, w).bits)
    assert np.array_equal(rasterize(res.annotations[0].mask, res.height, res.width).bits, rotated_mask)


def test_rle_annotation_flip():
    bits = np.zeros((6, 8), bool)
    bits[1:3, 0:3] = True
    a = InstanceAnnotation(1, 1, 1, rle_encode(BitMask(bits)), Box(0, 1, 3, 2))
    res = augment(8, 6, [a], HFlip())
    assert res.annotations[0].box == Box(5, 1, 3, 2)


def test_crop_clips_to_window_oracle():
    h, w = 12, 12
    square = ((3, 3), (8, 3), (8, 8), (3, 8))
    res = augment(w, h, [ann(square, h, w)], Crop(Box(0, 0, 5, 5)))
    expect = {(i, j) for (i, j) in oracles.raster_pixels(square, h, w) if i < 5 and j < 5}
    got = rasterize(res.annotations[0].mask, 5, 5).bits
    assert oracles.pixel_set(got) == expect
    assert area(res.annotations[0].mask, 5, 5) == 4


@settings(max_examples=100, deadline=None)
@given(polys, st.integers(0, 20), st.integers(0, 20), st.integers(1, 20), st.integers(1, 20))
def test_crop_matches_rasterize_then_crop(pts, x, y, cw, ch):
    h, w = 40, 40
    a = ann(pts, h, w)
    res = augment(w, h, [a], Crop(Box(x, y, cw, ch)))
    full = oracles.raster_pixels(pts, h, w)
    expect = {(i - y, j - x) for (i, j) in full if y <= i < y + ch and x <= j < x + cw}
    if res.annotations:
        got = oracles.pixel_set(rasterize(res.annotations[0].mask, ch, cw).bits)
    else:
        got = set()
        assert res.dropped == [1]
    assert got == expect


def test_crop_outside_image():
    with pytest.raises(InvalidCropError):
        augment(10, 10, [], Crop(Box(5, 5, 10, 2)))
    with pytest.raises(InvalidCropError):
        augment(10, 10, [], Crop(Box(0.5, 0, 2, 2)))


def test_annotation_cropped_away_is_dropped():
    a = ann(((8, 8), (9, 8), (9, 9)), 10, 10)
    res = augment(10, 10, [a], Crop(Box(0, 0, 4, 4)))
    assert res.annotations == [] and res.dropped == [1]


def test_general_rotation_keeps_grid_and_clips():
    a = ann(((0, 0), (10, 0), (10, 10), (0, 10)), 10, 10)
    res = augment(10, 10, [a], Rotate(30), image=np.ones((10, 10), np.uint8))
    assert (res.width, res.height) == (10, 10)
    for x, y in res.annotations[0].mask.points:
        assert -1e-9 <= x <= 10 + 1e-9 and -1e-9 <= y <= 10 + 1e-9
    # rotated pixel footprint and rotated polygon agree on most pixels
    m = rasterize(res.annotations[0].mask, 10, 10).bits
    assert np.mean(m == res.image.astype(bool)) > 0.9


def test_clip_polygon_concave():
    u_shape = [(0, 0), (6, 0), (6, 6), (4, 6), (4, 2), (2, 2), (2, 6), (0, 6)]
    out = clip_polygon(u_shape, 0, 0, 6, 4)
    poly = Polygon(out)
    assert area(poly, 4, 6) == area(Polygon(u_shape), 6, 6) - 2 * 2 * 2


def test_random_transform_is_seeded():
    a = [random_transform(np.random.default_rng(3), 50, 40) for _ in range(2)]
    assert a[0] == a[1]
