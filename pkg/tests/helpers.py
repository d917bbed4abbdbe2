"""Random input generators shared by the tests."""


def random_lattice_polygon(rng, n_min=3, n_max=8, lo=-4.0, hi=36.0):
    """Random (possibly self-intersecting) polygon on the 1/8 pixel lattice."""
    n = int(rng.integers(n_min, n_max + 1))
    coords = rng.integers(int(lo * 8), int(hi * 8) + 1, size=(n, 2)) / 8.0
    return [(float(x), float(y)) for x, y in coords]


def species_dataset(counts, days=None, start=None):
    """Dataset with ``counts[code]`` images per species, one annotation each.

    Images of species ``code`` come from camera ``CAM-<code>`` and are spread
    round-robin over ``days[code]`` calendar days at a 2-hour cadence.
    """
    from datetime import datetime, timedelta, timezone

    from lichenmon.dataset import DEFAULT_CATEGORIES, Category, Dataset, ImageRecord, InstanceAnnotation
    from lichenmon.mask import Box, Polygon

    start = start or datetime(2021, 5, 1, tzinfo=timezone.utc)
    days = days or {}
    cats = list(DEFAULT_CATEGORIES)
    for code in counts:
        if code not in [c.code for c in cats]:
            cats.append(Category(len(cats) + 1, code, code))
    cat_id = {c.code: c.category_id for c in cats}
    images, anns = [], []
    poly = Polygon(((1, 1), (5, 1), (5, 5), (1, 5)))
    for code, n in counts.items():
        nd = days.get(code, n)
        for k in range(n):
            ts = start + timedelta(days=k % nd, hours=(2 * (k // nd)) % 24)
            iid = len(images) + 1
            images.append(ImageRecord(iid, f"{code}_{k:04d}.png", 16, 16, f"CAM-{code}", ts))
            anns.append(InstanceAnnotation(iid, iid, cat_id[code], poly, Box(1, 1, 4, 4)))
    return Dataset(images, cats, anns)


def random_eval_instance(rng, n_images=3, size=32, n_cats=2):
    """Random ground truth and detections plus the pixel sets an oracle needs.

    Each image holds at most 4 ground truths and 4 detections. About half the
    detections are jittered copies of a ground truth so that matches occur.
    Scores are distinct.
    """
    from lichenmon.dataset import Category, Dataset, Detection, ImageRecord, InstanceAnnotation
    from lichenmon.mask import Polygon, bbox_of

    import oracles

    cats = [Category(c + 1, f"S{c}", f"S{c}") for c in range(n_cats)]
    images, anns, dets = [], [], []
    o_gts, o_dets = [], []
    n_det_total = 4 * n_images
    scores = iter(rng.permutation(n_det_total * 4)[:n_det_total] / (n_det_total * 4) + 0.001)
    for i in range(n_images):
        iid = i + 1
        images.append(ImageRecord(iid, f"im{iid}.png", size, size))
        gt_polys = []
        for _ in range(int(rng.integers(0, 5))):
            pts = random_lattice_polygon(rng, 3, 6, 0.0, float(size))
            cat = int(rng.integers(1, n_cats + 1))
            poly = Polygon(tuple(pts))
            aid = len(anns) + 1
            anns.append(InstanceAnnotation(aid, iid, cat, poly, bbox_of(poly, size, size)))
            o_gts.append((aid, iid, cat, oracles.raster_pixels(pts, size, size)))
            gt_polys.append((pts, cat))
        for _ in range(int(rng.integers(0, 5))):
            if gt_polys and rng.uniform() < 0.6:
                pts, cat = gt_polys[int(rng.integers(len(gt_polys)))]
                dx, dy = rng.integers(-2, 3, 2)
                pts = [(x + float(dx), y + float(dy)) for x, y in pts]
            else:
                pts = random_lattice_polygon(rng, 3, 6, 0.0, float(size))
                cat = int(rng.integers(1, n_cats + 1))
            s = float(next(scores))
            poly = Polygon(tuple(pts))
            dets.append(Detection(iid, cat, s, poly, bbox_of(poly, size, size)))
            o_dets.append((iid, cat, s, oracles.raster_pixels(pts, size, size)))
    return Dataset(images, cats, anns), dets, o_gts, o_dets
