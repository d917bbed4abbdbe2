"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and bit-identical results. Floating point expressions are written in the same
order in both files so that rounding matches.
"""
import numpy as np

BACKEND = "python"


def rasterize_polygon(xs, ys, height, width):
    """Closed even-odd rasterization at pixel centers.

    Pixel (i, j) is set when (j + 0.5, i + 0.5) is inside the ring or lies
    exactly on one of its edges.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    out = np.zeros((height, width), dtype=np.uint8)
    n = xs.shape[0]
    if n == 0:
        return out

    i0 = max(int(np.floor(ys.min() - 0.5)), 0)
    i1 = min(int(np.ceil(ys.max() - 0.5)), height - 1)
    j0 = max(int(np.floor(xs.min() - 0.5)), 0)
    j1 = min(int(np.ceil(xs.max() - 0.5)), width - 1)
    if i1 < i0 or j1 < j0:
        return out

    yc = (np.arange(i0, i1 + 1, dtype=np.float64) + 0.5)[:, None]
    xc = (np.arange(j0, j1 + 1, dtype=np.float64) + 0.5)[None, :]
    inside = np.zeros((i1 - i0 + 1, j1 - j0 + 1), dtype=bool)
    boundary = np.zeros_like(inside)

    for k in range(n):
        x0, y0 = xs[k], ys[k]
        x1, y1 = xs[(k + 1) % n], ys[(k + 1) % n]
        a = (xc - x0) * (y1 - y0)
        b = (x1 - x0) * (yc - y0)
        straddle = (y0 > yc) != (y1 > yc)
        if y1 > y0:
            inside ^= straddle & (a < b)
        else:
            inside ^= straddle & (a > b)
        in_y = (yc >= min(y0, y1)) & (yc <= max(y0, y1))
        in_x = (xc >= min(x0, x1)) & (xc <= max(x0, x1))
        boundary |= in_y & in_x & (a == b)

    out[i0:i1 + 1, j0:j1 + 1] = inside | boundary
    return out


def rle_encode(bits):
    """Column-major, background-first run lengths of a 2D 0/1 array."""
    flat = np.asarray(bits, dtype=np.uint8).ravel(order="F")
    n = flat.shape[0]
    if n == 0:
        return np.zeros(1, dtype=np.int64)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], change, [n]))
    counts = np.diff(edges).astype(np.int64)
    if flat[0]:
        counts = np.concatenate(([0], counts))
    return counts


def rle_decode(counts, height, width):
    counts = np.asarray(counts, dtype=np.int64)
    values = np.zeros(counts.shape[0], dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, counts)
    return flat.reshape((height, width), order="F")


def _intervals(counts):
    counts = np.asarray(counts, dtype=np.int64)
    ends = np.cumsum(counts)
    starts = ends - counts
    return starts[1::2], ends[1::2]


def rle_intersection_area(a, b):
    """Number of pixels set in both run-length encodings."""
    sa, ea = _intervals(a)
    sb, eb = _intervals(b)
    total = 0
    i = j = 0
    while i < sa.shape[0] and j < sb.shape[0]:
        lo = max(sa[i], sb[j])
        hi = min(ea[i], eb[j])
        if hi > lo:
            total += int(hi - lo)
        if ea[i] < eb[j]:
            i += 1
        else:
            j += 1
    return total


def rle_iou_matrix(a_list, b_list):
    """Pairwise IoU between two lists of count arrays over a common grid.

    Two empty masks give 0.
    """
    out = np.zeros((len(a_list), len(b_list)), dtype=np.float64)
    if not a_list or not b_list:
        return out
    area_a = [int(np.asarray(c, dtype=np.int64)[1::2].sum()) for c in a_list]
    area_b = [int(np.asarray(c, dtype=np.int64)[1::2].sum()) for c in b_list]
    for i, ca in enumerate(a_list):
        for j, cb in enumerate(b_list):
            inter = rle_intersection_area(ca, cb)
            union = area_a[i] + area_b[j] - inter
            if union > 0:
                out[i, j] = inter / union
    return out


def laplacian_variance(gray):
    """Population variance of the valid-region 4-neighbour Laplacian."""
    g = np.asarray(gray, dtype=np.int64)
    lap = (g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:]
           - 4 * g[1:-1, 1:-1])
    n = lap.size
    s = int(lap.sum())
    sq = int((lap * lap).sum())
    return (n * sq - s * s) / (n * n)
