# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``.

Results must stay bit-identical to the numpy versions; keep the floating
point expressions in the same order when editing either file.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()

BACKEND = "cython"


def rasterize_polygon(xs_in, ys_in, int height, int width):
    cdef const double[::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef const double[::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    out_arr = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t n = xs.shape[0]
    if n == 0:
        return out_arr

    cdef double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0]
    cdef Py_ssize_t k
    for k in range(1, n):
        if xs[k] < xmin: xmin = xs[k]
        if xs[k] > xmax: xmax = xs[k]
        if ys[k] < ymin: ymin = ys[k]
        if ys[k] > ymax: ymax = ys[k]

    cdef long i0 = <long>floor(ymin - 0.5)
    cdef long i1 = <long>ceil(ymax - 0.5)
    cdef long j0 = <long>floor(xmin - 0.5)
    cdef long j1 = <long>ceil(xmax - 0.5)
    if i0 < 0: i0 = 0
    if j0 < 0: j0 = 0
    if i1 > height - 1: i1 = height - 1
    if j1 > width - 1: j1 = width - 1
    if i1 < i0 or j1 < j0:
        return out_arr

    # per-row scratch: edges whose closed y-range contains the scanline
    cdef cnp.intp_t[::1] active = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t n_active, t
    cdef long i, j
    cdef double yc, xc, x0, y0, x1, y1, a, b, lo, hi
    cdef bint inside, on_edge, straddle

    for i in range(i0, i1 + 1):
        yc = i + 0.5
        n_active = 0
        for k in range(n):
            y0 = ys[k]
            y1 = ys[(k + 1) % n]
            lo = y0 if y0 < y1 else y1
            hi = y1 if y0 < y1 else y0
            if yc >= lo and yc <= hi:
                active[n_active] = k
                n_active += 1
        if n_active == 0:
            continue
        for j in range(j0, j1 + 1):
            xc = j + 0.5
            inside = False
            on_edge = False
            for t in range(n_active):
                k = active[t]
                x0 = xs[k]
                y0 = ys[k]
                x1 = xs[(k + 1) % n]
                y1 = ys[(k + 1) % n]
                a = (xc - x0) * (y1 - y0)
                b = (x1 - x0) * (yc - y0)
                straddle = (y0 > yc) != (y1 > yc)
                if straddle:
                    if y1 > y0:
                        if a < b:
                            inside = not inside
                    else:
                        if a > b:
                            inside = not inside
                if a == b:
                    lo = x0 if x0 < x1 else x1
                    hi = x1 if x0 < x1 else x0
                    if xc >= lo and xc <= hi:
                        on_edge = True
            if inside or on_edge:
                out[i, j] = 1
    return out_arr


def rle_encode(bits):
    flat_arr = np.ascontiguousarray(np.asarray(bits, dtype=np.uint8).ravel(order="F"))
    cdef const cnp.uint8_t[::1] flat = flat_arr
    cdef Py_ssize_t n = flat.shape[0], p
    counts_arr = np.empty(n + 2, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef Py_ssize_t m = 0
    cdef cnp.int64_t run = 0
    cdef cnp.uint8_t cur = 0
    for p in range(n):
        if (flat[p] != 0) != (cur != 0):
            counts[m] = run
            m += 1
            run = 0
            cur = 1 - cur
        run += 1
    counts[m] = run
    m += 1
    return counts_arr[:m].copy()


def rle_decode(counts_in, int height, int width):
    cdef const cnp.int64_t[::1] counts = np.ascontiguousarray(counts_in, dtype=np.int64)
    flat_arr = np.zeros(<Py_ssize_t>height * width, dtype=np.uint8)
    cdef cnp.uint8_t[::1] flat = flat_arr
    cdef Py_ssize_t r, p = 0, q
    for r in range(counts.shape[0]):
        if r % 2 == 1:
            for q in range(p, p + counts[r]):
                flat[q] = 1
        p += counts[r]
    return flat_arr.reshape((height, width), order="F")


cdef cnp.int64_t _intersect(const cnp.int64_t[::1] a, const cnp.int64_t[::1] b) nogil:
    # sweep both run lists; runs at odd positions are foreground
    cdef Py_ssize_t ia = 0, ib = 0
    cdef cnp.int64_t sa = 0, sb = 0, ea, eb, lo, hi, total = 0
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    # advance to first foreground run of each
    if na < 2 or nb < 2:
        return 0
    sa = a[0]
    ea = sa + a[1]
    ia = 1
    sb = b[0]
    eb = sb + b[1]
    ib = 1
    while True:
        lo = sa if sa > sb else sb
        hi = ea if ea < eb else eb
        if hi > lo:
            total += hi - lo
        if ea < eb:
            if ia + 2 >= na:
                break
            sa = ea + a[ia + 1]
            ea = sa + a[ia + 2]
            ia += 2
        else:
            if ib + 2 >= nb:
                break
            sb = eb + b[ib + 1]
            eb = sb + b[ib + 2]
            ib += 2
    return total


def rle_intersection_area(a, b):
    cdef const cnp.int64_t[::1] ca = np.ascontiguousarray(a, dtype=np.int64)
    cdef const cnp.int64_t[::1] cb = np.ascontiguousarray(b, dtype=np.int64)
    return int(_intersect(ca, cb))


cdef cnp.int64_t _area(const cnp.int64_t[::1] c) nogil:
    cdef Py_ssize_t r
    cdef cnp.int64_t s = 0
    for r in range(1, c.shape[0], 2):
        s += c[r]
    return s


def rle_iou_matrix(a_list, b_list):
    cdef Py_ssize_t na = len(a_list), nb = len(b_list), i, j
    out_arr = np.zeros((na, nb), dtype=np.float64)
    if na == 0 or nb == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    a_c = [np.ascontiguousarray(c, dtype=np.int64) for c in a_list]
    b_c = [np.ascontiguousarray(c, dtype=np.int64) for c in b_list]
    area_b = np.array([_area(c) for c in b_c], dtype=np.int64)
    cdef cnp.int64_t[::1] ab = area_b
    cdef cnp.int64_t aa, inter, union
    cdef const cnp.int64_t[::1] ca, cb
    for i in range(na):
        ca = a_c[i]
        aa = _area(ca)
        for j in range(nb):
            cb = b_c[j]
            inter = _intersect(ca, cb)
            union = aa + ab[j] - inter
            if union > 0:
                out[i, j] = <double>inter / <double>union
    return out_arr


def laplacian_variance(gray):
    cdef const cnp.int64_t[:, ::1] g = np.ascontiguousarray(gray, dtype=np.int64)
    cdef Py_ssize_t h = g.shape[0], w = g.shape[1], i, j
    cdef cnp.int64_t v, s = 0, sq = 0
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            v = g[i - 1, j] + g[i + 1, j] + g[i, j - 1] + g[i, j + 1] - 4 * g[i, j]
            s += v
            sq += v * v
    n = (h - 2) * (w - 2)
    S = int(s)
    return (n * int(sq) - S * S) / (n * n)
