# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops for the no-reference metrics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log10

cnp.import_array()


def loe_flip_count(const double[::1] enh, const double[::1] orig):
    """Number of ordered pixel pairs whose lightness order differs.

    With ``E = [e_p >= e_q]`` and ``O = [o_p >= o_q]`` the flip count is
    ``sum E + sum O - 2 sum(E and O)``. The joint term is a dominance count,
    done with a Fenwick tree over ``orig`` ranks in O(N log N).
    """
    cdef Py_ssize_t n = enh.shape[0]
    if orig.shape[0] != n:
        raise ValueError("lightness vectors differ in length")
    if n == 0:
        return 0
    e_np, o_np = np.asarray(enh), np.asarray(orig)
    e_sorted, o_sorted = np.sort(e_np), np.sort(o_np)
    cdef long long sum_e = int(np.searchsorted(e_sorted, e_np, side="right").sum())
    cdef long long sum_o = int(np.searchsorted(o_sorted, o_np, side="right").sum())
    # 1-based rank of orig with ties sharing the highest rank of their run
    cdef cnp.int64_t[::1] rank = np.searchsorted(o_sorted, o_np, side="right").astype(np.int64)
    cdef cnp.int64_t[::1] order = np.argsort(e_np, kind="stable").astype(np.int64)
    cdef cnp.int64_t[::1] tree = np.zeros(n + 1, dtype=np.int64)
    cdef long long joint = 0, c
    cdef Py_ssize_t g0 = 0, g1, k, r
    while g0 < n:
        g1 = g0
        while g1 < n and enh[order[g1]] == enh[order[g0]]:
            g1 += 1
        # insert the tie group first so members count each other and themselves
        for k in range(g0, g1):
            r = rank[order[k]]
            while r <= n:
                tree[r] += 1
                r += r & -r
        for k in range(g0, g1):
            r = rank[order[k]]
            c = 0
            while r > 0:
                c += tree[r]
                r -= r & -r
            joint += c
        g0 = g1
    return sum_e + sum_o - 2 * joint


def eme_tiles(const double[:, ::1] gray, Py_ssize_t block, double eps):
    """Per-tile ``20*log10((max+eps)/(min+eps))`` over full block tiles."""
    cdef Py_ssize_t h = gray.shape[0], w = gray.shape[1]
    cdef Py_ssize_t bh = block if block <= h else h
    cdef Py_ssize_t bw = block if block <= w else w
    cdef Py_ssize_t th = h // bh, tw = w // bw
    cdef Py_ssize_t i, j, y, x
    cdef double lo, hi, v
    out = np.empty((th, tw), dtype=np.float64)
    cdef double[:, ::1] res = out
    for i in range(th):
        for j in range(tw):
            lo = gray[i * bh, j * bw]
            hi = lo
            for y in range(i * bh, (i + 1) * bh):
                for x in range(j * bw, (j + 1) * bw):
                    v = gray[y, x]
                    if v < lo:
                        lo = v
                    elif v > hi:
                        hi = v
            res[i, j] = 20.0 * log10((hi + eps) / (lo + eps))
    return out
