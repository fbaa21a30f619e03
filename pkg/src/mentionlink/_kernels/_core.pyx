# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring kernels for the quantized index hot path.

The float32 full-scan path stays on BLAS (numpy matmul) in both backends;
what lives here are the loops numpy cannot vectorize well: the packed-code
lookup scan with bounded shortlist selection, and int8 candidate rescoring.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scan_scores(const unsigned char[:, ::1] packed,
                const double[:, ::1] lut,
                const long long[::1] leaf_start,
                const long long[::1] probe,
                const float[::1] leaf_base):
    """Score every member of the probed leaves in one pass.

    Leaves are contiguous slabs of the packed code matrix; a member's score
    is leaf_base[p] plus the sum of per-block lookups of ``lut`` (one row of
    16 entries per block) over its code nibbles. Returns (grouped rows,
    scores) for all members in slab order; selection happens on the
    caller's side.
    """
    cdef Py_ssize_t n_probe = probe.shape[0]
    cdef Py_ssize_t npairs = packed.shape[1]
    cdef Py_ssize_t nblocks = lut.shape[0]
    cdef Py_ssize_t total = 0
    cdef Py_ssize_t p, i, j, v, s, e, out_i
    for p in range(n_probe):
        total += <Py_ssize_t> (leaf_start[probe[p] + 1] - leaf_start[probe[p]])
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rows = np.empty(total, dtype=np.int64)
    cdef cnp.ndarray[cnp.float32_t, ndim=1] scores = np.empty(total, dtype=np.float32)
    if total == 0:
        return rows, scores
    # Combine adjacent block tables into 256-entry pair tables so the scan
    # does one lookup per packed byte; an odd trailing block pairs with zero.
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pair = np.empty((npairs, 256))
    cdef double[:, ::1] pair_v = pair
    cdef long long[::1] rows_v = rows
    cdef float[::1] scores_v = scores
    # Four independent accumulators break the add dependency chain.
    cdef double a0, a1, a2, a3
    cdef double base, hi
    cdef Py_ssize_t b4 = npairs - (npairs & 3)
    with nogil:
        for j in range(npairs):
            for v in range(256):
                hi = lut[2 * j + 1, v >> 4] if 2 * j + 1 < nblocks else 0.0
                pair_v[j, v] = lut[2 * j, v & 15] + hi
        out_i = 0
        for p in range(n_probe):
            s = <Py_ssize_t> leaf_start[probe[p]]
            e = <Py_ssize_t> leaf_start[probe[p] + 1]
            base = <double> leaf_base[p]
            for i in range(s, e):
                a0 = base
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                for j in range(0, b4, 4):
                    a0 += pair_v[j, packed[i, j]]
                    a1 += pair_v[j + 1, packed[i, j + 1]]
                    a2 += pair_v[j + 2, packed[i, j + 2]]
                    a3 += pair_v[j + 3, packed[i, j + 3]]
                for j in range(b4, npairs):
                    a0 += pair_v[j, packed[i, j]]
                rows_v[out_i] = i
                scores_v[out_i] = <float> (a0 + a1 + a2 + a3)
                out_i += 1
    return rows, scores


def int8_rescore(const signed char[:, ::1] vecs,
                 const float[::1] scales,
                 const long long[::1] rows,
                 const double[::1] query):
    """scales[rows[i]] * <vecs[rows[i]], query> with float64 accumulation."""
    cdef Py_ssize_t k = rows.shape[0]
    cdef Py_ssize_t d = vecs.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=1] out = np.empty(k, dtype=np.float32)
    cdef float[::1] out_v = out
    cdef Py_ssize_t i, j, r
    cdef double a0, a1, a2, a3
    cdef Py_ssize_t d4 = d - (d & 3)
    with nogil:
        for i in range(k):
            r = <Py_ssize_t> rows[i]
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            a3 = 0.0
            for j in range(0, d4, 4):
                a0 += <double> vecs[r, j] * query[j]
                a1 += <double> vecs[r, j + 1] * query[j + 1]
                a2 += <double> vecs[r, j + 2] * query[j + 2]
                a3 += <double> vecs[r, j + 3] * query[j + 3]
            for j in range(d4, d):
                a0 += <double> vecs[r, j] * query[j]
            out_v[i] = <float> ((a0 + a1 + a2 + a3) * <double> scales[r])
    return out
