# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_pykernels`` exactly in signature."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t


def pair_messages_forward(const double[:, ::1] x, const idx_t[::1] dst,
                          const idx_t[::1] src, const double[::1] w,
                          const double[:, ::1] W1, double slope):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], n_pairs = dst.shape[0]
    cdef Py_ssize_t p, k, l, i, j
    cdef double wp, pl, zk
    msg_arr = np.zeros((n, d))
    z_arr = np.zeros((n_pairs, d))
    # transposed so the inner loop runs over contiguous output coordinates
    WT_arr = np.ascontiguousarray(np.asarray(W1).T)
    cdef double[:, ::1] msg = msg_arr
    cdef double[:, ::1] z = z_arr
    cdef const double[:, ::1] WT = WT_arr
    cdef double* zp
    cdef const double* wrow
    for p in range(n_pairs):
        i = dst[p]
        j = src[p]
        wp = w[p]
        zp = &z[p, 0]
        for l in range(d):
            pl = x[i, l] * x[j, l]
            wrow = &WT[l, 0]
            for k in range(d):
                zp[k] += wrow[k] * pl
        for k in range(d):
            zk = zp[k]
            if zk > 0:
                msg[i, k] += wp * zk
            else:
                msg[i, k] += wp * (slope * zk)
    return msg_arr, z_arr


def pair_messages_backward(const double[:, ::1] grad, const double[:, ::1] x,
                           const idx_t[::1] dst, const idx_t[::1] src,
                           const double[::1] w, const double[:, ::1] W1,
                           const double[:, ::1] z, double slope):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], n_pairs = dst.shape[0]
    cdef Py_ssize_t p, k, l, i, j
    cdef double wp, dk
    dx_arr = np.zeros((n, d))
    dW_arr = np.zeros((d, d))
    prod_arr = np.empty(d)
    dz_arr = np.empty(d)
    dprod_arr = np.empty(d)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dW = dW_arr
    cdef double[::1] prod = prod_arr
    cdef double[::1] dz = dz_arr
    cdef double[::1] dprod = dprod_arr
    cdef double* dwrow
    cdef const double* wrow
    for p in range(n_pairs):
        i = dst[p]
        j = src[p]
        wp = w[p]
        for l in range(d):
            prod[l] = x[i, l] * x[j, l]
            dprod[l] = 0.0
        for k in range(d):
            if z[p, k] > 0:
                dz[k] = wp * grad[i, k]
            else:
                dz[k] = (wp * grad[i, k]) * slope
        for k in range(d):
            dk = dz[k]
            dwrow = &dW[k, 0]
            wrow = &W1[k, 0]
            for l in range(d):
                dwrow[l] += dk * prod[l]
                dprod[l] += dk * wrow[l]
        for l in range(d):
            dx[i, l] += dprod[l] * x[j, l]
            dx[j, l] += dprod[l] * x[i, l]
    return dx_arr, dW_arr


def scatter_add_rows(values, index, Py_ssize_t n_out, weights=None):
    vals = np.ascontiguousarray(values, dtype=np.float64)
    shape = vals.shape
    cdef double[:, ::1] v = vals.reshape(shape[0], int(np.prod(shape[1:])))
    cdef const idx_t[::1] idx = np.ascontiguousarray(index, dtype=np.int64)
    cdef Py_ssize_t m = v.shape[0], width = v.shape[1], r, c, t
    out_arr = np.zeros((n_out, width))
    cdef double[:, ::1] out = out_arr
    cdef const double[::1] wt
    if weights is None:
        for r in range(m):
            t = idx[r]
            for c in range(width):
                out[t, c] += v[r, c]
    else:
        wt = np.ascontiguousarray(weights, dtype=np.float64)
        for r in range(m):
            t = idx[r]
            for c in range(width):
                out[t, c] += wt[r] * v[r, c]
    return out_arr.reshape((n_out,) + shape[1:])


def category_cooccurrence(const idx_t[::1] outfit_ptr, const idx_t[::1] slot_category,
                          Py_ssize_t n_categories):
    cdef Py_ssize_t n_outfits = outfit_ptr.shape[0] - 1
    cdef Py_ssize_t o, s, a, b, ca, cb, n_present
    pair_arr = np.zeros((n_categories, n_categories), dtype=np.int64)
    freq_arr = np.zeros(n_categories, dtype=np.int64)
    count_arr = np.zeros(n_categories, dtype=np.int64)
    present_arr = np.empty(n_categories, dtype=np.int64)
    cdef idx_t[:, ::1] pair = pair_arr
    cdef idx_t[::1] freq = freq_arr
    cdef idx_t[::1] count = count_arr
    cdef idx_t[::1] present = present_arr
    for o in range(n_outfits):
        n_present = 0
        for s in range(outfit_ptr[o], outfit_ptr[o + 1]):
            ca = slot_category[s]
            if count[ca] == 0:
                present[n_present] = ca
                n_present += 1
            count[ca] += 1
            freq[ca] += 1
        for a in range(n_present):
            ca = present[a]
            if count[ca] >= 2:
                pair[ca, ca] += 1
            for b in range(a + 1, n_present):
                cb = present[b]
                pair[ca, cb] += 1
                pair[cb, ca] += 1
        for a in range(n_present):
            count[present[a]] = 0
    return pair_arr, freq_arr
