# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``.

Read that module's docstring first: the two implementations share one
arithmetic contract (sequential accumulation order, identical gain
expression trees, identical tie rules) so that fitted models are
bitwise-equal across backends. The build disables FMA contraction for the
same reason. Any change here must be mirrored there and vice versa.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY


def scan_feature(cnp.int32_t[::1] pres_idx, double[::1] pres_val,
                 cnp.int32_t[::1] miss_idx, cnp.int32_t[::1] node_of,
                 double[::1] g, double[::1] node_g, cnp.int64_t[::1] node_cnt,
                 double lam, double gamma, double min_child_weight,
                 double[::1] out_gain, double[::1] out_thresh,
                 cnp.uint8_t[::1] out_dleft, cnp.uint8_t[::1] out_has):
    """Best split of one feature for every active node slot.

    Same contract as ``_kernels_py.scan_feature``; one pass over the
    presorted present rows with per-slot running state replaces the
    per-slot cumsum slices of the fallback.
    """
    cdef Py_ssize_t S = node_g.shape[0]
    cdef Py_ssize_t P = pres_idx.shape[0]
    cdef Py_ssize_t M = miss_idx.shape[0]

    run_g_arr = np.zeros(S, dtype=np.float64)
    run_c_arr = np.zeros(S, dtype=np.int64)
    prev_arr = np.zeros(S, dtype=np.float64)
    seen_arr = np.zeros(S, dtype=np.uint8)
    miss_g_arr = np.zeros(S, dtype=np.float64)
    miss_c_arr = np.zeros(S, dtype=np.int64)
    gt_arr = np.zeros(S, dtype=np.float64)

    cdef double[::1] run_g = run_g_arr
    cdef cnp.int64_t[::1] run_c = run_c_arr
    cdef double[::1] prev = prev_arr
    cdef cnp.uint8_t[::1] seen = seen_arr
    cdef double[::1] miss_g = miss_g_arr
    cdef cnp.int64_t[::1] miss_c = miss_c_arr
    cdef double[::1] gt_term = gt_arr

    cdef Py_ssize_t p, s, i
    cdef double val, gval, mid, gn
    cdef double gl_r, gr_r, gl_l, gr_l, gain_r, gain_l, cand
    cdef cnp.int64_t cn, hl_ri, hr_ri, hl_li, hr_li
    cdef bint sep, use_left

    with nogil:
        for s in range(S):
            out_gain[s] = -INFINITY
            out_thresh[s] = 0.0
            out_dleft[s] = 0
            out_has[s] = 0
            gt_term[s] = node_g[s] * node_g[s] / (<double> node_cnt[s] + lam)

        for p in range(M):
            i = miss_idx[p]
            s = node_of[i]
            if s < 0:
                continue
            miss_g[s] += g[i]
            miss_c[s] += 1

        for p in range(P):
            i = pres_idx[p]
            s = node_of[i]
            if s < 0:
                continue
            val = pres_val[p]
            gval = g[i]
            if seen[s] and val != prev[s]:
                mid = 0.5 * (prev[s] + val)
                sep = mid != val
                gn = node_g[s]
                cn = node_cnt[s]
                gl_r = run_g[s]
                hl_ri = run_c[s]
                gr_r = gn - gl_r
                hr_ri = cn - hl_ri
                gl_l = gl_r + miss_g[s]
                hl_li = hl_ri + miss_c[s]
                gr_l = gn - gl_l
                hr_li = cn - hl_li
                if sep and hl_ri >= min_child_weight and hr_ri >= min_child_weight:
                    gain_r = 0.5 * (gl_r * gl_r / (hl_ri + lam) + gr_r * gr_r / (hr_ri + lam) - gt_term[s]) - gamma
                else:
                    gain_r = -INFINITY
                if sep and hl_li >= min_child_weight and hr_li >= min_child_weight:
                    gain_l = 0.5 * (gl_l * gl_l / (hl_li + lam) + gr_l * gr_l / (hr_li + lam) - gt_term[s]) - gamma
                else:
                    gain_l = -INFINITY
                use_left = gain_l >= gain_r
                cand = gain_l if use_left else gain_r
                if cand != -INFINITY and cand > out_gain[s]:
                    out_gain[s] = cand
                    out_thresh[s] = mid
                    out_dleft[s] = 1 if use_left else 0
                    out_has[s] = 1
            run_g[s] += gval
            run_c[s] += 1
            prev[s] = val
            seen[s] = 1


def predict_rows(double[:, ::1] values, cnp.uint8_t[:, ::1] missing,
                 cnp.int32_t[::1] tfeat, double[::1] tthresh,
                 cnp.uint8_t[::1] tdleft, cnp.int32_t[::1] tleft,
                 cnp.int32_t[::1] tright, double[::1] tvalue,
                 cnp.int64_t[::1] offsets, double base, double lr,
                 double[::1] out):
    """Row-by-row tree walk; same contract as ``_kernels_py.predict_rows``."""
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t ntrees = offsets.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef cnp.int64_t cur
    cdef cnp.int32_t f

    with nogil:
        for i in range(n):
            out[i] = base
            for k in range(ntrees):
                cur = offsets[k]
                f = tfeat[cur]
                while f >= 0:
                    if missing[i, f]:
                        cur = tleft[cur] if tdleft[cur] else tright[cur]
                    else:
                        cur = tleft[cur] if values[i, f] <= tthresh[cur] else tright[cur]
                    f = tfeat[cur]
                out[i] = out[i] + lr * tvalue[cur]
