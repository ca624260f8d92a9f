# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused whole-utterance forward and BPTT backward.

Same contract as numpy_backend. Dense products go through BLAS dgemm; the
causal time-filter recursions, which numpy can only express via strided
windows, run as hand-written loops. Everything executes without the GIL on
C-contiguous float64 buffers.
"""

import numpy as np

from libc.math cimport exp, fabs
from scipy.linalg.cython_blas cimport dgemm

LOGIT_CLAMP = 30.0
cdef double _CLAMP = 30.0
cdef double _ONE = 1.0
cdef double _ZERO = 0.0


cdef void _mm_x_at(const double[:, ::1] x, const double[:, ::1] a,
                   double[:, ::1] out) noexcept nogil:
    # out(F,N) = x(F,D) @ a(N,D).T via Fortran-order dgemm on the transposes
    cdef int m = <int> a.shape[0], n = <int> x.shape[0], k = <int> x.shape[1]
    cdef int lda = k, ldb = k, ldc = m
    dgemm("T", "N", &m, &n, &k, &_ONE, <double*> &a[0, 0], &lda,
          <double*> &x[0, 0], &ldb, &_ZERO, &out[0, 0], &ldc)


cdef void _mm_ab(const double[:, ::1] x, const double[:, ::1] w,
                 double[:, ::1] out) noexcept nogil:
    # out(F,D) = x(F,N) @ w(N,D)
    cdef int m = <int> w.shape[1], n = <int> x.shape[0], k = <int> x.shape[1]
    cdef int lda = m, ldb = k, ldc = m
    dgemm("N", "N", &m, &n, &k, &_ONE, <double*> &w[0, 0], &lda,
          <double*> &x[0, 0], &ldb, &_ZERO, &out[0, 0], &ldc)


cdef void _mm_atb(const double[:, ::1] d, const double[:, ::1] h,
                  double[:, ::1] out) noexcept nogil:
    # out(N,D) = d(F,N).T @ h(F,D)
    cdef int m = <int> h.shape[1], n = <int> d.shape[1], k = <int> d.shape[0]
    cdef int lda = m, ldb = n, ldc = m
    dgemm("N", "T", &m, &n, &k, &_ONE, <double*> &h[0, 0], &lda,
          <double*> &d[0, 0], &ldb, &_ZERO, &out[0, 0], &ldc)


cdef void _svdf_fwd(const double[:, ::1] s, const double[:, ::1] tf,
                    const double[::1] bias, double[:, ::1] pre,
                    double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t frames = s.shape[0], nodes = s.shape[1], mem = tf.shape[1]
    cdef Py_ssize_t f, n, tau, lim
    cdef double acc
    for f in range(frames):
        lim = mem if f + 1 >= mem else f + 1
        for n in range(nodes):
            acc = bias[n]
            for tau in range(lim):
                acc += tf[n, tau] * s[f - tau, n]
            pre[f, n] = acc
            out[f, n] = acc if acc > 0.0 else 0.0


cdef void _add_bias(double[:, ::1] h, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t frames = h.shape[0], units = h.shape[1]
    cdef Py_ssize_t f, m
    for f in range(frames):
        for m in range(units):
            h[f, m] += b[m]


cdef void _logit_grad(const double[:, ::1] h, const double[::1] targets,
                      double[::1] logits, double[:, ::1] dh) noexcept nogil:
    cdef Py_ssize_t frames = h.shape[0]
    cdef double inv_f = 1.0 / frames
    cdef Py_ssize_t f
    cdef double z, p
    for f in range(frames):
        z = h[f, 0]
        logits[f] = z
        if fabs(z) >= _CLAMP:
            dh[f, 0] = 0.0
        else:
            p = 1.0 / (1.0 + exp(-z))
            dh[f, 0] = (p - targets[f]) * inv_f


cdef void _col_sums(const double[:, ::1] d, double[::1] out) noexcept nogil:
    cdef Py_ssize_t frames = d.shape[0], units = d.shape[1]
    cdef Py_ssize_t f, m
    for m in range(units):
        out[m] = 0.0
    for f in range(frames):
        for m in range(units):
            out[m] += d[f, m]


cdef void _fir_bwd(const double[:, ::1] s, const double[:, ::1] pre,
                   const double[:, ::1] dout, const double[:, ::1] tf,
                   double[:, ::1] gtime, double[::1] gbias,
                   double[:, ::1] dpre, double[:, ::1] ds) noexcept nogil:
    cdef Py_ssize_t frames = s.shape[0], nodes = s.shape[1], mem = tf.shape[1]
    cdef Py_ssize_t f, n, tau, lim
    cdef double v, acc
    for n in range(nodes):
        gbias[n] = 0.0
        for tau in range(mem):
            gtime[n, tau] = 0.0
    for f in range(frames):
        lim = mem if f + 1 >= mem else f + 1
        for n in range(nodes):
            v = dout[f, n] if pre[f, n] > 0.0 else 0.0
            dpre[f, n] = v
            if v != 0.0:
                gbias[n] += v
                for tau in range(lim):
                    gtime[n, tau] += v * s[f - tau, n]
    for f in range(frames):
        lim = mem if frames - f >= mem else frames - f
        for n in range(nodes):
            acc = 0.0
            for tau in range(lim):
                acc += tf[n, tau] * dpre[f + tau, n]
            ds[f, n] = acc


def net_forward(list ops, x):
    """Run the op list over an utterance, returning per-frame logits."""
    cdef double[:, ::1] h = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] a_v, b_v, s_v, pre_v, out_v, w_v
    cdef double[::1] c_v, bias_v
    cdef Py_ssize_t frames = h.shape[0]
    for op in ops:
        if op[0] == "svdf":
            a_v = op[1]
            b_v = op[2]
            c_v = op[3]
            s_arr = np.empty((frames, a_v.shape[0]))
            pre_arr = np.empty((frames, a_v.shape[0]))
            out_arr = np.empty((frames, a_v.shape[0]))
            s_v = s_arr
            pre_v = pre_arr
            out_v = out_arr
            with nogil:
                _mm_x_at(h, a_v, s_v)
                _svdf_fwd(s_v, b_v, c_v, pre_v, out_v)
            h = out_v
        else:
            w_v = op[1]
            bias_v = op[2]
            lin_arr = np.empty((frames, w_v.shape[0]))
            out_v = lin_arr
            with nogil:
                _mm_x_at(h, w_v, out_v)
                _add_bias(out_v, bias_v)
            h = out_v
    return np.asarray(h)[:, 0].copy()


def net_backward(list ops, x, targets, list grad_ops):
    """Fill grad_ops with d(mean-frame BCE)/d(params); returns the logits."""
    cdef double[:, ::1] h = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] targets_v = np.ascontiguousarray(targets, dtype=np.float64)
    cdef Py_ssize_t frames = h.shape[0]
    cdef double[:, ::1] a_v, b_v, s_v, pre_v, out_v, w_v
    cdef double[::1] c_v, bias_v

    caches = []
    hin_arr = np.asarray(h)
    for op in ops:
        if op[0] == "svdf":
            a_v = op[1]
            b_v = op[2]
            c_v = op[3]
            s_arr = np.empty((frames, a_v.shape[0]))
            pre_arr = np.empty((frames, a_v.shape[0]))
            out_arr = np.empty((frames, a_v.shape[0]))
            s_v = s_arr
            pre_v = pre_arr
            out_v = out_arr
            with nogil:
                _mm_x_at(h, a_v, s_v)
                _svdf_fwd(s_v, b_v, c_v, pre_v, out_v)
            caches.append((hin_arr, s_arr, pre_arr))
            h = out_v
            hin_arr = out_arr
        else:
            w_v = op[1]
            bias_v = op[2]
            lin_arr = np.empty((frames, w_v.shape[0]))
            out_v = lin_arr
            with nogil:
                _mm_x_at(h, w_v, out_v)
                _add_bias(out_v, bias_v)
            caches.append(hin_arr)
            h = out_v
            hin_arr = lin_arr

    logits = np.empty(frames)
    dh_arr = np.empty((frames, 1))
    cdef double[::1] logits_v = logits
    cdef double[:, ::1] dh = dh_arr
    with nogil:
        _logit_grad(h, targets_v, logits_v, dh)

    cdef double[:, ::1] hin_v, dout_v, gw_v, gfeat_v, gtime_v, dpre_v, ds_v, dhin_v
    cdef double[::1] gb_v, gbias_v
    for op, gop, cache in zip(reversed(ops), reversed(grad_ops), reversed(caches)):
        if op[0] == "svdf":
            a_v = op[1]
            b_v = op[2]
            hin_v = cache[0]
            s_v = cache[1]
            pre_v = cache[2]
            gfeat_v = gop[1]
            gtime_v = gop[2]
            gbias_v = gop[3]
            dout_v = dh
            dpre_arr = np.empty((frames, s_v.shape[1]))
            ds_arr = np.empty((frames, s_v.shape[1]))
            dhin_arr = np.empty((frames, hin_v.shape[1]))
            dpre_v = dpre_arr
            ds_v = ds_arr
            dhin_v = dhin_arr
            with nogil:
                _fir_bwd(s_v, pre_v, dout_v, b_v, gtime_v, gbias_v, dpre_v, ds_v)
                _mm_atb(ds_v, hin_v, gfeat_v)
                _mm_ab(ds_v, a_v, dhin_v)
            dh = dhin_v
        else:
            w_v = op[1]
            hin_v = cache
            gw_v = gop[1]
            gb_v = gop[2]
            dout_v = dh
            dhin_arr = np.empty((frames, hin_v.shape[1]))
            dhin_v = dhin_arr
            with nogil:
                _mm_atb(dout_v, hin_v, gw_v)
                _col_sums(dout_v, gb_v)
                _mm_ab(dout_v, w_v, dhin_v)
            dh = dhin_v
    return logits
