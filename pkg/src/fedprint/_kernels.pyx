# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled minibatch SGD for the ReLU MLP.

All arrays are C-contiguous float64. Row-major products are expressed as
column-major BLAS calls on the transposed problem. The whole epoch loop runs
without the GIL so client trainings can overlap in threads.
"""

import numpy as np

from libc.math cimport exp
from libc.stdint cimport int64_t
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport dgemm


cdef void _gemm(char ta, char tb, int m, int n, int k,
                double* a, int lda, double* b, int ldb,
                double* c, int ldc) noexcept nogil:
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &zero, c, &ldc)


def sgd_epochs(list weights, list biases, const double[:, ::1] x,
               const int64_t[::1] y, const int64_t[:, ::1] orders,
               double lr, Py_ssize_t batch_size):
    cdef int n_layers = len(weights)
    cdef Py_ssize_t n_epochs = orders.shape[0]
    cdef Py_ssize_t n = orders.shape[1]
    cdef int cap = <int>min(batch_size, n) if n > 0 else 1
    if n_layers < 1 or batch_size < 1:
        raise ValueError("need at least one layer and batch_size >= 1")

    dims_py = [weights[0].shape[1]] + [wt.shape[0] for wt in weights]
    cdef int max_dim = max(dims_py)
    cdef int max_w = max(wt.size for wt in weights)

    # Keep the Python buffers alive for the duration of the call.
    acts_py = [np.empty((cap, dims_py[l])) for l in range(n_layers)]
    logits_py = np.empty((cap, dims_py[n_layers]))
    delta_a = np.empty(cap * max_dim)
    delta_b = np.empty(cap * max_dim)
    gw_py = np.empty(max_w)
    gb_py = np.empty(max_dim)

    cdef int* dims = <int*>malloc((n_layers + 1) * sizeof(int))
    cdef double** wp = <double**>malloc(n_layers * sizeof(double*))
    cdef double** bp = <double**>malloc(n_layers * sizeof(double*))
    cdef double** ap = <double**>malloc(n_layers * sizeof(double*))
    if dims == NULL or wp == NULL or bp == NULL or ap == NULL:
        free(dims); free(wp); free(bp); free(ap)
        raise MemoryError()

    cdef double[:, ::1] wv
    cdef double[::1] bv
    cdef double[:, ::1] av
    cdef int l
    for l in range(n_layers + 1):
        dims[l] = dims_py[l]
    for l in range(n_layers):
        wv = weights[l]
        bv = biases[l]
        av = acts_py[l]
        wp[l] = &wv[0, 0]
        bp[l] = &bv[0]
        ap[l] = &av[0, 0]
    cdef double[:, ::1] lv = logits_py
    cdef double[::1] dav = delta_a
    cdef double[::1] dbv = delta_b
    cdef double[::1] gwv = gw_py
    cdef double[::1] gbv = gb_py
    cdef double* logits = &lv[0, 0]
    cdef double* delta = &dav[0]
    cdef double* dprev = &dbv[0]
    cdef double* gw = &gwv[0]
    cdef double* gb = &gbv[0]
    cdef double* tmp

    cdef Py_ssize_t e, start, i, j, rows, idx
    cdef int n_in, n_out, irows
    cdef double m, s, v
    cdef double* a
    cdef double* z
    cdef double* w
    cdef double* b
    cdef double* row

    try:
        with nogil:
            for e in range(n_epochs):
                start = 0
                while start < n:
                    rows = batch_size if start + batch_size <= n else n - start
                    irows = <int>rows
                    # gather
                    n_in = dims[0]
                    z = ap[0]
                    for i in range(rows):
                        idx = orders[e, start + i]
                        for j in range(n_in):
                            z[i * n_in + j] = x[idx, j]
                    # forward
                    for l in range(n_layers):
                        n_in = dims[l]
                        n_out = dims[l + 1]
                        z = ap[l + 1] if l < n_layers - 1 else logits
                        w = wp[l]
                        b = bp[l]
                        _gemm(b'T', b'N', n_out, irows, n_in,
                              w, n_in, ap[l], n_in, z, n_out)
                        for i in range(rows):
                            row = z + i * n_out
                            for j in range(n_out):
                                row[j] = row[j] + b[j]
                        if l < n_layers - 1:
                            for i in range(rows * n_out):
                                z[i] = z[i] if z[i] > 0.0 else 0.0
                    # softmax cross-entropy gradient w.r.t. logits
                    n_out = dims[n_layers]
                    for i in range(rows):
                        z = logits + i * n_out
                        m = z[0]
                        for j in range(1, n_out):
                            if z[j] > m:
                                m = z[j]
                        s = 0.0
                        for j in range(n_out):
                            v = exp(z[j] - m)
                            delta[i * n_out + j] = v
                            s = s + v
                        for j in range(n_out):
                            delta[i * n_out + j] = delta[i * n_out + j] / s
                        delta[i * n_out + y[orders[e, start + i]]] -= 1.0
                        for j in range(n_out):
                            delta[i * n_out + j] = delta[i * n_out + j] / rows
                    # backward + update
                    for l in range(n_layers - 1, -1, -1):
                        n_in = dims[l]
                        n_out = dims[l + 1]
                        a = ap[l]
                        w = wp[l]
                        b = bp[l]
                        _gemm(b'N', b'T', n_in, n_out, irows,
                              a, n_in, delta, n_out, gw, n_in)
                        for j in range(n_out):
                            gb[j] = 0.0
                        for i in range(rows):
                            row = delta + i * n_out
                            for j in range(n_out):
                                gb[j] = gb[j] + row[j]
                        if l > 0:
                            _gemm(b'N', b'N', n_in, irows, n_out,
                                  w, n_in, delta, n_out, dprev, n_in)
                            for i in range(rows * n_in):
                                dprev[i] = dprev[i] if a[i] > 0.0 else 0.0
                            tmp = delta
                            delta = dprev
                            dprev = tmp
                        for i in range(n_out * n_in):
                            w[i] = w[i] - lr * gw[i]
                        for j in range(n_out):
                            b[j] = b[j] - lr * gb[j]
                    start += batch_size
    finally:
        free(dims)
        free(wp)
        free(bp)
        free(ap)
