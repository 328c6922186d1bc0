# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward/backward kernels over a flattened computation graph.

Nodes are visited in index (topological) order; each node reads its CSR
input range. Same contract as ``lrnn._pykernels``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


def forward(flat, double[:, :, ::1] W, double[:, ::1] B):
    cdef Py_ssize_t n = flat.n_nodes
    cdef Py_ssize_t d = flat.d
    values_arr = np.array(flat.fact_values, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] values = values_arr
    cdef const signed char[::1] kind = flat.kind
    cdef const long long[::1] ptr = flat.in_ptr.astype(np.int64, copy=False)
    cdef const long long[::1] src = flat.in_src.astype(np.int64, copy=False)
    cdef const long long[::1] par = flat.in_param.astype(np.int64, copy=False)
    cdef const long long[::1] bias = flat.bias_idx.astype(np.int64, copy=False)
    cdef Py_ssize_t i, e, r, c, s, lo, hi
    cdef long long p
    cdef double acc, inv
    with nogil:
        for i in range(n):
            if kind[i] == 0:
                continue
            lo = ptr[i]
            hi = ptr[i + 1]
            for r in range(d):
                values[i, r] = 0.0
            for e in range(lo, hi):
                s = src[e]
                p = par[e]
                if p < 0:
                    for r in range(d):
                        values[i, r] += values[s, r]
                else:
                    for r in range(d):
                        acc = 0.0
                        for c in range(d):
                            acc = acc + W[p, r, c] * values[s, c]
                        values[i, r] += acc
            if kind[i] == 2:
                if hi > lo:
                    inv = 1.0 / (hi - lo)
                    for r in range(d):
                        values[i, r] *= inv
            else:
                if bias[i] >= 0:
                    for r in range(d):
                        values[i, r] += B[bias[i], r]
                for r in range(d):
                    values[i, r] = tanh(values[i, r])
    return values_arr


def backward(flat, double[:, ::1] values, double[:, :, ::1] W, double[:, ::1] B,
             double[:, ::1] grad):
    cdef Py_ssize_t n = flat.n_nodes
    cdef Py_ssize_t d = flat.d
    gW_arr = np.zeros((W.shape[0], d, d))
    gB_arr = np.zeros((B.shape[0], d))
    cdef double[:, :, ::1] gW = gW_arr
    cdef double[:, ::1] gB = gB_arr
    gz_arr = np.zeros(d)
    cdef double[::1] gz = gz_arr
    cdef const signed char[::1] kind = flat.kind
    cdef const long long[::1] ptr = flat.in_ptr.astype(np.int64, copy=False)
    cdef const long long[::1] src = flat.in_src.astype(np.int64, copy=False)
    cdef const long long[::1] par = flat.in_param.astype(np.int64, copy=False)
    cdef const long long[::1] bias = flat.bias_idx.astype(np.int64, copy=False)
    cdef Py_ssize_t i, e, r, c, s, lo, hi
    cdef long long p
    cdef double y, acc, scale
    with nogil:
        for i in range(n - 1, -1, -1):
            if kind[i] == 0:
                continue
            lo = ptr[i]
            hi = ptr[i + 1]
            if kind[i] == 2:
                if hi == lo:
                    continue
                scale = 1.0 / (hi - lo)
                for r in range(d):
                    gz[r] = grad[i, r] * scale
            else:
                for r in range(d):
                    y = values[i, r]
                    gz[r] = grad[i, r] * (1.0 - y * y)
                if bias[i] >= 0:
                    for r in range(d):
                        gB[bias[i], r] += gz[r]
            for e in range(lo, hi):
                s = src[e]
                p = par[e]
                if p < 0:
                    for r in range(d):
                        grad[s, r] += gz[r]
                else:
                    for c in range(d):
                        acc = 0.0
                        for r in range(d):
                            acc = acc + W[p, r, c] * gz[r]
                            gW[p, r, c] += gz[r] * values[s, c]
                        grad[s, c] += acc
    return gW_arr, gB_arr
