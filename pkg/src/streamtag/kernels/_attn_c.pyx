# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled multi-head attention kernel: BLAS matmuls + fused softmax."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_nt(double* a, int n, double* b, int m, int d, double alpha,
                   double* c) noexcept nogil:
    # row-major C (n, m) = alpha * A (n, d) @ B (m, d)^T
    # via column-major dgemm: C^T (m, n) = B (m, d) @ A^T (d, n)
    cdef char ta = b'T', tb = b'N'
    cdef int M = m, N = n, K = d
    cdef double beta = 0.0
    dgemm(&ta, &tb, &M, &N, &K, &alpha, b, &K, a, &K, &beta, c, &M)


cdef void _gemm_nn(double* a, int n, int m, double* b, int d,
                   double* c) noexcept nogil:
    # row-major C (n, d) = A (n, m) @ B (m, d)
    # via column-major dgemm: C^T (d, n) = B^T (d, m) @ A^T (m, n)
    cdef char ta = b'N', tb = b'N'
    cdef int M = d, N = n, K = m
    cdef double alpha = 1.0, beta = 0.0
    dgemm(&ta, &tb, &M, &N, &K, &alpha, b, &M, a, &K, &beta, c, &M)


def attention_heads(double[:, :, ::1] q, double[:, :, ::1] k,
                    double[:, :, ::1] v, double scale):
    """softmax(q @ k.T * scale) @ v per head; shapes as the numpy backend."""
    cdef int H = q.shape[0], N = q.shape[1], hd = q.shape[2]
    cdef int M = k.shape[1]
    if k.shape[0] != H or v.shape[0] != H or v.shape[1] != M \
            or k.shape[2] != hd or v.shape[2] != hd:
        raise ValueError("head/context shape mismatch")
    out = np.empty((H, N, hd), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    logits_arr = np.empty((N, M), dtype=np.float64)
    cdef double[:, ::1] logits = logits_arr
    cdef int h, i, j
    cdef double rowmax, total, e
    with nogil:
        for h in range(H):
            _gemm_nt(&q[h, 0, 0], N, &k[h, 0, 0], M, hd, scale, &logits[0, 0])
            for i in range(N):
                rowmax = logits[i, 0]
                for j in range(1, M):
                    if logits[i, j] > rowmax:
                        rowmax = logits[i, j]
                total = 0.0
                for j in range(M):
                    e = exp(logits[i, j] - rowmax)
                    logits[i, j] = e
                    total += e
                for j in range(M):
                    logits[i, j] /= total
            _gemm_nn(&logits[0, 0], N, M, &v[h, 0, 0], hd, &o[h, 0, 0])
    return out
