# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see _pykernels.py for the reference semantics.

Complex products are spelled out on real and imaginary parts so the C
compiler does not route them through the NaN-aware ``__muldc3`` helper.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


def phase_conjugate(double complex[:, :, ::1] rho, const double[:, ::1] phases):
    cdef Py_ssize_t nb = rho.shape[0], d = rho.shape[1]
    cdef Py_ssize_t b, i, j
    cdef double vr, vi, wr, wi, xr, xi
    cdef double[::1] cr = np.empty(d), ci = np.empty(d)
    cdef double *p
    with nogil:
        for b in range(nb):
            for i in range(d):
                cr[i] = cos(phases[b, i])
                ci[i] = -sin(phases[b, i])
            for i in range(d):
                vr = cr[i]
                vi = ci[i]
                p = <double *> &rho[b, i, 0]
                for j in range(d):
                    if i == j:
                        continue
                    # w = v_i * conj(v_j)
                    wr = vr * cr[j] + vi * ci[j]
                    wi = vi * cr[j] - vr * ci[j]
                    xr = p[2 * j]
                    xi = p[2 * j + 1]
                    p[2 * j] = xr * wr - xi * wi
                    p[2 * j + 1] = xr * wi + xi * wr


def scale_axis(double complex[:, :, ::1] rho, const double complex[:, ::1] factor,
               Py_ssize_t left, Py_ssize_t dim, Py_ssize_t right):
    cdef Py_ssize_t nb = rho.shape[0]
    cdef Py_ssize_t b, l1, i, r1, l2, j, r2, row, col
    cdef double fr, fi, xr, xi
    cdef double *p
    with nogil:
        for b in range(nb):
            for l1 in range(left):
                for i in range(dim):
                    for r1 in range(right):
                        row = (l1 * dim + i) * right + r1
                        p = <double *> &rho[b, row, 0]
                        for l2 in range(left):
                            for j in range(dim):
                                fr = factor[i, j].real
                                fi = factor[i, j].imag
                                col = (l2 * dim + j) * right
                                for r2 in range(col, col + right):
                                    xr = p[2 * r2]
                                    xi = p[2 * r2 + 1]
                                    p[2 * r2] = xr * fr - xi * fi
                                    p[2 * r2 + 1] = xr * fi + xi * fr


def coherence_mean(const double[:, ::1] phases):
    cdef Py_ssize_t n = phases.shape[0], s = phases.shape[1]
    cdef Py_ssize_t k, e, f
    cdef double[::1] cr = np.empty(s), ci = np.empty(s)
    cdef double[:, ::1] acc_re = np.zeros((s, s))
    cdef double[:, ::1] acc_im = np.zeros((s, s))
    out_arr = np.empty((s, s), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    with nogil:
        for k in range(n):
            for e in range(s):
                cr[e] = cos(phases[k, e])
                ci[e] = -sin(phases[k, e])
            for e in range(s):
                for f in range(e + 1, s):
                    acc_re[e, f] += cr[e] * cr[f] + ci[e] * ci[f]
                    acc_im[e, f] += ci[e] * cr[f] - cr[e] * ci[f]
        for e in range(s):
            out[e, e] = 1.0
            for f in range(e + 1, s):
                out[e, f] = (acc_re[e, f] + 1j * acc_im[e, f]) / n
                out[f, e] = (acc_re[e, f] - 1j * acc_im[e, f]) / n
    return out_arr
def categorical_sample(const double[:, ::1] probs, const double[::1] u):
    cdef Py_ssize_t nb = probs.shape[0], nk = probs.shape[1]
    cdef Py_ssize_t b, k, last
    cdef double total, target, acc
    out_arr = np.empty(nb, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    with nogil:
        for b in range(nb):
            total = 0.0
            last = 0
            for k in range(nk):
                total += probs[b, k]
                if probs[b, k] > 0:
                    last = k
            target = u[b] * total
            acc = 0.0
            out[b] = last
            for k in range(nk):
                acc += probs[b, k]
                if acc > target:
                    out[b] = k if k < last else last
                    break
    return out_arr
