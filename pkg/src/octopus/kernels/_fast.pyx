# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the decision head's hot loops.

Same signatures and semantics as octopus.kernels.pure; agreement is
checked by the test suite to float64 round-off.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

DEF LN_EPS = 1e-5


def softmax_rows(x):
    cdef cnp.ndarray[double, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] out = np.empty_like(xa)
    cdef Py_ssize_t n = xa.shape[0], m = xa.shape[1], i, j
    cdef double mx, s
    for i in range(n):
        mx = xa[i, 0]
        for j in range(1, m):
            if xa[i, j] > mx:
                mx = xa[i, j]
        s = 0.0
        for j in range(m):
            out[i, j] = exp(xa[i, j] - mx)
            s += out[i, j]
        for j in range(m):
            out[i, j] /= s
    return out


def attention_forward(q, k, v):
    cdef cnp.ndarray[double, ndim=2] qa = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] ka = np.ascontiguousarray(k, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] va = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t nq = qa.shape[0], nk = ka.shape[0]
    cdef Py_ssize_t dk = qa.shape[1], dv = va.shape[1]
    cdef cnp.ndarray[double, ndim=2] attn = np.empty((nq, nk))
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((nq, dv))
    cdef Py_ssize_t i, j, c
    cdef double scale = 1.0 / sqrt(<double> dk)
    cdef double acc, mx, s
    for i in range(nq):
        for j in range(nk):
            acc = 0.0
            for c in range(dk):
                acc += qa[i, c] * ka[j, c]
            attn[i, j] = acc * scale
        mx = attn[i, 0]
        for j in range(1, nk):
            if attn[i, j] > mx:
                mx = attn[i, j]
        s = 0.0
        for j in range(nk):
            attn[i, j] = exp(attn[i, j] - mx)
            s += attn[i, j]
        for j in range(nk):
            attn[i, j] /= s
        for j in range(nk):
            acc = attn[i, j]
            for c in range(dv):
                out[i, c] += acc * va[j, c]
    return out, attn


def attention_backward(d_out, q, k, v, attn):
    cdef cnp.ndarray[double, ndim=2] doa = np.ascontiguousarray(d_out, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] qa = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] ka = np.ascontiguousarray(k, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] va = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] at = np.ascontiguousarray(attn, dtype=np.float64)
    cdef Py_ssize_t nq = qa.shape[0], nk = ka.shape[0]
    cdef Py_ssize_t dk = qa.shape[1], dv = va.shape[1]
    cdef cnp.ndarray[double, ndim=2] dq = np.zeros((nq, dk))
    cdef cnp.ndarray[double, ndim=2] dkk = np.zeros((nk, dk))
    cdef cnp.ndarray[double, ndim=2] dva = np.zeros((nk, dv))
    cdef cnp.ndarray[double, ndim=1] d_attn = np.empty(nk)
    cdef Py_ssize_t i, j, c
    cdef double scale = 1.0 / sqrt(<double> dk)
    cdef double inner, ds
    for i in range(nq):
        inner = 0.0
        for j in range(nk):
            d_attn[j] = 0.0
            for c in range(dv):
                d_attn[j] += doa[i, c] * va[j, c]
                dva[j, c] += at[i, j] * doa[i, c]
            inner += d_attn[j] * at[i, j]
        for j in range(nk):
            ds = at[i, j] * (d_attn[j] - inner) * scale
            for c in range(dk):
                dq[i, c] += ds * ka[j, c]
                dkk[j, c] += ds * qa[i, c]
    return dq, dkk, dva


def layer_norm_forward(x, gain, bias):
    cdef cnp.ndarray[double, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ga = np.ascontiguousarray(gain, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ba = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], m = xa.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2] y = np.empty_like(xa)
    cdef cnp.ndarray[double, ndim=1] mean = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] rstd = np.empty(n)
    cdef double mu, var, d
    for i in range(n):
        mu = 0.0
        for j in range(m):
            mu += xa[i, j]
        mu /= m
        var = 0.0
        for j in range(m):
            d = xa[i, j] - mu
            var += d * d
        var /= m
        mean[i] = mu
        rstd[i] = 1.0 / sqrt(var + LN_EPS)
        for j in range(m):
            y[i, j] = (xa[i, j] - mu) * rstd[i] * ga[j] + ba[j]
    return y, mean, rstd


def layer_norm_backward(d_y, x, gain, mean, rstd):
    cdef cnp.ndarray[double, ndim=2] dya = np.ascontiguousarray(d_y, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ga = np.ascontiguousarray(gain, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] mu = np.ascontiguousarray(mean, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] rs = np.ascontiguousarray(rstd, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], m = xa.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2] dx = np.empty_like(xa)
    cdef cnp.ndarray[double, ndim=1] dgain = np.zeros(m)
    cdef cnp.ndarray[double, ndim=1] dbias = np.zeros(m)
    cdef double xhat, dxh, m1, m2
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(m):
            xhat = (xa[i, j] - mu[i]) * rs[i]
            dxh = dya[i, j] * ga[j]
            dgain[j] += dya[i, j] * xhat
            dbias[j] += dya[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= m
        m2 /= m
        for j in range(m):
            xhat = (xa[i, j] - mu[i]) * rs[i]
            dxh = dya[i, j] * ga[j]
            dx[i, j] = rs[i] * (dxh - m1 - xhat * m2)
    return dx, dgain, dbias
