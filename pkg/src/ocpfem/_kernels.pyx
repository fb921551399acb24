# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conjugate-gradient kernels on raw CSR arrays.

Both entry points release the GIL for the iteration so that independent
solves (LOD correctors) can run on several threads.
"""
import numpy as np
from libc.math cimport sqrt


cdef inline void _mv(const int[::1] ptr, const int[::1] ind, const double[::1] val,
                     const double[::1] x, double[::1] y) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(ptr.shape[0] - 1):
        s = 0.0
        for k in range(ptr[i], ptr[i + 1]):
            s = s + val[k] * x[ind[k]]
        y[i] = s


cdef inline void _rmv(const int[::1] ptr, const int[::1] ind, const double[::1] val,
                      const double[::1] x, double[::1] y) noexcept nogil:
    # y = A^T x
    cdef Py_ssize_t i, k
    cdef double xi
    for i in range(y.shape[0]):
        y[i] = 0.0
    for i in range(ptr.shape[0] - 1):
        xi = x[i]
        if xi != 0.0:
            for k in range(ptr[i], ptr[i + 1]):
                y[ind[k]] = y[ind[k]] + val[k] * xi


cdef inline double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s = s + a[i] * b[i]
    return s


def pcg(const int[::1] ptr, const int[::1] ind, const double[::1] val,
        const double[::1] dinv, const double[::1] b, double[::1] x,
        double tol, long maxiter):
    """Jacobi-preconditioned CG on A x = b, updating ``x`` in place.

    Returns ``(iterations, relative_residual)``; the residual is the
    recursively updated one.
    """
    cdef Py_ssize_t n = b.shape[0], i
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double bnorm, rnorm, rz, rz_new, pq, alpha, beta
    cdef long it = 0
    with nogil:
        bnorm = sqrt(_dot(b, b))
        if bnorm == 0.0:
            for i in range(n):
                x[i] = 0.0
        else:
            _mv(ptr, ind, val, x, q)
            for i in range(n):
                r[i] = b[i] - q[i]
                z[i] = dinv[i] * r[i]
                p[i] = z[i]
            rz = _dot(r, z)
            rnorm = sqrt(_dot(r, r))
            while rnorm > tol * bnorm and it < maxiter:
                _mv(ptr, ind, val, p, q)
                pq = _dot(p, q)
                if pq <= 0.0:
                    break
                alpha = rz / pq
                for i in range(n):
                    x[i] = x[i] + alpha * p[i]
                    r[i] = r[i] - alpha * q[i]
                    z[i] = dinv[i] * r[i]
                rnorm = sqrt(_dot(r, r))
                rz_new = _dot(r, z)
                beta = rz_new / rz
                rz = rz_new
                for i in range(n):
                    p[i] = z[i] + beta * p[i]
                it += 1
    if bnorm == 0.0:
        return 0, 0.0
    return it, rnorm / bnorm


cdef void _projected_op(const int[::1] kp, const int[::1] ki, const double[::1] kv,
                        const int[::1] rp, const int[::1] ri, const double[::1] rv,
                        const int[::1] ep, const int[::1] ei, const double[::1] ev,
                        const double[::1] mask, const double[::1] v,
                        double[::1] t, double[::1] c, double[::1] s, double[::1] out) noexcept nogil:
    # out = mask * (I - R^T E^T) K (I - E R) (mask * v)
    cdef Py_ssize_t i
    for i in range(v.shape[0]):
        out[i] = mask[i] * v[i]
    _mv(rp, ri, rv, out, c)
    _mv(ep, ei, ev, c, t)
    for i in range(v.shape[0]):
        t[i] = out[i] - t[i]
    _mv(kp, ki, kv, t, s)
    _rmv(ep, ei, ev, s, c)
    _rmv(rp, ri, rv, c, t)
    for i in range(v.shape[0]):
        out[i] = mask[i] * (s[i] - t[i])


def projected_pcg(const int[::1] kp, const int[::1] ki, const double[::1] kv,
                  const int[::1] rp, const int[::1] ri, const double[::1] rv,
                  const int[::1] ep, const int[::1] ei, const double[::1] ev,
                  const double[::1] mask, const double[::1] dinv,
                  const double[::1] b, double[::1] x, double tol, long maxiter):
    """CG for ``T^T K T v = b`` with ``T = (I - E R) diag(mask)``.

    ``R`` (coarse x fine) and ``E`` (fine x coarse) satisfy ``R E = I``, so
    ``T`` maps onto the kernel of ``R``.  The operator is only semidefinite;
    ``b`` must lie in its range.  ``x`` is updated in place.
    """
    cdef Py_ssize_t n = b.shape[0], nc = rp.shape[0] - 1, i
    cdef double[::1] r = np.empty(n)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double[::1] t = np.empty(n)
    cdef double[::1] s = np.empty(n)
    cdef double[::1] c = np.empty(nc)
    cdef double bnorm, rnorm, rz, rz_new, pq, alpha, beta
    cdef long it = 0
    with nogil:
        bnorm = sqrt(_dot(b, b))
        if bnorm == 0.0:
            for i in range(n):
                x[i] = 0.0
        else:
            _projected_op(kp, ki, kv, rp, ri, rv, ep, ei, ev, mask, x, t, c, s, q)
            for i in range(n):
                r[i] = b[i] - q[i]
                z[i] = dinv[i] * r[i]
                p[i] = z[i]
            rz = _dot(r, z)
            rnorm = sqrt(_dot(r, r))
            while rnorm > tol * bnorm and it < maxiter:
                _projected_op(kp, ki, kv, rp, ri, rv, ep, ei, ev, mask, p, t, c, s, q)
                pq = _dot(p, q)
                if pq <= 0.0:
                    break
                alpha = rz / pq
                for i in range(n):
                    x[i] = x[i] + alpha * p[i]
                    r[i] = r[i] - alpha * q[i]
                    z[i] = dinv[i] * r[i]
                rnorm = sqrt(_dot(r, r))
                rz_new = _dot(r, z)
                beta = rz_new / rz
                rz = rz_new
                for i in range(n):
                    p[i] = z[i] + beta * p[i]
                it += 1
    if bnorm == 0.0:
        return 0, 0.0
    return it, rnorm / bnorm
