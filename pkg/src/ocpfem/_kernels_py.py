"""Pure NumPy/SciPy versions of the compiled CG kernels (same signatures)."""
import numpy as np
import scipy.sparse as sp


def _csr(ptr, ind, val, ncols):
    return sp.csr_matrix((val, ind, ptr), shape=(len(ptr) - 1, ncols))


def pcg(ptr, ind, val, dinv, b, x, tol, maxiter):
    b = np.asarray(b)
    n = b.shape[0]
    A = _csr(ptr, ind, val, n)
    bnorm = np.sqrt(b @ b)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    rnorm = np.sqrt(r @ r)
    it = 0
    while rnorm > tol * bnorm and it < maxiter:
        q = A @ p
        pq = p @ q
        if pq <= 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = dinv * r
        rnorm = np.sqrt(r @ r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return it, rnorm / bnorm


def projected_pcg(kp, ki, kv, rp, ri, rv, ep, ei, ev, mask, dinv, b, x, tol, maxiter):
    b = np.asarray(b)
    n = b.shape[0]
    nc = len(rp) - 1
    K = _csr(kp, ki, kv, n)
    R = _csr(rp, ri, rv, n)
    E = _csr(ep, ei, ev, nc)
    Rt = R.T.tocsr()
    Et = E.T.tocsr()

    def op(v):
        t = mask * v
        t = t - E @ (R @ t)
        s = K @ t
        return mask * (s - Rt @ (Et @ s))

    bnorm = np.sqrt(b @ b)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    r = b - op(x)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    rnorm = np.sqrt(r @ r)
    it = 0
    while rnorm > tol * bnorm and it < maxiter:
        q = op(p)
        pq = p @ q
        if pq <= 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = dinv * r
        rnorm = np.sqrt(r @ r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return it, rnorm / bnorm
