"""Conjugate-gradient solvers backed by the compiled kernels when available.

Set ``OCPFEM_PURE_PYTHON=1`` to force the NumPy fallback.
"""
import os

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError

if os.environ.get("OCPFEM_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _backend
    BACKEND = "python"
else:
    try:
        from . import _kernels as _backend
        BACKEND = "compiled"
    except ImportError:  # extension not built
        from . import _kernels_py as _backend
        BACKEND = "python"


def _csr_arrays(A):
    A = sp.csr_matrix(A)
    A.sort_indices()
    return (
        np.ascontiguousarray(A.indptr, dtype=np.intc),
        np.ascontiguousarray(A.indices, dtype=np.intc),
        np.ascontiguousarray(A.data, dtype=np.float64),
    )


def pcg(A, b, x0=None, tol=1e-12, maxiter=None, backend=None):
    """Solve the SPD system ``A x = b`` by Jacobi-preconditioned CG.

    Converges when ``||b - A x|| <= tol * ||b||``; raises
    :class:`ConvergenceError` after ``maxiter`` (default ``10 * n``)
    iterations.  Returns ``(x, iterations)``.
    """
    kern = backend or _backend
    A = sp.csr_matrix(A)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match rhs length {n}")
    if n == 0:
        return np.zeros(0), 0
    maxiter = 10 * n if maxiter is None else int(maxiter)
    diag = A.diagonal()
    if (diag <= 0).any():
        raise ValueError("matrix has nonpositive diagonal entries")
    dinv = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    ptr, ind, val = _csr_arrays(A)
    bnorm = np.linalg.norm(b)
    total = 0
    # Restart if the recursive residual drifted away from the true one.
    for _ in range(4):
        it, _rel = kern.pcg(ptr, ind, val, dinv, b, x, tol, maxiter - total)
        total += it
        true_rel = np.linalg.norm(b - A @ x) / bnorm if bnorm > 0 else 0.0
        if true_rel <= tol:
            return x, total
        if total >= maxiter:
            break
    if true_rel <= 10 * tol:
        return x, total
    raise ConvergenceError(
        f"CG did not converge: relative residual {true_rel:.3e} after {total} iterations",
        history=[true_rel],
    )


def projected_pcg(K, R, E, mask, b, tol=1e-11, maxiter=None, backend=None):
    """CG on ``T^T K T v = b`` with ``T = (I - E R) diag(mask)``.

    Returns ``(v, iterations)``; the kernel element is ``T v``.
    """
    kern = backend or _backend
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else int(maxiter)
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    diag = sp.csr_matrix(K).diagonal()
    dinv = np.where(mask > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    x = np.zeros(n)
    kp, ki, kv = _csr_arrays(K)
    rp, ri, rv = _csr_arrays(R)
    ep, ei, ev = _csr_arrays(E)
    it, rel = kern.projected_pcg(kp, ki, kv, rp, ri, rv, ep, ei, ev, mask, dinv, b, x, tol, maxiter)
    if rel > tol:
        raise ConvergenceError(
            f"corrector CG did not converge: relative residual {rel:.3e} after {it} iterations",
            history=[rel],
        )
    return x, it
