"""Timing of the compiled CG kernels against the pure-Python fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--n 128] [--repeat 3]
"""
import argparse
import time

import numpy as np

from ocpfem import _kernels_py
from ocpfem.fem import CoefficientSet, assemble_bilinear, assemble_load, constant
from ocpfem.linalg import pcg
from ocpfem.mesh import unit_square_mesh
from ocpfem.multiscale import LodOperators

try:
    from ocpfem import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128, help="fine mesh cells per side")
    ap.add_argument("--coarse", type=int, default=8, help="coarse mesh cells per side (corrector)")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = {"python": _kernels_py}
    if _kernels is not None:
        backends["compiled"] = _kernels
    else:
        print("compiled extension not available; timing the fallback only")

    coeff = CoefficientSet.checkerboard(100.0, 2.0**-5)
    fine = unit_square_mesh(args.n)
    system = assemble_bilinear(fine, coeff)
    b = assemble_load(fine, constant(1.0))[system.dofs]
    ops = LodOperators(unit_square_mesh(args.coarse), fine, coeff, system=system)
    z = int(np.argmin(np.linalg.norm(ops.coarse.vertices - 0.5, axis=1)))

    print(f"{'kernel':<16}{'backend':<10}{'seconds':>10}{'iters':>8}")
    results = {}
    for name, kern in backends.items():
        t, (x, it) = best_of(lambda: pcg(system.matrix, b, tol=1e-10, backend=kern), args.repeat)
        print(f"{'pcg':<16}{name:<10}{t:>10.4f}{it:>8}")
        results[("pcg", name)] = (t, x)
        t, c = best_of(lambda: ops.corrector(z, 2, backend=kern), args.repeat)
        print(f"{'projected_pcg':<16}{name:<10}{t:>10.4f}{'':>8}")
        results[("projected_pcg", name)] = (t, c.toarray().ravel())

    if len(backends) == 2:
        for kernel in ("pcg", "projected_pcg"):
            (tp, xp), (tc, xc) = results[(kernel, "python")], results[(kernel, "compiled")]
            diff = np.abs(xp - xc).max()
            print(f"{kernel}: speedup {tp / tc:.1f}x, max difference {diff:.1e}")


if __name__ == "__main__":
    main()
