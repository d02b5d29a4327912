"""Compare the numba and numpy element kernels on realistic element data.

Usage: python benchmarks/bench_kernels.py [--n 32] [--repeat 5]

Also runs a short end-to-end simulation under each backend in a subprocess,
since the backend is fixed at import time by HVBOUSSINESQ_NUMBA.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hvboussinesq import _kernels as K
from hvboussinesq.mesh import build_rect_mesh
from hvboussinesq.spaces import element_data

E2E = """
import time
from hvboussinesq.config import scenario
from hvboussinesq.integrator import run
from hvboussinesq import _kernels
cfg = scenario("heated-cavity-slip", **{"time.T": 0.05, "time.dt": 0.05 / 16})
run(cfg)
t = time.perf_counter(); run(cfg); print(_kernels.BACKEND, time.perf_counter() - t)
"""


def kernel_cases(n: int):
    ed = element_data(build_rect_mesh(n, n))
    rng = np.random.default_rng(0)
    vel = rng.standard_normal(ed.weights.shape + (2,))
    f = rng.standard_normal(ed.weights.shape)
    return {
        "stiffness P1": (("stiffness", (ed.p1_grads, ed.weights))),
        "stiffness P2": (("stiffness", (ed.p2_grads, ed.weights))),
        "mass P2": (("mass", (ed.p2_vals, ed.weights))),
        "advection P2": (("advection", (ed.p2_vals, ed.p2_grads, vel, ed.weights))),
        "elasticity P2": (("elasticity", (ed.p2_grads, ed.weights))),
        "divergence": (("divergence", (ed.p1_vals, ed.p2_grads, ed.weights))),
        "load P1": (("load", (ed.p1_vals, f, ed.weights))),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32, help="cells per side")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-e2e", action="store_true", help="skip the end-to-end comparison")
    args = ap.parse_args(argv)

    print(f"mesh {args.n}x{args.n}, numba available: {K.HAVE_NUMBA}")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, (kern, a) in kernel_cases(args.n).items():
        f_np = getattr(K, f"np_{kern}")
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat))
        ref = f_np(*a)
        if K.HAVE_NUMBA:
            f_nb = getattr(K, f"nb_{kern}")
            f_nb(*a)  # compile
            t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat))
            diff = float(np.max(np.abs(f_nb(*a) - ref)))
            print(f"{name:<16}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.2f}{diff:>14.2e}")
        else:
            print(f"{name:<16}{1e3 * t_np:>12.3f}{'-':>12}{'-':>10}{'-':>14}")

    if not args.no_e2e:
        for flag in ("0", "1"):
            env = dict(os.environ, HVBOUSSINESQ_NUMBA=flag)
            res = subprocess.run([sys.executable, "-W", "ignore", "-c", E2E], env=env,
                                 capture_output=True, text=True, check=True)
            backend, secs = res.stdout.split()
            print(f"end-to-end short heated cavity ({backend}): {float(secs):.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
