"""Compiled vs pure-Python backend timings for the hot linear-algebra kernels.

    python benchmarks/bench_kernels.py [--repeat N] [--end-to-end]

Prints the best-of-N wall time per call for each kernel and backend and
the speedup of the compiled core. ``--end-to-end`` also times a few NOVI
iterations on a synthetic problem in a subprocess per backend, selected
through ``NOVI_BACKEND``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from novi.tensor import _fallback

try:
    from novi.tensor import _core
except ImportError:
    _core = None

END_TO_END = """
import time, numpy as np
from novi import train as tr, data as dm, tensor
rng = np.random.default_rng(0)
x = rng.uniform(-1, 1, (400, 8)); y = np.sin(x.sum(1))
ds, _ = dm.normalize(dm.Dataset(x, y))
cfg = tr.TrainConfig(iterations=3, batch_size=64, eval_every=0)
t = time.perf_counter(); tr.train(cfg, ds)
print(tensor.BACKEND, (time.perf_counter() - t) / 3)
"""


def cases(rng):
    for n, m, d in ((256, 100, 8), (1024, 100, 13), (2048, 200, 10)):
        x, z = rng.standard_normal((n, d)), rng.standard_normal((m, d))
        yield f"pairwise_sqdist {n}x{m}x{d}", "pairwise_sqdist", (x, z)
    for n in (50, 100, 200, 400):
        a = rng.standard_normal((n, n))
        a = a @ a.T + n * np.eye(n)
        yield f"potrf_lower n={n}", "potrf_lower", (a,)
    for n, k in ((100, 256), (200, 1024)):
        a = rng.standard_normal((n, n))
        low = np.linalg.cholesky(a @ a.T + n * np.eye(n))
        b = rng.standard_normal((n, k))
        yield f"trsm n={n} rhs={k}", "trsm", (low, b, False)
        yield f"trsm^T n={n} rhs={k}", "trsm", (low, b, True)


def best(fn, args, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}")
    for label, name, a in cases(rng):
        tp = best(getattr(_fallback, name), a, args.repeat)
        if _core is None:
            print(f"{label:<32}{tp * 1e3:>14.3f}{'n/a':>14}{'':>10}")
            continue
        ref = getattr(_fallback, name)(*a)
        got = getattr(_core, name)(*a)
        err = float(np.max(np.abs(np.asarray(ref) - np.asarray(got))))
        tc = best(getattr(_core, name), a, args.repeat)
        print(f"{label:<32}{tp * 1e3:>14.3f}{tc * 1e3:>14.3f}{tp / tc:>9.2f}x  (max diff {err:.1e})")
    if args.end_to_end:
        print("\nseconds per NOVI iteration (N=400, d=8, B=64, defaults otherwise)")
        for backend in ("python", "cython"):
            env = dict(os.environ, NOVI_BACKEND=backend)
            out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True)
            print("  " + (out.stdout.strip() or out.stderr.strip().splitlines()[-1]))


if __name__ == "__main__":
    main()
