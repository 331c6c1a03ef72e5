"""Time the numba kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat R] [--skip-pipeline]

Kernels are timed in one process, since both variants are importable.  The
end-to-end pipeline is timed in two subprocesses, one with
CELLSCATTER_DISABLE_NUMBA=1.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cellscatter import _kernels
from cellscatter.data import PatternIndex
from cellscatter.lab import TrueModel, gen_correlation

PIPELINE = """
import time, numpy as np
from cellscatter.lab import TrueModel, gen_correlation
from cellscatter.pipeline import parse_pipeline, run_pipeline
r = np.random.default_rng(1)
x = TrueModel(gen_correlation(10, "ar1")).sample(200, r)
x[r.random(x.shape) < 0.05] = np.nan
spec = parse_pipeline("ubf-gre-c", seed=1)
run_pipeline(x, spec)
t0 = time.perf_counter()
run_pipeline(x, spec)
print(time.perf_counter() - t0)
"""


def _cases(rng):
    n, p = 400, 10
    x = TrueModel(gen_correlation(p, "ar1")).sample(n, rng)
    u = rng.random(x.shape) > 0.1
    u[:, 0] = True
    xm = np.where(u, x, 0.0)
    index = PatternIndex.from_mask(u)
    mu, sigma = np.zeros(p), gen_correlation(p, "ar1")
    pts = rng.standard_normal((300, 5))
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    r = rng.chisquare(p, n)
    v = rng.standard_normal(2000)
    rows = np.arange(60, dtype=np.int64)
    pat = (xm, index.patterns, index.order, index.starts, mu, sigma)
    return {
        "kth_pairwise_diff": (v, 500_000),
        "mscale_root": (r / p, np.ones(n), np.zeros(n), _kernels.TUKEY, 0.5, 1e-10, 60),
        "partial_mahalanobis": pat,
        "estep_moments": pat + (np.ones(n),),
        "ward_linkage": (d2,),
        "em_subsample": (xm, u, rows, 100, 1e-6),
    }


def _time(func, args, repeat):
    func(*args)  # compile and warm up
    return min(timeit.repeat(lambda: func(*args), number=1, repeat=repeat))


def _pipeline(disable):
    env = dict(os.environ)
    env.pop("CELLSCATTER_DISABLE_NUMBA", None)
    if disable:
        env["CELLSCATTER_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", PIPELINE], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-pipeline", action="store_true")
    args = ap.parse_args(argv)
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<22}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for name, call in cases.items():
        fast = _time(getattr(_kernels, name + "_numba"), call, args.repeat)
        slow = _time(getattr(_kernels, name + "_numpy"), call, args.repeat)
        print(f"{name:<22}{fast:>12.6f}{slow:>12.6f}{slow / fast:>10.1f}")
    if not args.skip_pipeline:
        fast, slow = _pipeline(False), _pipeline(True)
        print(f"{'pipeline ubf-gre-c':<22}{fast:>12.6f}{slow:>12.6f}{slow / fast:>10.1f}")


if __name__ == "__main__":
    main()
