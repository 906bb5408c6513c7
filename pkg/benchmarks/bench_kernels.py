"""Compiled vs pure-Python Euler kernels on the same ensembles.

Usage: python3 benchmarks/bench_kernels.py [--paths N] [--dt DT] [--repeat K]

Both backends consume the same per-path streams, so besides timing the
script checks that the terminal values agree bitwise.
"""

import argparse
import time

import numpy as np

from jumpbridge import backend as be
from jumpbridge.coefficients import BridgeModel
from jumpbridge.engine import SimConfig, build_plan, simulate_paths
from jumpbridge.levy import ExpCompoundPoisson, TemperedStable
from jumpbridge.moments import bridge_moments

CASES = {
    "ou-bridge exp_cp": (BridgeModel(10.0, ExpCompoundPoisson(2.0, 50.0)), "bridge"),
    "se-bridge exp_cp p=2": (BridgeModel(10.0, ExpCompoundPoisson(2.0, 50.0), p=2.0), "bridge"),
    "se tempered_stable": (BridgeModel(15.8, TemperedStable(3.23, 0.031, 0.87), p=0.14), "se"),
}


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2_000)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if be.COMPILED is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    ids = np.arange(args.paths)
    print(f"{'case':24s} {'compiled s':>11s} {'python s':>10s} {'speedup':>8s} {'path-steps/s':>13s}  bitwise")
    for name, (model, kind) in CASES.items():
        cfg = SimConfig(args.dt, seed=1)
        plan = build_plan(model, cfg, kind)
        rec = np.array([cfg.n_steps])
        tc, a = best_of(lambda: simulate_paths(plan, 1, ids, rec, be.COMPILED), args.repeat)
        tp, b = best_of(lambda: simulate_paths(plan, 1, ids, rec, be.PYTHON), args.repeat)
        same = np.array_equal(a["terminal"], b["terminal"])
        rate = args.paths * cfg.n_steps / tc
        print(f"{name:24s} {tc:11.3f} {tp:10.3f} {tp / tc:8.1f} {rate:13.3e}  {same}")

    model = BridgeModel(10.0, ExpCompoundPoisson(2.0, 50.0), x0=0.1, x_hat=0.5, p=1.0)
    tc, _ = best_of(lambda: bridge_moments(model, 1e-6, backend=be.COMPILED), args.repeat)
    tp, _ = best_of(lambda: bridge_moments(model, 1e-6, backend=be.PYTHON), args.repeat)
    print(f"{'moment recursion 1e6':24s} {tc:11.3f} {tp:10.3f} {tp / tc:8.1f}")


if __name__ == "__main__":
    main()
