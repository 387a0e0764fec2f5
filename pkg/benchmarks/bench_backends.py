#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the two hot kernels (bridge path functional, Euler first-passage
stepping) on the same inputs, reports the speedup, and checks that the two
backends agree to rounding error.

Usage: python benchmarks/bench_backends.py [--paths N] [--m M] [--nt K]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fptmc._kernels import compiled_module, fallback_module
from fptmc.bridge import _normals, generate_ensemble, path_seed
from fptmc.model import build_model


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(n_paths=4000, m=1000, n_t=50, euler_paths=20000, repeats=3):
    model = build_model("-z", 1.0)
    ens = generate_ensemble(n_paths, m, 1)
    t_grid = np.linspace(0.1, 7.0, n_t)
    u2x2 = (ens.grid * model.x0) ** 2
    w = ens.simpson_w

    backends = [("numpy", fallback_module)]
    if compiled_module is not None:
        backends.insert(0, ("compiled", compiled_module))

    rows = []
    outs = {}
    for name, mod in backends:
        out = np.empty((n_paths, n_t))
        fn = lambda: mod.functional_block(ens.g1, ens.g2, u2x2, w, model.x0,
                                          t_grid, model.gamma_program, out)
        seconds = _time(fn, repeats)
        outs[name] = out.copy()
        rows.append({"kernel": "functional", "backend": name, "seconds": seconds})

    h, steps = 0.01, 500
    z = np.empty((euler_paths, steps))
    u = np.empty((euler_paths, steps))
    for i in range(euler_paths):
        rng = np.random.Generator(np.random.PCG64(path_seed(2, i)))
        z[i] = _normals(rng, (steps,))
        u[i] = rng.random(steps)
    for name, mod in backends:
        times = np.empty(euler_paths)
        fn = lambda: mod.euler_block(model.x0, h, steps, z, u, model.drift_program, times)
        seconds = _time(fn, repeats)
        rows.append({"kernel": "euler", "backend": name, "seconds": seconds})

    if len(outs) == 2:
        diff = float(np.max(np.abs(outs["compiled"] - outs["numpy"])
                            / (1.0 + np.abs(outs["numpy"]))))
    else:
        diff = 0.0
    return {"rows": rows, "functional": {"max_rel_diff": diff}}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--m", type=int, default=1000)
    ap.add_argument("--nt", type=int, default=50)
    ap.add_argument("--euler-paths", type=int, default=20000)
    args = ap.parse_args()

    report = run_benchmark(args.paths, args.m, args.nt, args.euler_paths)
    print(f"{'kernel':<12}{'backend':<10}{'seconds':>10}")
    base = {}
    for row in report["rows"]:
        print(f"{row['kernel']:<12}{row['backend']:<10}{row['seconds']:>10.3f}")
        base.setdefault(row["kernel"], row["seconds"])
    for kernel in ("functional", "euler"):
        times = [r["seconds"] for r in report["rows"] if r["kernel"] == kernel]
        if len(times) == 2:
            print(f"{kernel}: compiled is {times[1] / times[0]:.1f}x faster")
    print(f"functional max rel difference: {report['functional']['max_rel_diff']:.3e}")


if __name__ == "__main__":
    main()
