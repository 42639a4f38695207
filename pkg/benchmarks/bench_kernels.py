"""Compare the compiled and plain-numpy kernel paths.

Runs the same LP / QP / DP workloads twice in subprocesses — once with
CEREGIONS_NUMBA=0 (interpreted fallback) and once with CEREGIONS_NUMBA=1
(numba-compiled) — and prints a side-by-side table.  Compilation happens
during an uncounted warmup, so the numbers reflect steady-state cost.

Usage:  python benchmarks/bench_kernels.py [--repeat N] [--quick]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _workloads(quick: bool):
    import numpy as np

    from ceregions import _kernels as K

    rng = np.random.default_rng(42)
    n_lp = 100 if quick else 400
    n_qp = 100 if quick else 400

    # Chebyshev-center style LPs: max r s.t. a_i'x + r||a_i|| <= b_i over a
    # box with random cuts (the shape the geometry layer produces)
    box = np.vstack([np.eye(5), -np.eye(5)])
    lps = []
    for _ in range(n_lp):
        A = rng.normal(size=(24, 5))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        A = np.vstack([box, A])
        b = np.concatenate([np.full(10, 5.0), rng.uniform(0.5, 2.0, size=24)])
        c = np.zeros(6)
        c[5] = -1.0
        A_ub = np.hstack([A, np.ones((len(A), 1))])
        lps.append((c, A_ub, b))

    def run_lp():
        for c, A_ub, b in lps:
            status, _ = K.lp_dense(c, A_ub, b, np.zeros((0, 6)), np.zeros(0))
            assert status == K.OPTIMAL

    # strictly convex QPs with a feasible origin, battery-like row counts
    qps = []
    for _ in range(n_qp):
        L = rng.normal(size=(8, 8))
        H = L @ L.T + 0.1 * np.eye(8)
        f = rng.normal(size=8)
        A = np.vstack([np.eye(8), -np.eye(8), rng.normal(size=(8, 8))])
        b = np.concatenate([np.ones(16), rng.uniform(1.0, 3.0, size=8)])
        qps.append((H, f, A, b))

    def run_qp():
        for H, f, A, b in qps:
            status, _, _, _ = K.qp_active_set(H, f, A, b, np.zeros(8), 200)
            assert status == K.OPTIMAL

    def run_dual():
        for H, f, A, b in qps:
            K.dual_projected_gradient(H, f, A, b, 400, 1e-9)

    # one backward stage of the scalar brute-force DP
    h = 0.02 if quick else 0.01
    xg = np.arange(-10.0, 10.0 + h / 2, h)
    ug = np.arange(-1.0, 1.0 + h / 2, h)
    atoms = np.array([-0.5, 0.0, 0.5])
    weights = np.full(3, 1.0 / 3.0)
    row = np.array([1.0, -1.0])
    xb = np.array([10.0, 10.0])
    ub = np.array([1.0, 1.0])
    j_next = xg ** 2

    def run_dp():
        K.dp_stage_1d(xg, ug, 1.0, 1.0, atoms, weights, 0.0,
                      row, xb, row, xb, row, ub, 1.0, 1.0,
                      float(xg[0]), h, j_next, False)

    # whole-pipeline reference: the bundled three-stage integrator sweep
    from ceregions.dp import compute_ce_region
    from ceregions.examples import example_file
    from ceregions.problem_io import parse_problem

    spec = parse_problem(example_file("integrator")).spec

    def run_sweep():
        compute_ce_region(spec)

    return [
        ("chebyshev-lp x%d" % n_lp, run_lp),
        ("qp-active-set x%d" % n_qp, run_qp),
        ("dual-gradient x%d" % n_qp, run_dual),
        ("dp-stage-1d %dx%d" % (len(xg), len(ug)), run_dp),
        ("integrator-sweep", run_sweep),
    ]


def worker(repeat: int, quick: bool) -> None:
    from ceregions import _kernels as K

    K.warmup()
    results = {}
    for name, fn in _workloads(quick):
        fn()                       # uncounted warmup (jit + caches)
        best = min(_timed(fn) for _ in range(repeat))
        results[name] = best
    print(json.dumps({"numba": K.NUMBA_ENABLED, "results": results}))


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _run_child(flag: str, args) -> dict:
    env = dict(os.environ, CEREGIONS_NUMBA=flag)
    cmd = [sys.executable, os.path.abspath(__file__), "--worker",
           "--repeat", str(args.repeat)]
    if args.quick:
        cmd.append("--quick")
    out = subprocess.run(cmd, env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3,
                    help="timed repetitions per workload (min is reported)")
    ap.add_argument("--quick", action="store_true",
                    help="smaller workloads for a fast smoke run")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat, args.quick)
        return 0

    plain = _run_child("0", args)
    jitted = _run_child("1", args)
    if jitted["numba"] is not True:
        print("warning: numba unavailable; both columns ran the numpy path")

    width = max(len(k) for k in plain["results"])
    print(f"{'workload':<{width}}  {'numpy [s]':>10}  {'numba [s]':>10}  "
          f"{'speedup':>8}")
    print("-" * (width + 34))
    for name, t_plain in plain["results"].items():
        t_jit = jitted["results"][name]
        ratio = t_plain / t_jit if t_jit > 0 else float("inf")
        print(f"{name:<{width}}  {t_plain:>10.4f}  {t_jit:>10.4f}  "
              f"{ratio:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
