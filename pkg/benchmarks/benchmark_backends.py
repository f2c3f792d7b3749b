"""Timing comparison of the numba kernels against the pure-NumPy fallback.

The backend is chosen once at import via the ``SLR_NUMBA`` environment
variable, so each backend is measured in its own subprocess and this
script doubles as that child when invoked with ``--child``.  Reported
values are medians over ``--repeats`` runs after one untimed warmup call
(which also absorbs numba's compilation).

Usage::

    python3 benchmarks/benchmark_backends.py [--repeats 7] [--mc 2000]
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time


def _tasks(mc_samples):
    import numpy as np

    import slreach as sr

    field = sr.build_field("vanderpol", dim=2, params=[1.0])
    x0 = np.array([2.0, 0.0])
    cfg = sr.SlrConfig(gamma=0.2, mu=1.1, seed=7, lipschitz_mode="sampled")

    def field_eval():
        x = np.array([1.7, -0.4])
        for _ in range(1000):
            field(x, x0, 0.0)

    def flow():
        sr.flow_endpoint(field, x0, 0.0, 2.0)

    def sensitivity():
        sr.sensitivity_endpoint(field, x0, 0.0, 2.0)

    def mc_table():
        ell = sr.Ellipsoid(center=x0, metric=np.eye(2), factor=np.eye(2),
                           radius=0.05)
        sr.mc_reachset(field, x0, 0.05, 0.0, 2.0, ell, mc_samples, seed=1)

    def timestep():
        sr.run_timestep(field, x0, 0.05, 0.0, 0.8, cfg)

    return [
        ("field eval x1000", field_eval),
        ("flow endpoint T=2", flow),
        ("sensitivity T=2", sensitivity),
        (f"mc reachset n={mc_samples}", mc_table),
        ("slr timestep", timestep),
    ]


def run_child(repeats, mc_samples):
    import slreach

    rows = {}
    for name, fn in _tasks(mc_samples):
        fn()  # warmup; also compiles the kernels on the numba backend
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        rows[name] = statistics.median(samples)
    print(json.dumps({"backend": slreach.BACKEND, "timings": rows}))


def measure_backend(flag, repeats, mc_samples):
    env = dict(os.environ, SLR_NUMBA=flag)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--child",
         "--repeats", str(repeats), "--mc", str(mc_samples)],
        env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"child failed:\n{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--mc", type=int, default=2000,
                    help="sample count of the Monte-Carlo task")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.child:
        run_child(args.repeats, args.mc)
        return 0

    reports = [measure_backend("1", args.repeats, args.mc),
               measure_backend("0", args.repeats, args.mc)]
    names = [r["backend"] for r in reports]
    print(f"median of {args.repeats} runs, seconds "
          f"(warmup and jit compile excluded)\n")
    width = max(len(k) for k in reports[0]["timings"])
    print(f"{'task':<{width}}  {names[0]:>12}  {names[1]:>12}  "
          f"{'speedup':>8}")
    for task in reports[0]["timings"]:
        a = reports[0]["timings"][task]
        b = reports[1]["timings"][task]
        print(f"{task:<{width}}  {a:12.6f}  {b:12.6f}  {b / a:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
