"""Time the JIT-compiled kernels against their pure-numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat N]

The script times the active kernel path in this process, then re-runs
itself with ``ISACSIM_DISABLE_NUMBA=1`` and prints both columns side by
side.  Sizes are chosen to mirror how the package actually calls each
kernel (packet-scale FIRs, window-scale transforms), so the ratios are
representative rather than flattering.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from isacsim import kernels

WORKLOADS = {}


def workload(fn):
    WORKLOADS[fn.__name__] = fn
    return fn


@workload
def ndft_direct():
    rng = np.random.default_rng(0)
    times = np.cumsum(rng.uniform(0.001, 0.02, size=2048))
    values = rng.standard_normal(2048) + 1j * rng.standard_normal(2048)
    freqs = np.linspace(-50.0, 50.0, 1024)
    return lambda: kernels.ndft_direct(times, values, freqs)


@workload
def nlms_fir():
    rng = np.random.default_rng(1)
    ref = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    taps = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    desired = kernels.fir_apply(ref, taps)
    return lambda: kernels.nlms_fir(ref, desired, 12, mu=0.5, n_passes=2)


@workload
def fir_apply():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(65536) + 1j * rng.standard_normal(65536)
    taps = rng.standard_normal(24) + 1j * rng.standard_normal(24)
    return lambda: kernels.fir_apply(ref, taps)


def run_workloads(repeat):
    out = {}
    for name, make in WORKLOADS.items():
        fn = make()
        fn()  # warm-up: trigger JIT compilation outside the timed region
        best = float("inf")
        for _ in range(repeat):
            start = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - start)
        out[name] = best
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5,
                        help="timed repetitions per kernel (best is kept)")
    parser.add_argument("--emit-json", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    mine = run_workloads(args.repeat)
    if args.emit_json:
        json.dump({"has_numba": kernels.HAS_NUMBA, "times": mine}, sys.stdout)
        return 0

    if not kernels.HAS_NUMBA:
        print("numba path unavailable in this environment; timing the "
              "numpy fallback only\n")
        for name, sec in mine.items():
            print(f"{name:14s} {sec * 1e3:9.3f} ms")
        return 0

    env = dict(os.environ, ISACSIM_DISABLE_NUMBA="1")
    child = subprocess.run(
        [sys.executable, os.path.abspath(__file__),
         "--repeat", str(args.repeat), "--emit-json"],
        env=env, capture_output=True, text=True, check=True,
    )
    fallback = json.loads(child.stdout)
    assert not fallback["has_numba"], "child failed to disable the JIT path"

    print(f"{'kernel':14s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for name, jit_s in mine.items():
        np_s = fallback["times"][name]
        print(f"{name:14s} {jit_s * 1e3:10.3f} ms {np_s * 1e3:10.3f} ms "
              f"{np_s / jit_s:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
