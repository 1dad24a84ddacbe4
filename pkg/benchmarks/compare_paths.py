"""Benchmark: compiled integrator kernels vs the pure-numpy fallback.

The integrator picks its stepping kernel per call from the FALSIFY_NUMBA
environment variable, so one process can time both paths back to back.
Each case is warmed up first (JIT compilation happens on the first call)
and cross-checked for agreement before the timings are reported.
"""

import argparse
import os
import time

import numpy as np

from falsify.bench import BenchSpec, generate_instance, initial_guess
from falsify.formulation import Formulation
from falsify.integrate import flow, flow_with_sensitivity
from falsify.sqp import run
from falsify.systems import benchmark2, benchmark3


def best_of(fn, repeats):
    """Best wall time over ``repeats`` calls, in seconds."""
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def with_flag(enabled, fn):
    os.environ["FALSIFY_NUMBA"] = "1" if enabled else "0"
    try:
        return fn()
    finally:
        os.environ.pop("FALSIFY_NUMBA", None)


def compare(label, fn, value_of, repeats):
    """Time ``fn`` on both paths and report agreement of ``value_of(result)``."""
    compiled_result = with_flag(True, fn)  # warm: first call compiles
    fallback_result = with_flag(False, fn)
    diff = np.max(np.abs(value_of(compiled_result) - value_of(fallback_result)))
    scale = max(1.0, np.max(np.abs(value_of(fallback_result))))

    t_compiled = with_flag(True, lambda: best_of(fn, repeats))
    t_fallback = with_flag(False, lambda: best_of(fn, repeats))
    print(
        f"{label:<44} numpy {t_fallback * 1e3:9.3f} ms   "
        f"numba {t_compiled * 1e3:9.3f} ms   "
        f"speedup {t_fallback / t_compiled:6.2f}x   "
        f"rel diff {diff / scale:.2e}"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20, help="timing repetitions per case")
    parser.add_argument("--seed", type=int, default=42, help="seed for the start states")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    nonlinear = benchmark2()
    rotation = benchmark3(10)
    x_nonlinear = np.ones(3) + 0.1 * rng.standard_normal(3)
    x_rotation = np.ones(10) + 0.1 * rng.standard_normal(10)

    print("=" * 100)
    print(f"integrator paths, best of {args.repeats} runs")
    print("=" * 100)

    compare(
        "flow, nonlinear 3d, t=5",
        lambda: flow(nonlinear, x_nonlinear, 5.0),
        lambda end: end,
        args.repeats,
    )
    compare(
        "flow + sensitivity, nonlinear 3d, t=5",
        lambda: flow_with_sensitivity(nonlinear, x_nonlinear, 5.0),
        lambda res: res.end_state,
        args.repeats,
    )
    compare(
        "flow + sensitivity, rotation 10d, t=5",
        lambda: flow_with_sensitivity(rotation, x_rotation, 5.0),
        lambda res: res.sensitivity,
        args.repeats,
    )

    spec = BenchSpec("benchmark2", (3,), (5,), Formulation.by_name("eq8"))
    instance = generate_instance(spec, 3, 5)
    guess = initial_guess(instance, 5)
    compare(
        "full solve, nonlinear 3d, eq8, N=5",
        lambda: run(spec.formulation, instance, guess, spec.sqp_config()),
        lambda report: np.asarray(report.final_objective),
        max(1, args.repeats // 4),
    )

    print("=" * 100)


if __name__ == "__main__":
    main()
