"""Time the compiled and numpy path kernels on the built-in workloads.

    python benchmarks/bench_kernels.py --paths 1000 --repeat 3
"""

import argparse
import time

import numpy as np

from sampledsde import kernels
from sampledsde.experiment import simulate_paths
from sampledsde.integrators import SimulationConfig
from sampledsde.models import make_model

WORKLOADS = {
    "pendulum (T=25, grid-snap)": (
        ("pendulum", {}),
        SimulationConfig(epsilon=2**-5, delta=2**-4, horizon=25.0, dt=25 / 256,
                         x0=(1.0, 0.0), grid_mode="grid-snap")),
    "scalar linear (T=1, dt=2^-12)": (
        ("scalar_linear", {"a": 2.0, "k": 1.0}),
        SimulationConfig(epsilon=2**-6, delta=2**-6, horizon=1.0, dt=2**-12, x0=(1.0,),
                         regime_c=1.0)),
}


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--paths", type=int, default=1000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args(argv)
    if not kernels.HAVE_COMPILED:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")

    print(f"{'workload':32s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} "
          f"{'max rel diff':>13s}")
    for name, ((model_name, params), config) in WORKLOADS.items():
        model = make_model(model_name, **params)
        times, outs = {}, {}
        for backend in ("python", "compiled"):
            times[backend], outs[backend] = best_time(
                lambda: simulate_paths(model, config, args.paths, args.seed, backend=backend),
                args.repeat)
        diff = max(
            float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))
            for a, b in zip(outs["compiled"][:3], outs["python"][:3]))
        print(f"{name:32s} {times['python']:11.3f} {times['compiled']:13.3f} "
              f"{times['python'] / times['compiled']:7.1f}x {diff:13.2e}")


if __name__ == "__main__":
    main()
