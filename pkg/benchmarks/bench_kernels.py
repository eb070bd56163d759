"""Time the trajectory step loops with the compiled and pure-Python backends.

Usage: python3 benchmarks/bench_kernels.py [--steps 20000] [--repeat 3]
"""
import argparse
import math
import time

from dfreeze.kernels import available_backends
from dfreeze.spin import ModelParams, build_spin_operators
from dfreeze.trajectories import TrajectoryConfig, run_trajectory, suggest_dt

CASES = [
    ("diagonal", ModelParams(J=5, Omega=0.8, theta=math.pi / 4)),
    ("diagonal", ModelParams(J=10, Omega=0.8, theta=math.pi / 4)),
    ("dense", ModelParams(J=3, Omega=0.8, theta=0.6)),
    ("dense", ModelParams(J=10, Omega=0.8, theta=0.6)),
]


def time_case(params, backend, steps, repeat):
    dt = suggest_dt(params)
    cfg = TrajectoryConfig(params, tFinal=steps * dt, dt=dt, sampleEvery=steps, seed=1)
    psi = build_spin_operators(params).sz_state(-params.J)
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_trajectory(cfg, psi, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best / steps * 1e9


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = available_backends()
    print(f"{'kernel':<9} {'dim':>4} " + " ".join(f"{b + ' ns/step':>16}" for b in backends) + "  speedup")
    for kind, p in CASES:
        ns = [time_case(p, b, args.steps, args.repeat) for b in backends]
        ratio = f"{ns[-1] / ns[0]:7.1f}x" if len(ns) == 2 else "    n/a"
        print(f"{kind:<9} {p.dim:>4} " + " ".join(f"{x:16.1f}" for x in ns) + "  " + ratio)


if __name__ == "__main__":
    main()
