"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --dim 50 --steps 20 --repeat 200
"""
import argparse
import timeit

import numpy as np

from fedwmsam import _kernels
from fedwmsam.linalg import EPS_ZERO


def local_steps_case(dim, steps, seed=0):
    rng = np.random.default_rng(seed)
    args = (rng.standard_normal(dim), rng.standard_normal(dim), rng.uniform(0.1, 1, dim),
            rng.standard_normal(dim), 0.1 * rng.standard_normal((steps, dim)), np.zeros(dim),
            steps, 0.1, 0.3, 0.01, _kernels.PERT_MOMENTUM, True, False, EPS_ZERO)
    return args


def bench(fn, args, repeat):
    t = timeit.Timer(lambda: fn(*args)).repeat(repeat=5, number=repeat)
    return min(t) / repeat


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--clients", type=int, default=10, help="N for subset enumeration")
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if _kernels.compiled_backend is None:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    cases = {
        "quad_local_steps": ("quad_local_steps", local_steps_case(args.dim, args.steps)),
        "subset_mean_sq": ("subset_mean_sq",
                           (np.random.default_rng(1).standard_normal((args.clients, args.dim)),
                            args.clients // 2)),
    }
    print(f"{'kernel':<18}{'numpy (us)':>12}{'compiled (us)':>15}{'speedup':>10}")
    for name, (attr, call) in cases.items():
        reps = args.repeat if name == "quad_local_steps" else max(1, args.repeat // 50)
        py = bench(getattr(_kernels.python_backend, attr), call, reps)
        c = bench(getattr(_kernels.compiled_backend, attr), call, reps)
        print(f"{name:<18}{py * 1e6:>12.1f}{c * 1e6:>15.1f}{py / c:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
