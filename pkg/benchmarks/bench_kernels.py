"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 200]

Also times one full desk-size episode under each path by re-running this
script in a subprocess with ``LIFELONG_BBO_DISABLE_JIT`` set or unset.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from lifelong_bbo import kernels

SHAPES = [(10, 2), (100, 10), (500, 10)]
PAIRS = [
    ("mean_pairwise_distance", lambda X, Y: (X,)),
    ("mean_distance_to", lambda X, Y: (X, X[0])),
    ("max_min_distance", lambda X, Y: (X, Y)),
]


def bench_kernels(repeat: int) -> None:
    if not kernels.HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'n x d':>10}{'numpy us':>12}{'numba us':>12}{'speedup':>9}")
    for name, args_of in PAIRS:
        f_np = getattr(kernels, name + "_np")
        f_jit = getattr(kernels, name + "_jit")
        for n, d in SHAPES:
            args = args_of(rng.random((n, d)), rng.random((n, d)))
            f_jit(*args)  # compile outside the timing
            assert np.isclose(f_np(*args), f_jit(*args), rtol=1e-12)
            t_np = min(timeit.repeat(lambda: f_np(*args), number=repeat, repeat=3)) / repeat
            t_jit = min(timeit.repeat(lambda: f_jit(*args), number=repeat, repeat=3)) / repeat
            print(f"{name:<24}{f'{n}x{d}':>10}{t_np * 1e6:>12.1f}{t_jit * 1e6:>12.1f}{t_np / t_jit:>8.1f}x")


def episode_time() -> float:
    from lifelong_bbo.config import desk_config
    from lifelong_bbo.engine import FixedRulePolicy, episode_streams, run_episode
    from lifelong_bbo.expr import parse
    from lifelong_bbo.guide import GuideState
    from lifelong_bbo.problems import TaskSpec, sample_problem

    cfg = desk_config()
    rule = FixedRulePolicy(parse("(+ xbest (* (c 0.5 0) (- xr xr)))"))
    task = TaskSpec(("U", "B", "H", "C"), dim=cfg.problem.dim, fe_budget=cfg.problem.fe_budget)

    def once(k):
        p = sample_problem(task, np.random.default_rng(k))
        env, gd = episode_streams(k)
        run_episode(p, rule, GuideState(cfg.problem.pop_size, p.dim, gd), cfg.problem.horizon, cfg.problem.pop_size, env)

    once(0)
    return min(timeit.repeat(lambda: [once(k) for k in range(20)], number=1, repeat=3)) / 20


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--episode-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.episode_only:
        print(f"{episode_time() * 1e3:.2f}")
        return
    bench_kernels(args.repeat)
    print()
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, LIFELONG_BBO_DISABLE_JIT=flag)
        out = subprocess.run([sys.executable, __file__, "--episode-only"], env=env, capture_output=True, text=True, check=True)
        print(f"desk episode, {label} kernels: {out.stdout.strip()} ms")


if __name__ == "__main__":
    main()
