"""Time the compiled and pure-Python trial kernels on identical plans.

    python benchmarks/bench_kernel.py --rounds 5000 --repeat 3
"""

import argparse
import time
from dataclasses import fields, replace

import numpy as np

from collusim import kernel
from collusim.experiment import Condition, TrialConfig, build_plan
from collusim.learners import ALGORITHMS


def timed(cfg: TrialConfig, condition: Condition, backend: str, repeat: int):
    best, out = float("inf"), None
    for _ in range(repeat):
        rng = np.random.Generator(np.random.PCG64(cfg.seed(0)))
        plan = build_plan(cfg, condition, rng)
        t0 = time.perf_counter()
        out = kernel.simulate(plan, rng, backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def identical(a, b) -> bool:
    return all(np.array_equal(getattr(a, f.name), getattr(b, f.name)) for f in fields(a))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--algorithms", nargs="+", default=["qlearning"], choices=ALGORITHMS)
    args = ap.parse_args()

    backends = kernel.available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the Python backend is available")
    print(f"{'algorithm':<16}{'condition':<15}" + "".join(f"{b + ' s':>12}" for b in backends)
          + f"{'speedup':>10}{'identical':>11}")
    for alg in args.algorithms:
        base = TrialConfig(rounds=args.rounds)
        cfg = replace(base, learner=replace(base.learner, algorithm=alg))
        for cond in (Condition.BASELINE, Condition.JOINT):
            res = {b: timed(cfg, cond, b, args.repeat) for b in backends}
            line = f"{alg:<16}{cond.value:<15}" + "".join(f"{res[b][0]:>12.4f}" for b in backends)
            if "cython" in res:
                speed = res["python"][0] / res["cython"][0]
                same = identical(res["python"][1], res["cython"][1])
                line += f"{speed:>9.0f}x{str(same):>11}"
            print(line)
    if "cython" in backends:
        full = TrialConfig()
        t, _ = timed(full, Condition.JOINT, "cython", 1)
        print(f"\nfull 20k-round joint trial (compiled): {t:.3f} s; "
              f"100-trial four-condition suite estimate: {400 * t:.0f} s on one core")


if __name__ == "__main__":
    main()
