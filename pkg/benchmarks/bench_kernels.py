"""Compare the numba-compiled kernels with their numpy twins.

    python3 benchmarks/bench_kernels.py [--n 32 4096 65536] [--repeat 5]

Times the batched optimal-dispatch bisection and the regret loss on the
4-bus and 39-bus curves, checks that both backends agree, and prints a
table of best-of-``repeat`` wall-clock times.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from edlab import _accel
from edlab.curve import build_curve
from edlab.dist import Penalties
from edlab.grid import load_network
from edlab.kernel import CurveBank


def best_time(fn, repeat):
    fn()  # warm-up (compilation on the first numba call)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    yield "four_bus", load_network("builtin:four_bus"), 1.7, Penalties(100.0, 10.0)
    yield "ieee39", load_network("builtin:ieee39"), 4500.0, Penalties(50.0, 2.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[32, 4096, 65536])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'case':<9} {'kernel':<9} {'n':>7} {'numba s':>11} {'numpy s':>11} {'speedup':>8} {'max |diff|':>11}")
    for name, net, level, pen in cases():
        curve = build_curve(net, net.nodal_demand(level))
        bank = CurveBank.from_curves([curve])
        lo, width = curve.g_min, curve.width
        for n in args.n:
            idx = np.zeros(n, dtype=np.int64)
            params = np.column_stack([
                lo + width * rng.uniform(0.1, 0.9, n),
                width * rng.uniform(0.02, 0.2, n),
                np.zeros(n),
            ])
            d = lo + width * rng.uniform(-0.1, 1.1, n)
            g_hat = lo + width * rng.uniform(0.0, 1.0, n)
            args_d = (idx, bank.g, bank.slope, bank.nbp, _accel.NORMAL, params, pen.gamma1, pen.gamma2, 1e-6)
            args_q = (idx, bank.g, bank.cost, bank.slope, bank.nbp, g_hat, d, pen.gamma1, pen.gamma2)
            for kname, fast, slow, a in (
                ("dispatch", _accel.dispatch_batch_loop, _accel.dispatch_batch_np, args_d),
                ("qloss", _accel.qloss_batch_loop, _accel.qloss_batch_np, args_q),
            ):
                t_nb = best_time(lambda: fast(*a), args.repeat)
                t_np = best_time(lambda: slow(*a), args.repeat)
                diff = float(np.max(np.abs(fast(*a)[0] - slow(*a)[0])))
                print(f"{name:<9} {kname:<9} {n:>7} {t_nb:>11.3e} {t_np:>11.3e} {t_np / t_nb:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
