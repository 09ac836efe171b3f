"""Compare the compiled and pure-Python propagation kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from nocprep import dynamics, kernel, noc


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    p = dynamics.TABLE1
    sol = noc.solve_noc(p)
    cases = {
        "state |00> (tol 1e-8)": lambda b: dynamics.trp_final_state(p, tol=1e-8, backend=b),
        "unitary on 16384 grid": lambda b: dynamics.trp_trajectory(p, backend=b).final_unitary,
        "repropagate with dF": lambda b: noc.repropagate(p, sol.delta_f, sol.grid, backend=b)[0],
    }
    backends = sorted(kernel.KERNELS)
    print(f"{'case':<26}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'max diff':>11}")
    for name, fn in cases.items():
        row, outs = [], []
        for b in backends:
            t, out = best_of(lambda: fn(b), 1 if b == "python" else args.repeat)
            row.append(t)
            outs.append(out)
        speed = row[backends.index("python")] / row[0] if len(row) > 1 else 1.0
        diff = max(float(np.max(np.abs(o - outs[0]))) for o in outs)
        print(f"{name:<26}" + "".join(f"{t:>11.3f}s" for t in row) + f"{speed:>9.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
