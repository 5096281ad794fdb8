"""Time the compiled LSTM recurrence against the numpy fallback.

Runs forward + backward of one LSTM direction at a few batch/hidden sizes
and prints a table of milliseconds per call for each backend. Usage::

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from a2clnet import kernels

SHAPES = [  # (time, batch, hidden)
    (24, 1, 8),
    (24, 32, 8),
    (22, 32, 64),
    (22, 32, 32),
    (22, 128, 64),
]


def _case(T, B, H, seed=0):
    r = np.random.default_rng(seed)
    pre = r.normal(size=(T, B, 4 * H))
    w_h = r.normal(size=(H, 4 * H)) / np.sqrt(H)
    zeros = np.zeros((B, H))
    dh_up = r.normal(size=(T, B, H))
    return pre, w_h, zeros, dh_up


def run_once(mod, case):
    pre, w_h, zeros, dh_up = case
    gates = pre.copy()
    c, h = mod.lstm_forward(gates, w_h, zeros, zeros, False)
    dz = np.empty_like(gates)
    mod.lstm_backward(dh_up, gates, c, zeros, w_h, dz, False)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    args = ap.parse_args(argv)
    names = sorted(kernels.BACKENDS)
    print(f"selected backend: {kernels.BACKEND}")
    print(f"{'T':>4} {'B':>5} {'H':>5} " + " ".join(f"{n + ' ms':>12}" for n in names) + "   speedup")
    for T, B, H in SHAPES:
        case = _case(T, B, H)
        times = {}
        for n in names:
            mod = kernels.BACKENDS[n]
            t = timeit.Timer(lambda: run_once(mod, case))
            number, _ = t.autorange()
            times[n] = min(t.repeat(args.repeat, number)) / number * 1e3
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{T:>4} {B:>5} {H:>5} " + " ".join(f"{times[n]:>12.3f}" for n in names) + f"   {speed:7.1f}x")


if __name__ == "__main__":
    main()
