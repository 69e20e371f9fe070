"""Expectation values and gradients of circuits far beyond exact simulation.

Estimates a few <Z_a> on a 1000-qubit circuit with 500500 two-local gates, then
times one full loss-and-gradient evaluation at growing sizes.

    python demos/scaling_demo.py [--max-n 500]
"""

import argparse

import numpy as np

from iqpgen.bits import BitMatrix
from iqpgen.circuit import two_local
from iqpgen.cli import bench_once
from iqpgen.expval import expval_estimate
from iqpgen.mmd import uniform_bitstrings


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--max-n", type=int, default=500)
    args = ap.parse_args()

    n = 1000
    g = two_local(n)
    rng = np.random.default_rng(0)
    # small angles keep the expectations away from zero
    theta = rng.normal(0, 0.02, len(g))
    obs = np.zeros((3, n), dtype=np.uint8)
    obs[0, :2] = 1
    obs[1, [0, 500]] = 1
    obs[2, :4] = 1
    est = expval_estimate(g, theta, BitMatrix.from_array(obs), uniform_bitstrings(n, 2000, 1))
    for k in range(3):
        print(f"<Z_a> with |a|={obs[k].sum()}: {est.values[k]:+.4f} +- {est.std_errors[k]:.4f}")

    sizes = [s for s in (125, 250, 500, 1000) if s <= args.max_n]
    prev = None
    for s in sizes:
        m, secs = bench_once(s, 1000, 1000, 1000, 2.0, 0)
        growth = "" if prev is None else f"  x{secs / prev[1]:.2f} for x{m / prev[0]:.1f} gates"
        print(f"n={s:5d} gates={m:7d} {secs:7.2f} s{growth}")
        prev = (m, secs)
    if prev:
        print(f"seconds per million gate-evaluations: {prev[1] / prev[0] * 1e6 / 1000:.3f}")


if __name__ == "__main__":
    main()
