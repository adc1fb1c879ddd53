"""Relaxation of the birth-death dynamics and decay of a single discrepancy under the coupling.

    python3 scripts/glauber_demo.py --mass 5 --runs 5000
"""

import argparse
import math

import numpy as np

from steinpp.discrepancy import symmetric_difference_size
from steinpp.dynamics import simulate, simulate_coupled
from steinpp.pointproc import IntensityMeasure, PointConfiguration, RngSpec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mass", type=float, default=5.0)
    ap.add_argument("--runs", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    M = IntensityMeasure.constant(args.mass, 2)
    root = RngSpec(args.seed)
    empty = PointConfiguration.empty(2)
    print(" s   mean count  target   mean sym-diff  e^-s")
    for j, s in enumerate((0.25, 0.5, 1.0, 2.0, 4.0)):
        counts = [len(simulate(empty, M, s, root.child(0, j, i))) for i in range(args.runs)]
        w1 = PointConfiguration(np.array([[0.2, 0.2], [0.7, 0.4]]), 2)
        w2 = w1.add(np.array([[0.5, 0.5]]))
        diffs = [symmetric_difference_size(*simulate_coupled(w1, w2, M, s, root.child(1, j, i)), "coordinates")
                 for i in range(args.runs)]
        print(f"{s:4g}  {np.mean(counts):10.4f}  {args.mass * (1 - math.exp(-s)):6.4f}  "
              f"{np.mean(diffs):13.4f}  {math.exp(-s):.4f}")


if __name__ == "__main__":
    main()
