"""Print the Poisson and binomial bound terms for k-NN balls over a range of n.

    python3 scripts/bound_terms.py --k 1 --n 1000 10000 --replicates 2000
"""

import argparse

from steinpp.functionals import KnnFunctional, KnnParams
from steinpp.pointproc import IntensityMeasure
from steinpp.stein import MCConfig, estimate_bounds_binomial, estimate_bounds_poisson


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--n", type=int, nargs="+", default=[1000, 10_000])
    ap.add_argument("--replicates", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    K = IntensityMeasure.constant(1.0, 2)
    mc = MCConfig(replicates=args.replicates, seed=args.seed, threads=args.threads)
    print(f"{'input':9} {'n':>7} {'dtv':>10} " + " ".join(f"{'e' + str(i):>10}" for i in range(1, 7)) + f" {'total':>10}")
    for n in args.n:
        pois = estimate_bounds_poisson(KnnFunctional(KnnParams(args.k, n), K), K.scaled(n), mc)
        a_n = KnnParams(args.k, n).a_n
        binom = estimate_bounds_binomial(KnnFunctional(KnnParams(args.k, n, 0.0, a_n), K), K, n, mc)
        for name, rep in (("poisson", pois), ("binomial", binom)):
            d = rep.to_dict()
            print(f"{name:9} {n:>7} {d['dtv_lm']:>10.4g} "
                  + " ".join(f"{d['e' + str(i)]:>10.4g}" for i in range(1, 7)) + f" {d['total']:>10.4g}")
            for note in rep.notes:
                print(f"  note: {note}")


if __name__ == "__main__":
    main()
