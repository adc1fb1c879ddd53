"""Independent oracle values for the bound-term and coupling tests.

Closed forms are evaluated directly; the k-NN coupling oracle is a nested
Monte Carlo written with plain numpy (no package code), so it checks the
package estimators rather than reusing them. Output is JSON on stdout.

    python3 scripts/derive_oracles.py [--outer 10000 --inner 100]
"""

import argparse
import json
import math

import numpy as np
from scipy.special import gammaln


def a_n(n, k):
    return math.log(n) + (k - 1) * math.log(math.log(n)) - gammaln(k)


def poisson_e1(n):
    # void probability of a ball of mass a_n + b = 2 log n, times 2n
    return 2 * n * math.exp(-2 * math.log(n))


def poisson_e2(n, d=2, b0=0.0):
    a, b = a_n(n, 1), math.log(n)
    g = math.exp(-(a + b0)) - math.exp(-(a + b))
    # E2 = 2 * g^2 * (n * |B_{2 r_b}|) * n, and n * |B_{r_b}| = a + b
    return 2 * g * g * 2**d * (a + b) * n


def binomial_e1(n, b_policy="a-n"):
    a = a_n(n, 1)
    q = 2 * a / n
    return 2 * n * (1 - q) ** (n - 1)


def binomial_e5(n, d=2):
    a = a_n(n, 1)
    q = 2 * a / n  # Q(S_x) with b = a_n
    p0 = a / n
    g = (1 - p0) ** (n - 2) - (1 - q) ** (n - 2)
    return 2 * n**3 * g * g * q * q / (1 - q) * (1 - 2**d * q)


def binomial_intensity_dtv(n, grid=2_000_001, upper=60.0):
    """sup_A |L(A) - M(A)| for k = 1, binomial input, b0 = 0, by a dense trapezoid rule."""
    a = a_n(n, 1)
    u = np.linspace(0.0, upper, grid)
    t = a + u
    ell = np.where(t < n, (n - 1) * np.clip(1 - t / n, 0, None) ** (n - 2), 0.0)
    diff = ell - np.exp(-u)
    pos = np.trapezoid(np.clip(diff, 0, None), u)
    neg = np.trapezoid(np.clip(-diff, 0, None), u)
    return float(max(pos, neg + math.exp(-upper)))


def mecke_rhs(mass, r):
    return mass * (1 + mass * math.pi * r * r)


def torus_nn(points, queries):
    diff = queries[:, None, :] - points[None, :, :]
    diff -= np.round(diff)
    return np.sqrt((diff**2).sum(-1))


def coupling_nested(n=100, outer=10_000, inner=100, seed=20240601):
    """2 n E[g(x, eta + x) |xi^x sym-diff xi|] for k-NN, k = 1, b0 = 0, uniform density."""
    rng = np.random.default_rng(seed)
    a = a_n(n, 1)

    def marks(R):
        return np.where(2 * R < 1, n * math.pi * R**2, n * 1.0) - a

    vals = np.empty(outer * inner)
    t = 0
    for _ in range(outer):
        x = rng.random(2)
        for _ in range(inner):
            N = rng.poisson(n)
            P = rng.random((N, 2))
            if N == 0:
                vals[t] = 0.0
                t += 1
                continue
            D = torus_nn(P, P)
            np.fill_diagonal(D, np.inf)
            R_old = D.min(axis=1)
            dx = torus_nn(P, x[None, :])[0]
            R_new = np.minimum(R_old, dx)
            g = marks(np.array(dx.min())) > 0
            if not g:
                vals[t] = 0.0
                t += 1
                continue
            m_old, m_new = marks(R_old), marks(R_new)
            old_on, new_on = m_old > 0, m_new > 0
            both = old_on & new_on
            sym = np.sum(old_on ^ new_on) + 2 * np.sum(both & (m_old != m_new))
            vals[t] = 2 * n * sym
            t += 1
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--outer", type=int, default=10_000)
    ap.add_argument("--inner", type=int, default=100)
    args = ap.parse_args()
    n = 1000
    out = {
        "poisson_e1_n1000": poisson_e1(n),
        "poisson_e2_n1000": poisson_e2(n),
        "binomial_e1_n1000": binomial_e1(n),
        "binomial_e5_n1000": binomial_e5(n),
        "mecke_rhs_mass50_r0.1": mecke_rhs(50, 0.1),
        "binomial_intensity_dtv": {str(m): binomial_intensity_dtv(m) for m in (1000, 10_000)},
    }
    mean, se = coupling_nested(outer=args.outer, inner=args.inner)
    out["knn_coupling_n100"] = {"mean": mean, "se": se, "outer": args.outer, "inner": args.inner}
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
