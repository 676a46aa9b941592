"""Regenerates the extended-precision reference values used by the test suite.

Run from this directory: python3 gen_fixtures.py
Requires mpmath. Values are computed at 50 significant digits.
"""
import json
import random

import mpmath as mp

mp.mp.dps = 50
FLOOR = 1e-12


def simplex(rng, k):
    w = [rng.expovariate(1.0) for _ in range(k)]
    if rng.random() < 0.1:
        w[rng.randrange(k)] = 0.0
    s = sum(w)
    p = [x / s for x in w]
    added = 0.0
    for i, x in enumerate(p):
        if x < FLOOR:
            added += FLOOR - x
            p[i] = FLOOR
    if added > 0:
        top = max(range(k), key=lambda i: (p[i], -i))
        p[top] -= added
    return p


def log_kernel(target, center, b):
    alpha = [mp.mpf(c) / mp.mpf(b) + 1 for c in center]
    val = mp.loggamma(mp.fsum(alpha)) - mp.fsum(mp.loggamma(a) for a in alpha)
    val += mp.fsum((a - 1) * mp.log(mp.mpf(t)) for a, t in zip(alpha, target))
    return val


def kernel_cases(rng):
    cases = []
    for i in range(1000):
        k = (2, 3, 10)[i % 3]
        b = (1.0, 0.1, 0.001)[(i // 3) % 3]
        center = simplex(rng, k)
        target = simplex(rng, k)
        cases.append(
            {
                "bandwidth": b,
                "center": center,
                "target": target,
                "log_kernel": float(log_kernel(target, center, b)),
            }
        )
    return cases


def log_gamma_cases(rng):
    xs = [10 ** rng.uniform(-3, 6) for _ in range(400)]
    xs += [1 + rng.uniform(-0.3, 0.3) for _ in range(50)]
    xs += [2 + rng.uniform(-0.3, 0.3) for _ in range(50)]
    xs += [0.5, 1e-3, 14.999, 15.0, 15.001, 1e6]
    return [{"x": x, "ln_gamma": float(mp.loggamma(mp.mpf(x)))} for x in xs]


def main():
    rng = random.Random(20240601)
    json.dump({"cases": kernel_cases(rng)}, open("dirichlet_kernel.json", "w"))
    json.dump({"cases": log_gamma_cases(rng)}, open("log_gamma.json", "w"))
    center, target = [0.6, 0.3, 0.1], [0.5, 0.25, 0.25]
    print("K=3 b=0.1 example:", mp.nstr(log_kernel(target, center, 0.1), 20))
    print("K=2 b=1 example:", mp.nstr(log_kernel([0.5, 0.5], [0.5, 0.5], 1.0), 20))


if __name__ == "__main__":
    main()
