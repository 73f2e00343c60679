"""Fitted sup-norm small-ball slope against the monitoring step h.

The Brownian small-ball slope on [0, 1] is j^2/2 with j the first zero of
J_{(d-2)/2}; discrete monitoring misses boundary crossings, so the slope is
biased low and the bias shrinks with h.
"""

import argparse

from wienergmc.paths import WeightFunction, smallball_constant, wiener_smallball_mc
from wienergmc.rng import stream_seed
from wienergmc.smallball import exponent_fit


def slope(d, h, eps_list, particles, batches, seed):
    g = WeightFunction(beta=0.0)
    series = []
    for i, eps in enumerate(eps_list):
        res = wiener_smallball_mc(g, 1.0, eps, particles, stream_seed(seed, "smallball", i), d=d, h=h,
                                  horizon=1.0, batches=batches)
        series.append((eps, res.log_p))
    return exponent_fit(series, log_values=True)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, nargs="+", default=[1, 3])
    ap.add_argument("--h", type=float, nargs="+", default=[1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.25, 0.3, 0.35, 0.4])
    ap.add_argument("--particles", type=int, default=1000)
    ap.add_argument("--batches", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    print("d        h    slope   target  rel.err     r2")
    for d in a.d:
        target = smallball_constant(WeightFunction(beta=0.0), d, 1.0)
        for h in a.h:
            s, _, r2 = slope(d, h, a.eps, a.particles, a.batches, a.seed)
            print(f"{d} {h:8.1e} {s:8.4f} {target:8.4f} {s / target - 1:+8.3f} {r2:6.4f}")
