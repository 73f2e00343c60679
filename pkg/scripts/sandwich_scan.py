"""GMC small-ball slope at several disorder strengths next to the decay constants C1, C2.

For each gamma the moment scan picks (p, q), the bounds are evaluated with
them, and the slope is fitted from the splitting estimates at c = 1 and 2.
"""

import argparse

from wienergmc.config import ExperimentConfig
from wienergmc.moments import pq_stability_scan, replica_masses
from wienergmc.smallball import bounds_C1_C2, exponent_fit, gmc_smallball


def one(cfg, gamma, eps_list, cs):
    g = cfg.weight_function()
    masses = replica_masses(cfg, cfg.grid.T_grid, gamma)
    scan = pq_stability_scan(cfg, gamma=gamma, masses=masses)
    p = scan["best_p"] or cfg.bounds.p
    q = scan["best_q"] or cfg.bounds.q
    b = bounds_C1_C2(gamma, 1.0, g, cfg.lattice.d, p, q, cfg.phi.selfconv0)
    slopes = []
    for c in cs:
        series = [(e, gmc_smallball(cfg, gamma, 1.0, e, g, c=c, seed_index=i)["log_estimate"])
                  for i, e in enumerate(eps_list)]
        slopes.append(exponent_fit(series, log_values=True)[0])
    return p, q, b, slopes


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.1, 0.3])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.25, 0.3, 0.35, 0.4])
    ap.add_argument("--c", type=float, nargs="+", default=[1.0, 2.0])
    a = ap.parse_args()
    cfg = ExperimentConfig.load(a.config) if a.config else ExperimentConfig()
    print("gamma    p    q       C1       C2  slopes")
    for gamma in a.gammas:
        p, q, b, slopes = one(cfg, gamma, a.eps, a.c)
        print(f"{gamma:5.2f} {p:4g} {q:4g} {b.C1:8.4f} {b.C2:8.4f}  " + " ".join(f"{s:.4f}" for s in slopes))
