"""Positive and negative mass moments along a horizon grid, with the L2 pair-side bound."""

import argparse

from wienergmc.config import ExperimentConfig
from wienergmc.moments import moment_estimate, replica_masses
from wienergmc.polymer import l2_rhs_at

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--gamma", type=float, default=0.3)
    ap.add_argument("--T", type=float, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--p", type=float, nargs="+", default=[1, 2, -0.5, -1])
    a = ap.parse_args()
    cfg = ExperimentConfig.load(a.config) if a.config else ExperimentConfig()
    T = tuple(a.T)
    masses = replica_masses(cfg, T, a.gamma)
    rhs, rhs_se = l2_rhs_at(cfg, T, a.gamma)
    print("T     " + "  ".join(f"p={p:<+6g}" for p in a.p) + "  pair side")
    reps = [moment_estimate(cfg, p, T, a.gamma, masses=masses)["rows"] for p in a.p]
    for j, t in enumerate(T):
        print(f"{t:<5g} " + "  ".join(f"{r[j]['mean']:8.4f}" for r in reps) + f"  {rhs[j]:8.4f}")
