"""Moments, running maximum and tail diagnostics of the total mass."""

import math

import numpy as np

from .errors import ConfigError
from .noise import hamiltonians, sample_noise
from .paths import sample_paths
from .polymer import _checkpoints, log_weights, replica_seeds
from .rng import stream_rng


def _replica_sums(cfg, spec, cps, gamma, r, M0, max_paths, target):
    """Path sums for one replica, doubling ``M`` until the relative SE meets ``target``.

    Extra paths continue the replica's own path stream, so the decision and
    the result depend on nothing outside the replica.
    """
    nseed, pseed = replica_seeds(cfg.run.seed, r)
    noise = sample_noise(spec, nseed)
    s1 = np.zeros(len(cps))
    s2 = np.zeros(len(cps))
    M = 0
    batch = M0
    while True:
        paths = sample_paths(spec, pseed, batch, offset=M)
        H, V = hamiltonians(noise, cfg.phi, paths[:, : spec.K], cps)
        W = np.exp(log_weights(H, V, gamma))
        s1 += W.sum(axis=0)
        s2 += (W * W).sum(axis=0)
        M += batch
        mean = s1 / M
        var = np.maximum(s2 / M - mean * mean, 0.0) * M / (M - 1)
        rel = np.sqrt(var / M) / np.where(mean > 0, mean, np.inf)
        if target is None or np.all(rel <= target) or M >= max_paths:
            return mean, rel, M
        batch = min(M, max_paths - M)


def replica_masses(cfg, T_grid, gamma=None, adaptive=True, replicas=None):
    """Per-replica ``mu_T(Omega)`` on coupled horizons with the adaptive path count.

    Returns ``(Z, rel_se, M_used)`` with ``Z`` of shape ``(R, len(T_grid))``.
    """
    gamma = cfg.run.gamma if gamma is None else gamma
    R = cfg.run.replicas if replicas is None else replicas
    spec = cfg.spec(max(T_grid))
    cps = _checkpoints(spec, T_grid)
    mp = cfg.moments
    Z = np.empty((R, len(T_grid)))
    rel = np.empty_like(Z)
    used = np.empty(R, dtype=np.int64)
    for r in range(R):
        Z[r], rel[r], used[r] = _replica_sums(
            cfg, spec, cps, gamma, r, cfg.run.paths, max(mp.max_paths, cfg.run.paths),
            mp.target_rel_se if adaptive else None,
        )
    return Z, rel, used


def bootstrap_ci(x, B, rng, level=0.95):
    """Percentile bootstrap interval for the mean of ``x``."""
    n = len(x)
    idx = rng.integers(0, n, size=(B, n))
    means = x[idx].mean(axis=1)
    a = (1 - level) / 2
    return float(np.quantile(means, a)), float(np.quantile(means, 1 - a))


def power_moments(Z, p, floor, B, rng):
    """``mean(Z^p)`` per column with SE, bootstrap CI and floor hits (for ``p < 0``)."""
    rows = []
    for j in range(Z.shape[1]):
        z = Z[:, j]
        hits = int(np.sum(z < floor)) if p < 0 else 0
        with np.errstate(divide="ignore", over="ignore"):
            x = z**p
        m = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
        lo, hi = bootstrap_ci(x, B, rng) if np.all(np.isfinite(x)) and B else (math.nan, math.nan)
        rows.append({"mean": m, "se": se, "ci_low": lo, "ci_high": hi, "floor_hits": hits})
    return rows


def moment_estimate(cfg, p, T_grid=None, gamma=None, adaptive=True, masses=None):
    """``E[mu_T(Omega)^p]`` for each horizon.

    Values below ``cfg.moments.floor`` count as floor hits for ``p < 0``; the
    result is then flagged rather than clamped.
    """
    if p == 0:
        raise ConfigError("p must be nonzero", "p")
    T_grid = tuple(cfg.grid.T_grid if T_grid is None else T_grid)
    gamma = cfg.run.gamma if gamma is None else gamma
    if masses is None:
        masses = replica_masses(cfg, T_grid, gamma, adaptive)
    Z, rel, used = masses
    rng = stream_rng(cfg.run.seed, "bootstrap", int(round(p * 1000)) & 0xFFFFFFFF)
    rows = power_moments(Z, p, cfg.moments.floor, cfg.moments.bootstrap, rng)
    for row, T, j in zip(rows, T_grid, range(len(T_grid))):
        row.update({"T": T, "p": p, "max_rel_se": float(rel[:, j].max())})
    flagged = any(r["floor_hits"] for r in rows)
    return {
        "gamma": gamma, "p": p, "rows": rows, "flagged": flagged,
        "status": "floor hits: strong disorder or too few paths" if flagged else "ok",
        "paths_used": {"min": int(used.min()), "max": int(used.max()), "mean": float(used.mean())},
        "rel_se_target": cfg.moments.target_rel_se if adaptive else None,
    }


def pq_stability_scan(cfg, T_grid=None, gamma=None, masses=None):
    """Which of the scanned positive (p) and negative (-q) moments stay stable along ``T_grid``.

    Stable means finite, free of floor hits and varying by at most
    ``cfg.moments.stability_tol`` (relative to the last horizon).
    """
    T_grid = tuple(cfg.grid.T_grid if T_grid is None else T_grid)
    if masses is None:
        masses = replica_masses(cfg, T_grid, gamma, adaptive=True)
    tol = cfg.moments.stability_tol
    out = {"p": [], "q": []}
    for kind, values, sign in (("p", cfg.moments.p_scan, 1.0), ("q", cfg.moments.q_scan, -1.0)):
        for v in values:
            rep = moment_estimate(cfg, sign * v, T_grid, gamma, masses=masses)
            means = np.array([r["mean"] for r in rep["rows"]])
            spread = float((means.max() - means.min()) / means[-1]) if np.all(np.isfinite(means)) else math.inf
            stable = bool(np.all(np.isfinite(means)) and not rep["flagged"] and spread <= tol)
            out[kind].append({kind: v, "means": means.tolist(), "spread": spread, "stable": stable})
    good_p = [r["p"] for r in out["p"] if r["stable"]]
    good_q = [r["q"] for r in out["q"] if r["stable"]]
    out["best_p"] = max(good_p) if good_p else None
    out["best_q"] = max(good_q) if good_q else None
    return out


def _running_paths(cfg, T_max, gamma, r):
    spec = cfg.spec(T_max)
    nseed, pseed = replica_seeds(cfg.run.seed, r)
    noise = sample_noise(spec, nseed)
    paths = sample_paths(spec, pseed, cfg.run.paths)
    cps = np.arange(1, spec.K + 1, dtype=np.int64)
    H, V = hamiltonians(noise, cfg.phi, paths[:, : spec.K], cps)
    return np.exp(log_weights(H, V, gamma)).mean(axis=0), spec


def mass_trajectories(cfg, T_max, gamma=None, replicas=None):
    """``mu_s(Omega)`` at every lattice time ``s <= T_max`` for each replica, ``(R, K+1)`` with ``mu_0 = 1``."""
    gamma = cfg.run.gamma if gamma is None else gamma
    R = cfg.run.replicas if replicas is None else replicas
    rows = []
    for r in range(R):
        z, spec = _running_paths(cfg, T_max, gamma, r)
        rows.append(np.concatenate([[1.0], z]))
    return np.array(rows), spec.dt


def running_max(cfg, T_grid=None, gamma=None, trajectories=None, eps_hat=None):
    """``E[max_{s <= T} mu_s(Omega)]`` over lattice times, per horizon.

    Also reports the L2 maximal-inequality bound ``1 + 2 sd(mu_T)`` and, if
    ``eps_hat`` is given, the bound ``1 + 2/eps_hat``.
    """
    T_grid = tuple(cfg.grid.T_grid if T_grid is None else T_grid)
    gamma = cfg.run.gamma if gamma is None else gamma
    if trajectories is None:
        trajectories = mass_trajectories(cfg, max(T_grid), gamma)
    Z, dt = trajectories
    run = np.maximum.accumulate(Z, axis=1)
    R = Z.shape[0]
    rows = []
    for T in T_grid:
        k = round(T / dt)
        m = run[:, k]
        mean, se = float(m.mean()), float(m.std(ddof=1) / math.sqrt(R))
        sd_T = float(Z[:, k].std(ddof=1))
        row = {"T": T, "mean": mean, "se": se, "ci_low": mean - 1.96 * se, "ci_high": mean + 1.96 * se,
               "doob_bound": 1 + 2 * sd_T, "below_doob": bool(mean - 3 * se <= 1 + 2 * sd_T)}
        if eps_hat:
            row["tail_bound"] = 1 + 2 / eps_hat
            row["below_tail_bound"] = bool(mean - 3 * se <= 1 + 2 / eps_hat)
        rows.append(row)
    monotone = bool(np.all(np.diff(run, axis=1) >= 0))
    return {"gamma": gamma, "rows": rows, "monotone_per_replica": monotone}


def tail_probe(cfg, u, eps, T, gamma=None, trajectories=None):
    """``P(M_T > u)`` against ``2 P(mu_T > u eps)`` on shared replicas."""
    if not u > 1:
        raise ConfigError("u must exceed 1", "u")
    gamma = cfg.run.gamma if gamma is None else gamma
    if trajectories is None:
        trajectories = mass_trajectories(cfg, T, gamma)
    Z, dt = trajectories
    k = round(T / dt)
    a = (Z[:, : k + 1].max(axis=1) > u).astype(float)
    b = (Z[:, k] > u * eps).astype(float)
    D = a - 2 * b
    R = len(D)
    se = float(D.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    return {
        "u": u, "eps": eps, "T": T, "gamma": gamma, "p_max": float(a.mean()), "p_end": float(b.mean()),
        "diff": float(D.mean()), "joint_se": se, "holds": bool(D.mean() <= 3 * se),
    }


def estimate_eps(cfg, T, us=(1.1, 1.25, 1.5, 2.0), grid=None, gamma=None, trajectories=None):
    """Largest ``eps`` on ``grid`` for which the tail inequality holds (point estimates) at every ``u``."""
    grid = np.linspace(0.05, 0.95, 19) if grid is None else np.asarray(grid)
    if trajectories is None:
        trajectories = mass_trajectories(cfg, T, gamma)
    best = None
    for e in grid:
        if all(tail_probe(cfg, u, e, T, gamma, trajectories)["diff"] <= 0 for u in us):
            best = float(e)
    return best
