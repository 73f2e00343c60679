"""Partition functions of the polymer measure and their diagnostics.

For a fixed noise realization, the finite-horizon mass of an event ``A`` is

    mu_T(A) = E_0[ 1_A(w) exp(gamma H_T(w) - gamma^2/2 var_T(w)) ],

estimated by averaging over ``M`` Brownian paths evaluated against that one
noise. Replication is always over noise realizations.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import _kernels as kern
from .errors import ConfigError
from .noise import discrete_overlaps, hamiltonians, sample_noise
from .paths import brownian_paths, sample_paths
from .rng import stream_seed, stream_seed32


@dataclass(frozen=True)
class PartitionEstimate:
    value: float
    se: float
    M: int
    noise_seed: int
    path_seed: int
    gamma: float
    T: float
    event: str = "Omega"


def log_weights(H, V, gamma):
    return gamma * H - 0.5 * gamma * gamma * V


def path_weights(noise, mollifier, gamma, M, path_seed, checkpoints=None, offset=0, paths=None):
    """Weights ``exp(gamma H - gamma^2 var / 2)`` for paths ``offset .. offset+M-1``.

    Returns ``(W, H, V, paths)`` with ``W, H, V`` of shape ``(M, n_checkpoints)``.
    """
    spec = noise.spec
    if paths is None:
        paths = sample_paths(spec, path_seed, M, offset=offset)
    H, V = hamiltonians(noise, mollifier, paths[:, : spec.K], checkpoints)
    return np.exp(log_weights(H, V, gamma)), H, V, paths


def _mean_se(x):
    M = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros_like(mean)
    return mean, se


def partition_function(noise, mollifier, gamma, M, path_seed):
    """``mu_T(Omega)`` at the full lattice horizon, all paths sharing ``noise``."""
    W, _, _, _ = path_weights(noise, mollifier, gamma, M, path_seed)
    v, s = _mean_se(W[:, 0])
    return PartitionEstimate(float(v), float(s), M, noise.seed, int(path_seed), float(gamma), noise.spec.T)


def measure_of_event(noise, mollifier, gamma, predicate, M, path_seed, name="A"):
    """``mu_T(A)`` for ``A = {predicate}``.

    ``predicate`` maps an array of paths ``(M, K+1, d)`` to a boolean array ``(M,)``.
    """
    W, _, _, paths = path_weights(noise, mollifier, gamma, M, path_seed)
    ind = np.asarray(predicate(paths), dtype=bool).reshape(M)
    x = W[:, 0] * ind
    v, s = _mean_se(x)
    return PartitionEstimate(float(v), float(s), M, noise.seed, int(path_seed), float(gamma), noise.spec.T, name)


@dataclass(eq=False)
class NormalizedSample:
    paths: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    ess: float
    degenerate: bool
    status: str
    H: np.ndarray
    V: np.ndarray


def normalized_sample(noise, mollifier, gamma, M, K, path_seed, rng):
    """``K`` draws from the normalized polymer measure by multinomial resampling of ``M`` proposals."""
    W, H, V, paths = path_weights(noise, mollifier, gamma, M, path_seed)
    w = W[:, 0] / W[:, 0].sum()
    ess = 1.0 / np.sum(w * w)
    idx = rng.choice(M, size=K, replace=True, p=w)
    degenerate = bool(w.max() > 0.5)
    status = "degenerate weights" if degenerate else ("low ess" if ess < 10 * K else "ok")
    return NormalizedSample(paths[idx], idx, w, float(ess), degenerate, status, H[idx, 0], V[idx, 0])


def _checkpoints(spec, T_grid):
    cps = []
    for T in T_grid:
        k = round(T / spec.dt)
        if abs(k * spec.dt - T) > 1e-9 * max(T, 1.0) or k < 1 or k > spec.K:
            raise ConfigError(f"T={T} not on the lattice grid (dt={spec.dt}, K={spec.K})", "T_grid")
        cps.append(k)
    return np.array(cps, dtype=np.int64)


def replica_seeds(master, r):
    return stream_seed(master, "noise", r), stream_seed(master, "paths", r)


def replica_hamiltonians(cfg, T_grid, r, M=None, offset=0, noise=None):
    """H and var at each horizon of ``T_grid`` for replica ``r`` (prefix sums of one long noise)."""
    spec = cfg.spec(max(T_grid))
    nseed, pseed = replica_seeds(cfg.run.seed, r)
    noise = sample_noise(spec, nseed) if noise is None else noise
    M = cfg.run.paths if M is None else M
    paths = sample_paths(spec, pseed, M, offset=offset)
    H, V = hamiltonians(noise, cfg.phi, paths[:, : spec.K], _checkpoints(spec, T_grid))
    return H, V, noise


def replica_values(cfg, T_grid, gammas=None, replicas=None):
    """Per-replica partition values ``Z[g, r, t]`` (and within-replica SEs) on coupled horizons."""
    gammas = cfg.gammas if gammas is None else tuple(gammas)
    R = cfg.run.replicas if replicas is None else replicas
    Z = np.empty((len(gammas), R, len(T_grid)))
    S = np.empty_like(Z)
    for r in range(R):
        H, V, _ = replica_hamiltonians(cfg, T_grid, r)
        for i, g in enumerate(gammas):
            Z[i, r], S[i, r] = _mean_se(np.exp(log_weights(H, V, g)))
    return Z, S


def martingale_check(cfg, T_grid=None, gammas=None):
    """Mean over noise replicas of ``mu_T(Omega)`` for each horizon; should be 1.

    Horizons share one noise per replica, so the values along ``T_grid`` are
    a sampled martingale.
    """
    T_grid = tuple(cfg.grid.T_grid if T_grid is None else T_grid)
    gammas = cfg.gammas if gammas is None else tuple(gammas)
    Z, _ = replica_values(cfg, T_grid, gammas)
    R = Z.shape[1]
    rows = []
    for i, g in enumerate(gammas):
        for j, T in enumerate(T_grid):
            m = float(Z[i, :, j].mean())
            se = float(Z[i, :, j].std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
            z = 0.0 if se == 0 else (m - 1.0) / se
            rows.append({"gamma": g, "T": T, "mean": m, "se": se, "z": z, "flag": bool(abs(z) > 3 or (se == 0 and m != 1.0))})
    return {"rows": rows, "replica_values": Z, "ok": not any(r["flag"] for r in rows)}


def adaptedness_check(cfg, T, T_total, r=0, M=16):
    """Replace noise after ``T`` and confirm horizon-``T`` values are bit-identical."""
    spec = cfg.spec(T_total)
    nseed, pseed = replica_seeds(cfg.run.seed, r)
    noise = sample_noise(spec, nseed)
    alt = noise.reseeded_after(round(T / spec.dt), stream_seed(cfg.run.seed, "noise_alt", r))
    paths = sample_paths(spec, pseed, M)[:, : spec.K]
    cps = _checkpoints(spec, (T, T_total))
    h1, v1 = hamiltonians(noise, cfg.phi, paths, cps)
    h2, v2 = hamiltonians(alt, cfg.phi, paths, cps)
    return {
        "prefix_identical": bool(np.array_equal(h1[:, 0], h2[:, 0]) and np.array_equal(v1[:, 0], v2[:, 0])),
        "suffix_changed": bool(not np.array_equal(h1[:, 1], h2[:, 1])),
    }


def l2_identity_check(cfg, T=None, gamma=None, replicas=None, pairs=None):
    """Second moment of the mass two ways.

    Left: noise average of the unbiased pair statistic
    ``(S^2 - sum W^2) / (M (M-1))`` with ``S = sum W`` (same noise, distinct
    paths). Right: ``E exp(gamma^2 overlap)`` over independent path pairs,
    where ``overlap`` is the discrete covariance of ``H(w)`` and ``H(w')``.
    Both estimate the same number exactly at the lattice level.
    """
    T = cfg.run.T if T is None else T
    gamma = cfg.run.gamma if gamma is None else gamma
    R = cfg.run.replicas if replicas is None else replicas
    P = cfg.run.pairs if pairs is None else pairs
    spec = cfg.spec(T)
    M = cfg.run.paths
    lhs = np.empty(R)
    plug = np.empty(R)
    for r in range(R):
        H, V, _ = replica_hamiltonians(cfg, (T,), r)
        W = np.exp(log_weights(H[:, 0], V[:, 0], gamma))
        S = W.sum()
        lhs[r] = (S * S - np.sum(W * W)) / (M * (M - 1))
        plug[r] = (S / M) ** 2
    ps = stream_seed(cfg.run.seed, "pairs", 0)
    a = brownian_paths(spec.d, spec.dt, spec.K, ps, P)[:, : spec.K]
    b = brownian_paths(spec.d, spec.dt, spec.K, ps, P, offset=P)[:, : spec.K]
    ov = discrete_overlaps(spec, cfg.phi, a, b)[:, 0]
    rhs_vals = np.exp(gamma * gamma * ov)
    l_m, l_se = float(lhs.mean()), float(lhs.std(ddof=1) / math.sqrt(R))
    r_m, r_se = float(rhs_vals.mean()), float(rhs_vals.std(ddof=1) / math.sqrt(P))
    den = math.hypot(l_se, r_se)
    z = 0.0 if den == 0 else (l_m - r_m) / den
    return {
        "gamma": gamma, "T": T, "R": R, "M": M, "pairs": P,
        "lhs": l_m, "lhs_se": l_se, "rhs": r_m, "rhs_se": r_se, "z": z, "ok": bool(abs(z) <= 3),
        "plugin_second_moment": float(plug.mean()), "overlaps": ov,
    }


def l2_rhs_curve(cfg, gammas, T=None, pairs=None):
    """``E exp(gamma^2 overlap)`` for several gammas on shared path pairs."""
    T = cfg.run.T if T is None else T
    P = cfg.run.pairs if pairs is None else pairs
    spec = cfg.spec(T)
    ps = stream_seed(cfg.run.seed, "pairs", 0)
    a = brownian_paths(spec.d, spec.dt, spec.K, ps, P)[:, : spec.K]
    b = brownian_paths(spec.d, spec.dt, spec.K, ps, P, offset=P)[:, : spec.K]
    ov = discrete_overlaps(spec, cfg.phi, a, b)[:, 0]
    vals = np.exp(np.multiply.outer(np.square(gammas), ov))
    return vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(P)


def l2_rhs_at(cfg, T_grid, gamma, pairs=None):
    """Right side of the second-moment identity at several horizons (shared pairs)."""
    P = cfg.run.pairs if pairs is None else pairs
    spec = cfg.spec(max(T_grid))
    ps = stream_seed(cfg.run.seed, "pairs", 0)
    a = brownian_paths(spec.d, spec.dt, spec.K, ps, P)[:, : spec.K]
    b = brownian_paths(spec.d, spec.dt, spec.K, ps, P, offset=P)[:, : spec.K]
    ov = discrete_overlaps(spec, cfg.phi, a, b, _checkpoints(spec, T_grid))
    vals = np.exp(gamma * gamma * ov)
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(P)


def occupation_green_3d(mollifier):
    """``int_0^{2 rho} (phi*phi)(r) r dr``: the occupation integral from the origin when ``d = 3``."""
    r = np.linspace(0.0, 2 * mollifier.rho, 20001)
    f = mollifier.conv(r) * r
    return float(np.sum((f[1:] + f[:-1]) * np.diff(r)) / 2)


def khasminskii_certificate(mollifier, gamma, T_cutoff=16.0, N=2000, seed=0, n_starts=9, dt=0.01):
    """Monte Carlo bound for ``sup_x E_x int_0^inf (phi*phi)(sqrt2 w_s) ds``.

    Starts lie on a radial grid ``|x| <= sqrt2 rho`` (the region where the
    integrand is nonzero at time 0); all starts share path increments. The
    integral is truncated at ``T_cutoff`` and ``2 T_cutoff``; beyond the
    cutoff the heat-kernel bound ``(4 pi s)^{-d/2}`` on the density of
    ``sqrt2 w_s`` and ``int phi*phi = 1`` give the tail
    ``(4 pi)^{-d/2} T^{1-d/2} / (d/2 - 1)``.
    """
    d = mollifier.d
    if d <= 2:
        raise ConfigError("occupation integral diverges for d <= 2 (recurrent motion)", "d")
    n_steps = int(round(2 * T_cutoff / dt))
    radii = np.linspace(0.0, math.sqrt(2.0) * mollifier.rho, n_starts)
    starts = np.zeros((n_starts, d))
    starts[:, 0] = radii
    grid_r = np.linspace(0.0, 2 * mollifier.rho, 4001)
    grid_v = mollifier.conv(grid_r)
    marks = np.array([n_steps // 2, n_steps], dtype=np.int64)
    s32 = stream_seed32(seed, "khasminskii", 0)
    occ = kern.occupation_integrals(starts, N, n_steps, dt, math.sqrt(2.0), grid_r, grid_v, marks, s32)
    means = occ.mean(axis=1)
    ses = occ.std(axis=1, ddof=1) / math.sqrt(N)
    worst = int(np.argmax(means[:, 0]))
    tail = (4 * math.pi) ** (-d / 2) * T_cutoff ** (1 - d / 2) / (d / 2 - 1)
    tail2 = (4 * math.pi) ** (-d / 2) * (2 * T_cutoff) ** (1 - d / 2) / (d / 2 - 1)
    I1, I2 = float(means[worst, 0]), float(means[:, 1].max())
    bound = I1 + tail
    return {
        "I_hat": I1, "I_hat_se": float(ses[worst, 0]), "I_hat_2T": I2, "tail": tail, "tail_2T": tail2,
        "worst_start_radius": float(radii[worst]), "by_start": means[:, 0].tolist(),
        "stability": abs(I2 - I1) / I2, "certified": bool(gamma * gamma * bound < 1.0),
        "gamma_sq_bound": gamma * gamma * bound, "T_cutoff": T_cutoff, "N": N, "dt": dt,
        "approximation": "sup over a radial grid of starts; time-discretized occupation",
    }


def free_energy(cfg, T_grid=None, gammas=None):
    """``(1/T) log mu_T(Omega)`` averaged over replicas, for each horizon and gamma.

    The sign is reported as measured.
    """
    T_grid = tuple(cfg.grid.T_grid if T_grid is None else T_grid)
    gammas = cfg.gammas if gammas is None else tuple(gammas)
    Z, _ = replica_values(cfg, T_grid, gammas)
    R = Z.shape[1]
    rows = []
    for i, g in enumerate(gammas):
        for j, T in enumerate(T_grid):
            f = np.log(Z[i, :, j]) / T
            m = float(f.mean())
            se = float(f.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
            rows.append({"gamma": g, "T": T, "estimate": m, "se": se, "ci_low": m - 1.96 * se, "ci_high": m + 1.96 * se})
    return {"rows": rows}


def f_gamma_energy(gamma, mollifier, xi):
    """``(gamma^2/2) sum_alpha sum_ij m_i m_j (phi*phi)(x_i - x_j)`` for atomic collections.

    ``xi`` is a sequence of ``(points, masses)`` pairs, one per measure; the
    masses of all measures together may not exceed 1.
    """
    total_mass = 0.0
    value = 0.0
    for pts, masses in xi:
        pts = np.asarray(pts, dtype=float).reshape(-1, mollifier.d)
        masses = np.asarray(masses, dtype=float).reshape(-1)
        if np.any(masses < 0):
            raise ConfigError("masses must be nonnegative", "xi")
        total_mass += masses.sum()
        diff = pts[:, None, :] - pts[None, :, :]
        value += float(masses @ mollifier.conv(np.sqrt(np.sum(diff * diff, axis=-1))) @ masses)
    if total_mass > 1 + 1e-12:
        raise ConfigError(f"total mass {total_mass} exceeds 1", "xi")
    return 0.5 * gamma * gamma * value
