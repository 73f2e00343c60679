"""Exact sampling of the size-biased (path, noise) law and the identities it satisfies.

Under the size-biased law the path is plain Brownian motion and, given the
path, the noise is the original noise plus the drift ``gamma phi(w_t - y)``.
Both facts hold exactly on the lattice because ``E[exp(gamma H - gamma^2 var/2)] = 1``
for every path.
"""

from dataclasses import dataclass
import math

import numpy as np

from .noise import hamiltonians, sample_noise, shifted_noise
from .paths import PathSample, brownian_paths, sample_brownian
from .polymer import _checkpoints, log_weights, replica_seeds
from .rng import stream_seed


@dataclass(frozen=True, eq=False)
class SizeBiasedPair:
    path: PathSample
    noise: object
    gamma: float
    T: float


def size_biased_pair(spec, mollifier, gamma, noise_seed, path_seed, path_index=0, extra_tilt=None):
    """One draw from the size-biased law on the lattice.

    ``extra_tilt = (coef, t_end)`` adds a second drift ``coef phi(w_t - y)``
    on ``[0, t_end)``, which gives a different measure whose typical paths
    have the same long-time thickness.
    """
    path = sample_brownian(spec, path_seed, index=path_index)
    noise = shifted_noise(sample_noise(spec, noise_seed), mollifier, path, gamma)
    if extra_tilt is not None:
        coef, t_end = extra_tilt
        noise = shifted_noise(noise, mollifier, path, coef, k_end=min(spec.K, round(t_end / spec.dt)))
    return SizeBiasedPair(path=path, noise=noise, gamma=float(gamma), T=spec.T)


def thick_point_stat(cfg, T_grid=None, replicas=None, gamma=None, reweighted=False, extra_tilt=None):
    """Distribution of ``H_T / var_T`` at the sampled path under the size-biased law.

    Each replica draws a fresh path and noise; horizons are prefixes of one
    draw. With ``reweighted`` the same mean is also estimated from independent
    (path, noise) pairs weighted by ``exp(gamma H - gamma^2 var/2)``.
    """
    T_grid = tuple(cfg.grid.T_grid if T_grid is None else T_grid)
    R = cfg.run.replicas if replicas is None else replicas
    gamma = cfg.run.gamma if gamma is None else gamma
    spec = cfg.spec(max(T_grid))
    cps = _checkpoints(spec, T_grid)
    ratio = np.empty((R, len(T_grid)))
    Hq = np.empty((R, len(T_grid)))
    Vq = np.empty((R, len(T_grid)))
    rw = np.empty((R, len(T_grid))) if reweighted else None
    endpoints = np.empty((R, spec.d))
    for r in range(R):
        nseed, pseed = replica_seeds(cfg.run.seed, r)
        pair = size_biased_pair(spec, cfg.phi, gamma, nseed, pseed, extra_tilt=extra_tilt)
        pos = pair.path.positions
        endpoints[r] = pos[spec.K]
        H, V = hamiltonians(pair.noise, cfg.phi, pos[None, : spec.K], cps)
        Hq[r], Vq[r] = H[0], V[0]
        ratio[r] = H[0] / V[0]
        if reweighted:
            H0, V0 = hamiltonians(sample_noise(spec, nseed), cfg.phi, pos[None, : spec.K], cps)
            rw[r] = np.exp(log_weights(H0[0], V0[0], gamma)) * H0[0]
    rows = []
    for j, T in enumerate(T_grid):
        x = ratio[:, j]
        m, sd = float(x.mean()), float(x.std(ddof=1))
        se = sd / math.sqrt(R)
        row = {
            "T": T, "mean": m, "se": se, "sd": sd, "z": (m - gamma) / se if se > 0 else 0.0,
            "mean_var": float(Vq[:, j].mean()), "mean_H": float(Hq[:, j].mean()),
            "mean_H_se": float(Hq[:, j].std(ddof=1) / math.sqrt(R)),
        }
        if reweighted:
            row["reweighted_H"] = float(rw[:, j].mean())
            row["reweighted_H_se"] = float(rw[:, j].std(ddof=1) / math.sqrt(R))
        hist, edges = np.histogram(x, bins=30)
        row["hist_counts"] = hist.tolist()
        row["hist_edges"] = edges.tolist()
        rows.append(row)
    return {"gamma": gamma, "R": R, "rows": rows, "ratios": ratio, "endpoints": endpoints}


@dataclass(frozen=True, eq=False)
class TestFunction:
    """``f(t, y)`` on lattice cells inside the box ``[lo, hi]`` and slabs ``[k_start, k_end)``."""

    name: str
    lo: tuple
    hi: tuple
    fn: object
    k_start: int = 0
    k_end: int = None

    def index_box(self, spec):
        lo = np.ceil((np.asarray(self.lo, float) + spec.L) / spec.dx - 1e-9).astype(np.int64)
        hi = np.floor((np.asarray(self.hi, float) + spec.L) / spec.dx + 1e-9).astype(np.int64)
        return np.clip(lo, 0, spec.n - 1), np.clip(hi, 0, spec.n - 1)

    def table(self, spec):
        """Values ``F[k, cells...]`` for slabs ``k_start..k_end-1`` and the block's grid points."""
        lo, hi = self.index_box(spec)
        axes = [-spec.L + np.arange(a, b + 1) * spec.dx for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        k_end = spec.K if self.k_end is None else self.k_end
        ts = np.arange(self.k_start, k_end) * spec.dt
        F = np.stack([np.broadcast_to(self.fn(t, grid), grid.shape[:-1]) for t in ts]) if len(ts) else None
        return F, lo, hi, grid, self.k_start, k_end


def default_test_functions(d, T):
    ones = lambda t, y: np.ones(y.shape[:-1])
    osc = lambda t, y: np.cos(np.pi * y[..., 0]) * np.cos(2 * np.pi * t / T)
    return [
        TestFunction("central_box", (-1.0,) * d, (1.0,) * d, ones),
        TestFunction("oscillatory", (-1.5,) * d, (1.5,) * d, osc),
        TestFunction("offset_box", (1.5,) + (-1.0,) * (d - 1), (3.0,) + (1.0,) * (d - 1), ones),
    ]


def noise_functional(noise, F, lo, hi, k0, k1):
    """``sum_k sum_j F[k, j] dB'[k, j]`` over the block (drift overlays included)."""
    if F is None:
        return 0.0
    return float(np.sum(F * noise.block(k0, k1, lo, hi)))


def drift_functional(spec, mollifier, F, grid, k0, k1, paths):
    """``sum_k sum_j F[k, j] phi(w_{t_k} - y_j) dt dx^d`` for each path."""
    out = np.zeros(len(paths))
    if F is None:
        return out
    for k in range(k0, k1):
        diff = grid[None] - paths[:, k].reshape((len(paths),) + (1,) * spec.d + (spec.d,))
        out += np.sum(F[k - k0][None] * mollifier(diff), axis=tuple(range(1, spec.d + 1)))
    return out * spec.cell_var


def uniqueness_identity_check(cfg, T=None, functions=None, replicas=None, gamma=None, drift_T=None):
    """``E_Q[B'(f)]`` against ``gamma E_0[sum f phi dt dx^d]`` for several test functions.

    The left side uses size-biased pairs (one per replica); the right side uses
    an independent stream of Brownian paths. ``drift_T`` limits the drift to
    ``[0, drift_T)`` (default: the whole horizon).
    """
    T = cfg.run.T if T is None else T
    R = cfg.run.replicas if replicas is None else replicas
    gamma = cfg.run.gamma if gamma is None else gamma
    spec = cfg.spec(T)
    functions = default_test_functions(spec.d, T) if functions is None else functions
    k_drift = spec.K if drift_T is None else round(drift_T / spec.dt)
    tables = [f.table(spec) for f in functions]
    lhs = np.zeros((R, len(functions)))
    for r in range(R):
        nseed, pseed = replica_seeds(cfg.run.seed, r)
        path = sample_brownian(spec, pseed)
        noise = shifted_noise(sample_noise(spec, nseed), cfg.phi, path, gamma, k_end=k_drift)
        for i, (F, lo, hi, _, k0, k1) in enumerate(tables):
            lhs[r, i] = noise_functional(noise, F, lo, hi, k0, k1)
    ps = stream_seed(cfg.run.seed, "pairs", 1)
    rhs = np.zeros((R, len(functions)))
    for start in range(0, R, 256):
        M = min(256, R - start)
        paths = brownian_paths(spec.d, spec.dt, spec.K, ps, M, offset=start)
        for i, (F, lo, hi, grid, k0, k1) in enumerate(tables):
            k1d = min(k1, k_drift)
            sub = None if (F is None or k1d <= k0) else F[: k1d - k0]
            rhs[start : start + M, i] = gamma * drift_functional(spec, cfg.phi, sub, grid, k0, max(k0, k1d), paths)
    rows = []
    for i, f in enumerate(functions):
        lm, ls = float(lhs[:, i].mean()), float(lhs[:, i].std(ddof=1) / math.sqrt(R))
        rm, rs = float(rhs[:, i].mean()), float(rhs[:, i].std(ddof=1) / math.sqrt(R))
        den = math.hypot(ls, rs)
        z = (lm - rm) / den if den > 0 else 0.0
        rows.append({"function": f.name, "lhs": lm, "lhs_se": ls, "rhs": rm, "rhs_se": rs, "z": z, "ok": bool(abs(z) <= 3)})
    return {"gamma": gamma, "T": T, "R": R, "rows": rows, "lhs_values": lhs, "rhs_values": rhs}
