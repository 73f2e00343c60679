"""Compiled inner loops.

Lattice noise is counter-based: the standard normal attached to cell ``j`` of
slab ``k`` is a pure function of ``(seed, k, j)`` (splitmix64 mixing followed
by Box-Muller). Nothing is stored, so boxes can be as large as the path range
demands and any sub-block can be regenerated bit-identically.

All kernels write per-path outputs only; no cross-path reductions happen here,
which keeps results independent of the thread count.
"""

import math

import numba as nb
import numpy as np

# the bundled TBB is too old; skip probing it
if nb.config.THREADING_LAYER == "default":
    nb.config.THREADING_LAYER = "omp"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 2.0 * math.pi

PROFILE_POWER = 0  # exp(-1 / (1 - s**(2*power)))
PROFILE_TABLE = 1  # linear interpolation of a tabulated radial profile


@nb.njit(inline="always", cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always", cache=True)
def _slab_key(seed, k):
    return _mix(seed + (np.uint64(k) + _ONE) * _GOLDEN)


@nb.njit(inline="always", cache=True)
def _cell_normal(slab_key, j):
    h1 = _mix(slab_key + np.uint64(j) * _GOLDEN)
    h2 = _mix(h1 ^ _M1)
    u1 = (float(h1 >> _S11) + 1.0) * _INV53
    u2 = float(h2 >> _S11) * _INV53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


@nb.njit(inline="always", cache=True)
def _profile(s2, code, power, table):
    """Unnormalized radial profile at squared scaled radius ``s2`` (< 1)."""
    if code == PROFILE_POWER:
        t = s2
        for _ in range(power - 1):
            t *= s2
        return math.exp(-1.0 / (1.0 - t))
    n = table.size
    pos = math.sqrt(s2) * (n - 1)
    i = int(pos)
    if i >= n - 1:
        return table[n - 1]
    f = pos - i
    return table[i] * (1.0 - f) + table[i + 1] * f


@nb.njit(cache=True)
def profile_values(s2, code, power, table):
    out = np.zeros(s2.shape)
    flat_in = s2.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        if flat_in[i] < 1.0:
            flat_out[i] = _profile(flat_in[i], code, power, table)
    return out


@nb.njit(cache=True)
def standard_normal_block(seed, seed2, k_switch, k0, k1, lo, shape, n, out):
    """Fill ``out[(k - k0), c]`` with the base normals of a rectangular block.

    ``lo``/``shape`` are per-axis index origin and extent; ``c`` runs over the
    block cells in C order.
    """
    d = lo.size
    idx = np.empty(d, np.int64)
    for k in range(k0, k1):
        key = _slab_key(seed if k < k_switch else seed2, k)
        for a in range(d):
            idx[a] = 0
        c = 0
        while True:
            flat = 0
            for a in range(d):
                flat = flat * n + lo[a] + idx[a]
            out[k - k0, c] = _cell_normal(key, flat)
            c += 1
            a = d - 1
            while a >= 0:
                idx[a] += 1
                if idx[a] < shape[a]:
                    break
                idx[a] = 0
                a -= 1
            if a < 0:
                break


@nb.njit(parallel=True, cache=True)
def field_sums(
    pos, k0, seed, seed2, k_switch, noise_scale, L, dx, n, rho, code, power, table, cnorm,
    cell_var, ov_pos, ov_coef, ov_k0, ov_k1, checkpoints, out_h, out_v,
):
    """Cumulative ``sum_k sum_j phi(x_k - y_j) dB[k, j]`` along each path.

    ``pos[m, i]`` is the position used for slab ``k0 + i``. The discrete
    variance ``cell_var * sum phi^2`` is accumulated alongside. Values are
    stored at the slab counts listed in ``checkpoints`` (sorted, 1-based).
    Overlay ``o`` adds ``ov_coef[o] * phi(ov_pos[o, k] - y_j) * cell_var`` to
    every cell of slab ``k`` in ``[ov_k0[o], ov_k1[o])``.
    """
    M, K, d = pos.shape
    n_ov = ov_coef.size
    ncp = checkpoints.size
    rho2 = rho * rho
    sd = math.sqrt(cell_var) * noise_scale
    for m in nb.prange(M):
        lo = np.empty(d, np.int64)
        hi = np.empty(d, np.int64)
        idx = np.empty(d, np.int64)
        h = 0.0
        v = 0.0
        c = 0
        for kk in range(K):
            k = k0 + kk
            empty = False
            for a in range(d):
                x = pos[m, kk, a]
                lo[a] = int(math.ceil((x - rho + L) / dx))
                hi[a] = int(math.floor((x + rho + L) / dx))
                if lo[a] > hi[a]:
                    empty = True
                idx[a] = lo[a]
            key = _slab_key(seed if k < k_switch else seed2, k)
            while not empty:
                s2 = 0.0
                flat = 0
                for a in range(d):
                    y = -L + idx[a] * dx - pos[m, kk, a]
                    s2 += y * y
                    flat = flat * n + idx[a]
                s2 /= rho2
                if s2 < 1.0:
                    w = cnorm * _profile(s2, code, power, table)
                    val = 0.0
                    if sd != 0.0:
                        val = sd * _cell_normal(key, flat)
                    for o in range(n_ov):
                        if ov_k0[o] <= k and k < ov_k1[o]:
                            so = 0.0
                            for a in range(d):
                                y = -L + idx[a] * dx - ov_pos[o, k, a]
                                so += y * y
                            so /= rho2
                            if so < 1.0:
                                val += ov_coef[o] * cnorm * _profile(so, code, power, table) * cell_var
                    h += w * val
                    v += w * w
                a = d - 1
                while a >= 0:
                    idx[a] += 1
                    if idx[a] <= hi[a]:
                        break
                    idx[a] = lo[a]
                    a -= 1
                if a < 0:
                    break
            while c < ncp and checkpoints[c] == kk + 1:
                out_h[m, c] = h
                out_v[m, c] = v * cell_var
                c += 1


@nb.njit(parallel=True, cache=True)
def pair_overlaps(pa, pb, L, dx, rho, code, power, table, cnorm, cell_var, checkpoints, out):
    """Cumulative ``cell_var * sum_k sum_j phi(a_k - y_j) phi(b_k - y_j)`` per pair."""
    P, K, d = pa.shape
    ncp = checkpoints.size
    rho2 = rho * rho
    for m in nb.prange(P):
        lo = np.empty(d, np.int64)
        hi = np.empty(d, np.int64)
        idx = np.empty(d, np.int64)
        acc = 0.0
        c = 0
        for k in range(K):
            far = 0.0
            for a in range(d):
                diff = pa[m, k, a] - pb[m, k, a]
                far += diff * diff
            empty = far >= 4.0 * rho2
            for a in range(d):
                x = pa[m, k, a]
                lo[a] = int(math.ceil((x - rho + L) / dx))
                hi[a] = int(math.floor((x + rho + L) / dx))
                if lo[a] > hi[a]:
                    empty = True
                idx[a] = lo[a]
            while not empty:
                sa = 0.0
                sb = 0.0
                for a in range(d):
                    y = -L + idx[a] * dx
                    ya = y - pa[m, k, a]
                    yb = y - pb[m, k, a]
                    sa += ya * ya
                    sb += yb * yb
                sa /= rho2
                sb /= rho2
                if sa < 1.0 and sb < 1.0:
                    acc += _profile(sa, code, power, table) * _profile(sb, code, power, table)
                a = d - 1
                while a >= 0:
                    idx[a] += 1
                    if idx[a] <= hi[a]:
                        break
                    idx[a] = lo[a]
                    a -= 1
                if a < 0:
                    break
            while c < ncp and checkpoints[c] == k + 1:
                out[m, c] = acc * cnorm * cnorm * cell_var
                c += 1


@nb.njit(cache=True)
def split_killed(N, start, dts, radius, shift, has_shift, record, threshold, seed):
    """Fixed-population splitting estimate of P(|w_t - shift_t| < radius_t on the grid).

    Step ``i`` advances time by ``dts[i]`` and then checks the tube. Particles
    that leave it are killed; when fewer than ``threshold*N`` survive, the
    population is refilled by uniform (multinomial) resampling among
    survivors. The log-probability estimate is the sum of log survival
    fractions. Positions are snapshotted after every step with ``record[i]``
    set, together with ancestor indices so surviving genealogies can be
    rebuilt.

    Returns (log_p, exhausted, n_resample, snaps, parents, alive).
    """
    np.random.seed(seed)
    d = start.size
    n_steps = dts.size
    n_rec = 1
    for i in range(n_steps):
        if record[i]:
            n_rec += 1
    snaps = np.zeros((n_rec, N, d))
    parents = np.zeros((n_rec, N), np.int64)
    pos = np.empty((N, d))
    for m in range(N):
        for a in range(d):
            pos[m, a] = start[a]
        parents[0, m] = m
    snaps[0] = pos
    anc = np.arange(N)
    alive = np.ones(N, np.bool_)
    n_alive = N
    log_p = 0.0
    n_res = 0
    rec = 0
    for i in range(n_steps):
        r2 = radius[i] * radius[i]
        sq = math.sqrt(dts[i])
        for m in range(N):
            if alive[m]:
                s = 0.0
                for a in range(d):
                    pos[m, a] += sq * np.random.standard_normal()
                    diff = pos[m, a]
                    if has_shift:
                        diff -= shift[i, a]
                    s += diff * diff
                if s >= r2:
                    alive[m] = False
                    n_alive -= 1
        if record[i]:
            rec += 1
            snaps[rec] = pos
            parents[rec] = anc
            for m in range(N):
                anc[m] = m
        if n_alive == 0:
            return log_p, True, n_res, snaps, parents, alive
        if n_alive < threshold * N and i < n_steps - 1:
            log_p += math.log(n_alive / N)
            survivors = np.empty(n_alive, np.int64)
            c = 0
            for m in range(N):
                if alive[m]:
                    survivors[c] = m
                    c += 1
            new_pos = np.empty((N, d))
            new_anc = np.empty(N, np.int64)
            for m in range(N):
                j = survivors[int(np.random.random() * n_alive)]
                new_pos[m] = pos[j]
                new_anc[m] = anc[j]
            pos = new_pos
            anc = new_anc
            for m in range(N):
                alive[m] = True
            n_alive = N
            n_res += 1
    log_p += math.log(n_alive / N)
    return log_p, False, n_res, snaps, parents, alive


@nb.njit(cache=True)
def trace_genealogy(snaps, parents, final_idx):
    """Rebuild snapshot trajectories for particles ``final_idx`` at the last record."""
    n_rec, N, d = snaps.shape
    P = final_idx.size
    out = np.empty((P, n_rec, d))
    for p in range(P):
        j = final_idx[p]
        for r in range(n_rec - 1, -1, -1):
            out[p, r] = snaps[r, j]
            j = parents[r, j]
    return out


@nb.njit(cache=True)
def occupation_integrals(starts, n_paths, n_steps, dt, scale, grid_r, grid_v, marks, seed):
    """Riemann sums of ``V(scale * w_s)`` for Brownian ``w`` from each start.

    ``V`` is radial, given by linear interpolation of ``grid_v`` on the uniform
    radial grid ``grid_r`` (zero beyond). All starts share the same increments.
    Returns array (n_starts, n_paths, len(marks)) of partial integrals at the
    step counts in ``marks``.
    """
    np.random.seed(seed)
    S, d = starts.shape
    nm = marks.size
    out = np.zeros((S, n_paths, nm))
    r_max = grid_r[-1]
    h = grid_r[1] - grid_r[0]
    ng = grid_r.size
    inc = np.empty(d)
    x = np.empty((S, d))
    for p in range(n_paths):
        for s in range(S):
            for a in range(d):
                x[s, a] = starts[s, a]
        acc = np.zeros(S)
        c = 0
        for i in range(n_steps):
            for s in range(S):
                r2 = 0.0
                for a in range(d):
                    r2 += x[s, a] * x[s, a]
                r = scale * math.sqrt(r2)
                if r < r_max:
                    q = r / h
                    j = int(q)
                    f = q - j
                    if j + 1 < ng:
                        acc[s] += (grid_v[j] * (1.0 - f) + grid_v[j + 1] * f) * dt
            for a in range(d):
                inc[a] = math.sqrt(dt) * np.random.standard_normal()
            for s in range(S):
                for a in range(d):
                    x[s, a] += inc[a]
            while c < nm and marks[c] == i + 1:
                for s in range(S):
                    out[s, p, c] = acc[s]
                c += 1
    return out
