"""Brownian paths, weighted sup-norms and Wiener small-ball probabilities."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from . import _kernels as kern
from .errors import ConfigError, DivergentIntegralError
from .rng import child_rng

CHUNK = 256


@dataclass(frozen=True, eq=False)
class PathSample:
    """One path on the grid ``0, h, ..., n h``."""

    times: np.ndarray
    positions: np.ndarray
    seed: int
    index: int = 0

    @property
    def d(self):
        return self.positions.shape[-1]


def _grid_params(spec, substeps):
    substeps = int(substeps)
    if substeps < 1:
        raise ConfigError("must be >= 1", "substeps")
    return spec.d, spec.dt / substeps, spec.K * substeps


def brownian_paths(d, h, n_steps, seed, M, offset=0, start=None):
    """``M`` Brownian paths with step ``h``; path ``m`` depends only on ``(seed, offset + m)``.

    Returns array ``(M, n_steps + 1, d)``.
    """
    out = np.empty((M, n_steps + 1, d))
    origin = np.zeros(d) if start is None else np.asarray(start, dtype=float).reshape(d)
    out[:, 0] = origin
    first, last = offset // CHUNK, (offset + M - 1) // CHUNK if M else -1
    sq = math.sqrt(h)
    for c in range(first, last + 1):
        z = child_rng(seed, c).standard_normal((CHUNK, n_steps, d))
        lo = max(offset, c * CHUNK)
        hi = min(offset + M, (c + 1) * CHUNK)
        block = z[lo - c * CHUNK : hi - c * CHUNK]
        np.cumsum(block * sq, axis=1, out=block)
        out[lo - offset : hi - offset, 1:] = block + origin
    return out


def sample_paths(spec, seed, M, offset=0, start=None, substeps=1):
    """Batch of paths on the lattice time grid (optionally refined by ``substeps``)."""
    d, h, n = _grid_params(spec, substeps)
    return brownian_paths(d, h, n, seed, M, offset=offset, start=start)


def sample_brownian(spec, seed, start=None, index=0, substeps=1):
    """Single path ``index`` of the batch stream ``seed``."""
    d, h, n = _grid_params(spec, substeps)
    pos = brownian_paths(d, h, n, seed, 1, offset=index, start=start)[0]
    return PathSample(times=np.arange(n + 1) * h, positions=pos, seed=int(seed), index=int(index))


@dataclass(frozen=True)
class WeightFunction:
    """``g(t) = a * max(1, t)**beta``.

    ``beta = 1`` is the default growth; ``beta = 0`` gives the plain sup-norm
    (only meaningful with a finite horizon).
    """

    a: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError("must be positive", "a")
        if self.beta < 0:
            raise ConfigError("must be nonnegative", "beta")

    def __call__(self, t):
        return self.a * np.maximum(1.0, np.asarray(t, dtype=float)) ** self.beta

    @property
    def admissible(self):
        """Bounded below and growing at least linearly."""
        return self.beta >= 1.0

    def inv_sq_integral(self, horizon=math.inf):
        """``int_0^horizon g(t)^-2 dt`` by quadrature on ``[0, 1]`` plus the closed-form tail."""
        head, _ = integrate.quad(lambda t: 1.0 / self(t) ** 2, 0.0, min(1.0, horizon), epsabs=1e-14, epsrel=1e-13)
        if horizon <= 1.0:
            return head
        e = 1.0 - 2.0 * self.beta
        if math.isinf(horizon):
            if e >= 0:
                raise DivergentIntegralError(f"int g^-2 diverges for beta={self.beta}")
            return head + 1.0 / (self.a**2 * (-e))
        if e == 0:
            return head + math.log(horizon) / self.a**2
        return head + (horizon**e - 1.0) / (self.a**2 * e)


def _positions_times(path, times=None):
    if isinstance(path, PathSample):
        return path.positions, path.times
    pos = np.asarray(path, dtype=float)
    if times is None:
        raise ConfigError("times are required for raw position arrays", "times")
    return pos, np.asarray(times, dtype=float)


def weighted_norm(path, g, horizon, times=None):
    """``max |w_t| / g(t)`` over grid times ``0 < t <= horizon``.

    ``path`` may be a :class:`PathSample` or an array ``(..., n, d)`` with ``times``.
    """
    pos, t = _positions_times(path, times)
    if horizon > t[-1] * (1 + 1e-12):
        raise ConfigError(f"horizon {horizon} beyond path end {t[-1]}", "horizon")
    sel = (t > 0) & (t <= horizon * (1 + 1e-12))
    if not sel.any():
        return np.zeros(pos.shape[:-2]) if pos.ndim > 2 else 0.0
    r = np.sqrt(np.sum(pos[..., sel, :] ** 2, axis=-1)) / g(t[sel])
    out = r.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def modulus(path, T, delta, times=None):
    """Largest ``|w_t - w_s|`` over grid pairs with ``|t - s| < delta`` and ``s, t <= T``."""
    if not delta > 0:
        raise ConfigError("must be positive", "delta")
    pos, t = _positions_times(path, times)
    pos = pos[t <= T * (1 + 1e-12)]
    h = t[1] - t[0]
    w = min(int(math.ceil(delta / h - 1e-9)) - 1, len(pos) - 1)
    best = 0.0
    for lag in range(1, w + 1):
        diff = pos[lag:] - pos[:-lag]
        best = max(best, float(np.sqrt(np.max(np.sum(diff * diff, axis=-1)))))
    return best


def _series_reduced(nu, x):
    """``J_nu(x) / (x/2)^nu`` by the ascending series."""
    q = -(x * x) / 4.0
    term = 1.0 / gamma_fn(nu + 1.0)
    total = term
    k = 0
    while True:
        k += 1
        term *= q / (k * (k + nu))
        total += term
        if abs(term) < 1e-17 * max(abs(total), 1e-300) and k > 5:
            return total


def _asymptotic(nu, x):
    mu = 4.0 * nu * nu
    P, Q = 1.0, 0.0
    tP, tQ = 1.0, 0.0
    # Hankel expansion
    a = 1.0
    k = 0
    best = math.inf
    while k < 60:
        k += 1
        a *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(a) > best:
            break
        best = abs(a)
        if k % 2 == 1:
            tQ = a * (-1) ** ((k - 1) // 2)
            Q += tQ
        else:
            tP = a * (-1) ** (k // 2)
            P += tP
    chi = x - (nu / 2 + 0.25) * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (P * math.cos(chi) - Q * math.sin(chi))


def besselj(nu, x):
    """Bessel function of the first kind, ``x > 0``."""
    if x <= 0:
        raise ConfigError("needs x > 0", "x")
    if x <= 12.0 + 2.0 * abs(nu):
        return (x / 2.0) ** nu * _series_reduced(nu, x)
    return _asymptotic(nu, x)


def _sign_fn(nu):
    def f(x):
        if x <= 12.0 + 2.0 * abs(nu):
            return _series_reduced(nu, x)
        return _asymptotic(nu, x)

    return f


def bessel_root(d, width=1e-12):
    """Smallest positive zero of ``J_{(d-2)/2}``: bracket by scanning, then bisect."""
    if int(d) != d or d < 1:
        raise ConfigError("must be an integer >= 1", "d")
    nu = (d - 2) / 2.0
    f = _sign_fn(nu)
    step = 0.05
    a = step
    fa = f(a)
    while True:
        b = a + step
        fb = f(b)
        if fa == 0.0:
            return a
        if fa * fb <= 0.0:
            break
        a, fa = b, fb
    while b - a > width:
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def smallball_constant(g, d, horizon=math.inf):
    """``(j^2 / 2) int_0^horizon g^-2`` with ``j`` the first zero of ``J_{(d-2)/2}``."""
    return bessel_root(d) ** 2 / 2.0 * g.inv_sq_integral(horizon)


@dataclass(eq=False)
class SmallBallResult:
    """Estimate of ``P_0(|w_t - eta_t| < r eps g(t) for grid t <= horizon)``."""

    p: float
    se: float
    log_p: float
    log_se: float
    n_hits: int
    N: int
    method: str
    status: str
    horizon: float
    h: float
    batch_log_p: np.ndarray = None
    accepted: np.ndarray = None
    conditioned: np.ndarray = None
    weights: np.ndarray = None
    record_dt: float = None
    low_hits: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def exhausted(self):
        return self.status == "resolution exhausted"


def monitor_grid(horizon, h, block=None, g=None):
    """Monitoring grid made of equal blocks, each split into equal substeps.

    Blocks have length ``block`` (default: the whole horizon) and must tile the
    horizon. Inside the block starting at ``t`` the substep is at most
    ``h * (g(t)/g(0))**2`` when ``g`` is given (so the step shrinks with the
    tube radius the same way everywhere), else at most ``h``.

    Returns ``(dts, times, block_end)``: per-step lengths, the grid times
    after each step and a mask of steps that end a block.
    """
    block = horizon if block is None else float(block)
    n_blocks = int(round(horizon / block))
    if n_blocks < 1 or abs(n_blocks * block - horizon) > 1e-9 * horizon:
        raise ConfigError(f"block {block} does not tile horizon {horizon}", "block")
    starts = np.arange(n_blocks) * block
    target = np.full(n_blocks, float(h))
    if g is not None:
        target = h * (g(starts) / g(0.0)) ** 2
    subs = np.maximum(1, np.ceil(block / target - 1e-9)).astype(np.int64)
    dts = np.repeat(block / subs, subs)
    ends = np.zeros(dts.size, dtype=bool)
    ends[np.cumsum(subs) - 1] = True
    times = np.repeat(starts, subs) + np.concatenate([np.arange(1, s + 1) for s in subs]) * np.repeat(block / subs, subs)
    return dts, times, ends


def _shift_array(shift, times, d):
    if shift is None:
        return np.zeros((1, d)), False
    if callable(shift):
        arr = np.asarray(shift(times), dtype=float)
    else:
        arr = np.asarray(shift, dtype=float)
    arr = arr.reshape(times.size, d)
    return np.ascontiguousarray(arr), True


def _logmeanexp(x):
    x = np.asarray(x, dtype=float)
    top = np.max(x)
    if not np.isfinite(top):
        return -math.inf
    return top + math.log(np.mean(np.exp(x - top)))


def wiener_smallball_mc(
    g, r, eps, N, seed, d=3, h=1e-3, horizon=None, method="split", batches=8, shift=None,
    block=None, adapt=False, record=False, threshold=0.5, keep=0,
):
    """Small-ball probability of Brownian motion for a weighted, truncated sup-norm.

    Estimates ``P_0(|w_t - eta_t| < r eps g(t) for all grid t <= horizon)``.

    Parameters
    ----------
    g : WeightFunction
    r, eps : float
        Ball radius is ``r * eps * g(t)``.
    N : int
        Particles per batch (``method="split"``) or total paths (``"reject"``).
    h : float
        Monitoring step (at times where ``g = g(0)`` when ``adapt``).
    horizon : float, optional
        Defaults to ``eps**-2``.
    method : {"split", "reject"}
        ``"split"`` runs ``batches`` independent fixed-population splitting
        estimators (kill on exit, resample survivors when fewer than
        ``threshold * N`` remain); the estimate is the batch mean, which is
        unbiased. ``"reject"`` is plain acceptance counting with binomial
        errors; acceptance is exactly nested across radii on a shared ``seed``.
    block, adapt :
        Grid construction, see :func:`monitor_grid`.
    record : bool
        For ``"split"``, return surviving trajectories at block ends.
    keep : int
        For ``"reject"``, number of accepted paths to return.
    """
    horizon = eps**-2 if horizon is None else float(horizon)
    if method == "reject":
        n_steps = int(round(horizon / h))
        if abs(n_steps * h - horizon) > 1e-9 * horizon:
            raise ConfigError(f"horizon {horizon} not a multiple of h={h}", "horizon")
        times = (np.arange(n_steps) + 1) * h
        sh, has_shift = _shift_array(shift, times, d)
        radius = r * eps * g(times)
        return _reject(radius, sh if has_shift else None, d, h, n_steps, N, seed, horizon, keep)
    if method != "split":
        raise ConfigError(f"unknown method {method!r}", "method")
    dts, times, ends = monitor_grid(horizon, h, block, g if adapt else None)
    radius = np.ascontiguousarray(r * eps * g(times))
    sh, has_shift = _shift_array(shift, times, d)
    rec_mask = ends if record else np.zeros(dts.size, dtype=bool)
    logs = np.empty(batches)
    hits = 0
    cond, wts = [], []
    n_res = 0
    for b in range(batches):
        s32 = int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, b]).generate_state(1, np.uint32)[0])
        lp, exhausted, nr, snaps, parents, alive = kern.split_killed(
            N, np.zeros(d), dts, radius, sh, has_shift, rec_mask, threshold, s32
        )
        n_res += nr
        logs[b] = -math.inf if exhausted else lp
        idx = np.flatnonzero(alive) if not exhausted else np.zeros(0, np.int64)
        hits += idx.size
        if record and idx.size:
            cond.append(kern.trace_genealogy(snaps, parents, idx.astype(np.int64)))
            wts.append(np.full(idx.size, logs[b] - math.log(idx.size)))
    log_p = _logmeanexp(logs)
    if not np.isfinite(log_p):
        return SmallBallResult(0.0, 0.0, -math.inf, math.inf, 0, N * batches, "split", "resolution exhausted",
                               horizon, h, batch_log_p=logs)
    rel = np.exp(logs - log_p)
    rel_se = float(np.std(rel, ddof=1) / math.sqrt(batches)) if batches > 1 else math.inf
    res = SmallBallResult(
        p=math.exp(log_p), se=math.exp(log_p) * rel_se, log_p=log_p, log_se=rel_se, n_hits=int(hits),
        N=N * batches, method="split", status="ok", horizon=horizon, h=h, batch_log_p=logs,
        low_hits=hits < 50, extra={"resamplings": int(n_res), "steps": int(dts.size)},
    )
    if cond:
        lw = np.concatenate(wts)
        w = np.exp(lw - np.max(lw))
        res.conditioned = np.concatenate(cond)
        res.weights = w / w.sum()
        res.record_dt = horizon / int(ends.sum())
    return res


def _reject(radius, shift, d, h, n_steps, N, seed, horizon, keep):
    hit = np.zeros(N, dtype=bool)
    kept = []
    for lo in range(0, N, CHUNK):
        M = min(CHUNK, N - lo)
        pos = brownian_paths(d, h, n_steps, seed, M, offset=lo)[:, 1:]
        if shift is not None:
            pos = pos - shift
        ok = np.all(np.sum(pos * pos, axis=-1) < radius * radius, axis=1)
        hit[lo : lo + M] = ok
        if keep and len(kept) < keep:
            kept.extend(pos[ok][: keep - len(kept)] + (0 if shift is None else shift))
    n = int(hit.sum())
    p = n / N
    se = math.sqrt(p * (1 - p) / N)
    status = "ok" if n else "resolution exhausted"
    res = SmallBallResult(
        p=p, se=se, log_p=math.log(p) if n else -math.inf, log_se=se / p if n else math.inf, n_hits=n, N=N,
        method="reject", status=status, horizon=horizon, h=h, accepted=np.flatnonzero(hit), low_hits=n < 50,
    )
    if kept:
        res.conditioned = np.concatenate([np.zeros((len(kept), 1, d)), np.array(kept)], axis=1)
        res.weights = np.full(len(kept), 1.0 / len(kept))
        res.record_dt = h
    return res


def cameron_martin_energy(shift, h):
    """Discrete ``int |eta'|^2`` for a shift sampled at ``h, 2h, ...`` (starting from 0)."""
    eta = np.concatenate([np.zeros((1, shift.shape[-1])), np.asarray(shift, dtype=float)])
    return float(np.sum(np.diff(eta, axis=0) ** 2) / h)


def anderson_check(g, r, shifts, N, seed, d=3, h=1e-2, horizon=1.0):
    """Shifted-ball probabilities against the centred one on shared paths.

    For each shift ``eta`` (array ``(n_steps, d)`` on the grid ``h, 2h, ...``
    or a callable of time) the report holds the centred and shifted acceptance
    rates, the SE of their paired difference, the Anderson check
    ``p_eta <= p_0 + 3 se`` and the Cameron-Martin lower bound
    ``exp(-s/2) p_0 <= p_eta + 3 se`` with ``s`` the discrete energy of ``eta``.
    """
    n_steps = int(round(horizon / h))
    times = (np.arange(n_steps) + 1) * h
    radius = r * g(times)
    sh = [_shift_array(s, times, d)[0] for s in shifts]
    inside0 = np.zeros(N, dtype=bool)
    inside = np.zeros((len(sh), N), dtype=bool)
    for lo in range(0, N, CHUNK):
        M = min(CHUNK, N - lo)
        pos = brownian_paths(d, h, n_steps, seed, M, offset=lo)[:, 1:]
        inside0[lo : lo + M] = np.all(np.sum(pos * pos, axis=-1) < radius**2, axis=1)
        for i, s in enumerate(sh):
            diff = pos - s
            inside[i, lo : lo + M] = np.all(np.sum(diff * diff, axis=-1) < radius**2, axis=1)
    p0 = inside0.mean()
    rows = []
    for i, s in enumerate(sh):
        pe = inside[i].mean()
        diff = inside[i].astype(float) - inside0
        se = float(np.std(diff, ddof=1) / math.sqrt(N))
        energy = cameron_martin_energy(s, h)
        cm = math.exp(-energy / 2)
        cm_diff = inside[i].astype(float) - cm * inside0
        cm_se = float(np.std(cm_diff, ddof=1) / math.sqrt(N))
        rows.append({
            "shift_norm": float(weighted_norm(np.concatenate([np.zeros((1, d)), s]), g, horizon,
                                              times=np.arange(n_steps + 1) * h)),
            "p_shift": float(pe), "p_centred": float(p0), "joint_se": se,
            "anderson_holds": bool(pe <= p0 + 3 * se + 1e-15),
            "cm_energy": energy, "cm_lower": cm * p0, "cm_se": cm_se,
            "cm_holds": bool(cm * p0 <= pe + 3 * cm_se + 1e-15),
        })
    return {"N": N, "horizon": horizon, "h": h, "r": r, "p_centred": float(p0), "shifts": rows}
