"""Small-ball decay of the normalized polymer measure and the two-sided constants."""

from dataclasses import asdict, dataclass, field
import math

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigError, DivergentIntegralError, ResolutionExhausted
from .noise import hamiltonians, sample_noise
from .paths import bessel_root, sample_paths, wiener_smallball_mc
from .polymer import log_weights
from .rng import stream_rng, stream_seed


def zero_lambda(_gamma):
    return 0.0


@dataclass(frozen=True)
class DecayBounds:
    C1: float
    C2: float
    gamma: float
    r: float
    d: int
    p: float
    q: float
    a: float
    beta: float
    selfconv0: float
    form: str
    lambda_C1: float = 0.0
    lambda_C2: float = 0.0
    bessel: float = 0.0
    inv_sq_integral: float = 0.0

    def as_dict(self):
        return asdict(self)


def _c1(B, gamma, V0, p, form, lam):
    if form == "holder":
        head = (p - 1) / (4 * p) * B
    elif form == "matching":
        head = B / (2 * p)
    else:
        raise ConfigError(f"unknown form {form!r}", "form")
    return head - (p + 1) / (2 * (p - 1)) * gamma**2 * V0 - (p - 1) / (2 * p) * lam(2 * p * gamma / (p - 1))


def _c2(B, gamma, V0, q, lam):
    return (q + 1) / q * (B / 2 + gamma**2 / 2 * V0 * (q * q + 3 * q + 1) / (q + 1) ** 2 + lam(gamma * q / (q + 1)))


def bounds_C1_C2(gamma, r, g, d, p, q, selfconv0, lambda_provider=None, form="holder", optimize=False,
                 p_max=50.0, q_min=0.01, q_max=1e4):
    """Upper and lower decay constants.

    With ``B = j^2 int g^-2 / r^2`` and ``V0 = (phi*phi)(0)``::

        C1 = (p-1)/(4p) B - (p+1)/(2(p-1)) gamma^2 V0 - (p-1)/(2p) lam(2p gamma/(p-1))
        C2 = (q+1)/q (B/2 + gamma^2 V0 (q^2+3q+1)/(2 (q+1)^2) + lam(gamma q/(q+1)))

    ``form="matching"`` replaces the first term of ``C1`` by ``B/(2p)``, the
    sharper upper bound that makes ``C2 - C1`` vanish as ``gamma -> 0`` and
    ``p, q -> inf``. ``lam`` defaults to zero. With ``optimize``, ``p`` is
    chosen in ``(1, p_max]`` to maximize ``C1`` and ``q`` in ``[q_min, q_max]``
    to minimize ``C2`` (bounded scalar search); the given ``p, q`` are then ignored.
    """
    if not (p > 1 and q > 0 and r > 0):
        raise ConfigError("need p > 1, q > 0, r > 0", "bounds")
    lam = zero_lambda if lambda_provider is None else lambda_provider
    j = bessel_root(d)
    I = g.inv_sq_integral()
    if not math.isfinite(I):
        raise DivergentIntegralError("int g^-2 is infinite")
    B = j * j * I / (r * r)
    if optimize:
        p = float(minimize_scalar(lambda x: -_c1(B, gamma, selfconv0, x, form, lam), bounds=(1 + 1e-9, p_max),
                                  method="bounded", options={"xatol": 1e-10}).x)
        q = float(minimize_scalar(lambda x: _c2(B, gamma, selfconv0, x, lam), bounds=(q_min, q_max),
                                  method="bounded", options={"xatol": 1e-10}).x)
    return DecayBounds(
        C1=_c1(B, gamma, selfconv0, p, form, lam), C2=_c2(B, gamma, selfconv0, q, lam), gamma=gamma, r=r, d=d,
        p=p, q=q, a=g.a, beta=g.beta, selfconv0=selfconv0, form=form,
        lambda_C1=lam(2 * p * gamma / (p - 1)), lambda_C2=lam(gamma * q / (q + 1)), bessel=j, inv_sq_integral=I,
    )


def gamma_delta(delta, r, g, d, selfconv0):
    """Witness ``(gamma, p, q)`` with ``C2 - C1 < delta`` (matching form, zero free energy).

    ``q = 3B/delta`` and ``1 - 1/p = delta/(3B)`` make the Bessel part of the gap
    ``delta/3``; ``gamma`` is then 0.99 of the largest value keeping the
    disorder part below ``delta/2``.
    """
    if not delta > 0:
        raise ConfigError("must be positive", "delta")
    j = bessel_root(d)
    B = j * j * g.inv_sq_integral() / (r * r)
    x = min(delta / (3 * B), 0.5)
    q = 3 * B / delta
    p = 1.0 / (1.0 - x)
    S = (p + 1) / (p - 1) + (q * q + 3 * q + 1) / (q * (q + 1))
    gam = 0.99 * math.sqrt(delta / (selfconv0 * S))
    b = bounds_C1_C2(gam, r, g, d, p, q, selfconv0, form="matching")
    gap = b.C2 - b.C1
    return {"gamma": gam, "p": p, "q": q, "C1": b.C1, "C2": b.C2, "gap": gap, "verified": bool(gap < delta),
            "delta": delta}


def lattice_horizon(c, eps, dt):
    """``c / eps^2`` rounded to the nearest multiple of ``dt`` (at least one slab)."""
    return dt * max(1, round(c / eps**2 / dt))


def gmc_smallball(cfg, gamma, r, eps, g, c=1.0, shift=None, seed_index=0, noise_replicas=None,
                  n_conditioned=None, particles=None, batches=None, h=None):
    """Normalized polymer mass of ``{|w_t - eta_t| < r eps g(t), t <= T}`` with ``T ~ c/eps^2``.

    Per noise replica the estimate is
    ``P0(A) * sum_i w_i W_i / Z``: ``P0(A)`` and the conditioned paths
    (weights ``w_i``) come from one splitting run, ``W_i`` are their polymer
    weights and ``Z`` is the total mass, all against the same noise.
    Results are averaged over replicas; the mean of logs is reported too.
    """
    sb = cfg.smallball
    R = sb.noise_replicas if noise_replicas is None else noise_replicas
    n_cond = sb.n_conditioned if n_conditioned is None else n_conditioned
    T = lattice_horizon(c, eps, cfg.lattice.dt)
    spec = cfg.spec(T)
    wres = wiener_smallball_mc(
        g, r, eps, sb.particles if particles is None else particles,
        stream_seed(cfg.run.seed, "smallball", seed_index), d=spec.d, h=sb.h if h is None else h, horizon=T,
        batches=sb.batches if batches is None else batches, shift=shift, block=spec.dt, adapt=True, record=True,
    )
    if wres.exhausted or wres.conditioned is None:
        raise ResolutionExhausted(f"no path survived the ball of radius {r * eps} (eps={eps}, T={T})")
    rng = stream_rng(cfg.run.seed, "resample", seed_index)
    pick = rng.choice(len(wres.weights), size=n_cond, replace=True, p=wres.weights)
    cond = np.ascontiguousarray(wres.conditioned[pick][:, : spec.K])
    factors = np.empty(R)
    Zs = np.empty(R)
    for rr in range(R):
        noise = sample_noise(spec, stream_seed(cfg.run.seed, "noise", 10_000 + rr))
        H, V = hamiltonians(noise, cfg.phi, cond)
        num = np.exp(log_weights(H[:, 0], V[:, 0], gamma)).mean()
        free = sample_paths(spec, stream_seed(cfg.run.seed, "paths", 10_000 + rr), cfg.run.paths)
        H0, V0 = hamiltonians(noise, cfg.phi, free[:, : spec.K])
        Zs[rr] = np.exp(log_weights(H0[:, 0], V0[:, 0], gamma)).mean()
        factors[rr] = num / Zs[rr]
    f_mean = float(factors.mean())
    f_se = float(factors.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    log_est = wres.log_p + math.log(f_mean)
    log_se = math.hypot(wres.log_se, f_se / f_mean)
    quenched = np.log(factors)
    return {
        "eps": eps, "c": c, "T": T, "gamma": gamma, "r": r,
        "log_p0": wres.log_p, "log_p0_se": wres.log_se, "factor": f_mean, "factor_se": f_se,
        "estimate": math.exp(log_est), "log_estimate": log_est, "log_se": log_se,
        "quenched_log_estimate": wres.log_p + float(quenched.mean()),
        "quenched_log_se": math.hypot(wres.log_se, float(quenched.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0),
        "scaled_log": eps**2 * log_est, "n_conditioned": n_cond, "survivors": wres.n_hits,
        "noise_replicas": R, "status": "ok", "regime": "pre-asymptotic",
    }


def exponent_fit(series, log_values=False):
    """Least squares ``log(estimate) = -slope / eps^2 + intercept``.

    ``series`` holds ``(eps, estimate)`` pairs (or ``(eps, log estimate)`` with
    ``log_values``). Returns ``(slope, intercept, r2)``.
    """
    eps = np.array([float(e) for e, _ in series])
    y = np.array([float(v) for _, v in series])
    if not log_values:
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(y)
    ok = np.isfinite(y) & (eps > 0)
    if ok.sum() < 3:
        raise ConfigError(f"need at least 3 usable points, got {int(ok.sum())}", "series")
    x = -1.0 / eps[ok] ** 2
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y[ok], rcond=None)
    resid = y[ok] - A @ coef
    ss_tot = np.sum((y[ok] - y[ok].mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


def sandwich_check(slope, bounds, slack=0.5):
    lo = (1 - slack) * bounds.C1
    hi = (1 + slack) * bounds.C2
    return {"slope": slope, "C1": bounds.C1, "C2": bounds.C2, "lower": lo, "upper": hi,
            "inside": bool(lo <= slope <= hi), "slack": slack, "regime": "pre-asymptotic"}
