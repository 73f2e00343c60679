"""Lattice space-time white noise and the mollified path Hamiltonian.

The noise lives on time slabs ``[k dt, (k+1) dt)`` times spatial cells of side
``dx`` centred on ``y_j = -L + j dx``. Each cell increment is
``N(0, dt dx^d)``. A path ``w`` collects

    H = sum_k sum_j phi(w_{t_k} - y_j) dB[k, j]

(left-point rule) and the exact discrete variance

    var = dt dx^d sum_k sum_j phi(w_{t_k} - y_j)^2,

which is what every exponential weight is normalized with.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gamma as gamma_fn

from . import _kernels as kern
from .errors import BoxExitError, ConfigError, NormalizationError, ResourceBudgetError

DEFAULT_BUDGET_BYTES = 2 * 2**30
_TABLE_POINTS = 4097


def sphere_area(d):
    """Surface area of the unit sphere in R^d (2 for d=1)."""
    return 2.0 * math.pi ** (d / 2) / gamma_fn(d / 2)


def _round_up(x, step):
    return math.ceil(x / step - 1e-9) * step


@dataclass(frozen=True)
class LatticeSpec:
    """Space-time lattice: ``K = T/dt`` slabs, grid ``{-L, ..., L}^d`` with spacing ``dx``."""

    d: int
    dt: float
    dx: float
    T: float
    L: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError("must be an integer >= 1", "d")
        for name in ("dt", "dx", "T", "L"):
            if not (getattr(self, name) > 0 and math.isfinite(getattr(self, name))):
                raise ConfigError("must be positive and finite", name)
        K = round(self.T / self.dt)
        if K < 1 or abs(K * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError(f"T={self.T} is not an integer multiple of dt={self.dt}", "T")
        n = round(2 * self.L / self.dx)
        if abs(n * self.dx - 2 * self.L) > 1e-9 * self.L:
            raise ConfigError(f"2L={2 * self.L} is not an integer multiple of dx={self.dx}", "L")

    @property
    def K(self):
        return round(self.T / self.dt)

    @property
    def n(self):
        """Grid points per axis."""
        return round(2 * self.L / self.dx) + 1

    @property
    def cells(self):
        return self.n**self.d

    @property
    def cell_var(self):
        return self.dt * self.dx**self.d

    @property
    def times(self):
        return np.arange(self.K + 1) * self.dt

    def with_horizon(self, T):
        """Same resolution and box, different horizon (must be a multiple of dt)."""
        return replace(self, T=float(T))

    @classmethod
    def default(cls, d, T, rho=1.0, dx=None, dt=None, box_sigmas=5.0, L=None):
        """Fine lattice: ``dx = rho/8``, ``dt <= dx^2/d``, box covering ``box_sigmas`` path spreads."""
        dx = rho / 8 if dx is None else dx
        if dt is None:
            K = math.ceil(T / (dx * dx / d) - 1e-9)
            dt = T / K
        half = max(box_sigmas * math.sqrt(d * T), 0.0 if L is None else L - rho) + rho
        return cls(d=d, dt=dt, dx=dx, T=T, L=_round_up(half, dx))

    @classmethod
    def desk(cls, d, T, rho=1.0, box_sigmas=5.0):
        """Coarse lattice used for the long Monte Carlo runs: ``dx = rho/2``, ``dt = 0.05``."""
        return cls.default(d, T, rho=rho, dx=rho / 2, dt=0.05, box_sigmas=box_sigmas)


@dataclass(frozen=True, eq=False)
class Mollifier:
    """Normalized radial mollifier with support radius ``rho``.

    ``phi(x) = cnorm * f((|x|/rho)^2)`` where ``f`` is either the power bump
    ``exp(-1/(1 - u^power))`` (``power=1`` is the standard bump) or the linear
    interpolant of a tabulated profile in ``s = |x|/rho``.
    """

    d: int
    rho: float
    cnorm: float
    selfconv0: float
    code: int
    power: int
    table: np.ndarray
    conv_r: np.ndarray
    conv_v: np.ndarray
    name: str = "bump"
    _spline: object = field(default=None, repr=False)

    def radial(self, r):
        """phi as a function of the radius."""
        r = np.asarray(r, dtype=float)
        s2 = (r / self.rho) ** 2
        return self.cnorm * kern.profile_values(np.atleast_1d(s2), self.code, self.power, self.table).reshape(r.shape)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.radial(np.sqrt(np.sum(x * x, axis=-1)))

    def conv(self, r):
        """(phi * phi) at radius ``r`` (tabulated, exact zero beyond 2 rho)."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.where(r < 2 * self.rho, self._spline(np.minimum(r, 2 * self.rho)), 0.0)
        return np.clip(out, 0.0, self.selfconv0)

    def kernel_args(self):
        return self.rho, self.code, self.power, self.table, self.cnorm

    def same_profile(self, other):
        return (
            self.d == other.d
            and self.rho == other.rho
            and self.code == other.code
            and self.power == other.power
            and self.cnorm == other.cnorm
            and np.array_equal(self.table, other.table)
        )


@lru_cache(maxsize=16)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


def _gl(n, a, b):
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _profile_code(profile):
    if profile is None or profile == "bump":
        return kern.PROFILE_POWER, 1, np.zeros(1), "bump"
    if profile == "plateau":
        return kern.PROFILE_POWER, 4, np.zeros(1), "plateau"
    if isinstance(profile, str):
        raise ConfigError(f"unknown profile {profile!r}", "profile")
    s = np.linspace(0.0, 1.0, _TABLE_POINTS)
    vals = np.asarray(profile(np.minimum(s, 1.0 - 1e-15)), dtype=float)
    if vals.shape != s.shape:
        raise NormalizationError("profile must map an array of radii to an array of the same shape")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise NormalizationError("profile must be finite and nonnegative on [0, rho)")
    return kern.PROFILE_TABLE, 1, vals, getattr(profile, "__name__", "custom")


def _conv_at(a, rho, d, f, n):
    """Unnormalized (f*f)(a) for the radial profile ``f(r)``; ``n`` nodes per direction."""
    if a >= 2 * rho:
        return 0.0
    total = 0.0
    for lo, hi in ((a - rho, a / 2), (a / 2, rho)):
        if hi <= lo:
            continue
        u, wu = _gl(n, lo, hi)
        if d == 1:
            total += np.sum(wu * f(np.abs(u)) * f(np.abs(u - a)))
            continue
        vmax = np.sqrt(np.maximum(np.minimum(rho * rho - u * u, rho * rho - (u - a) ** 2), 0.0))
        x, wx = _leggauss(n)
        v = 0.5 * vmax[:, None] * (x[None, :] + 1.0)
        wv = 0.5 * vmax[:, None] * wx[None, :]
        vals = f(np.sqrt(u[:, None] ** 2 + v * v)) * f(np.sqrt((u[:, None] - a) ** 2 + v * v))
        inner = np.sum(wv * vals * v ** (d - 2), axis=1)
        total += np.sum(wu * inner)
    return total if d == 1 else total * sphere_area(d - 1)


def build_mollifier(d=3, rho=1.0, profile="bump", quadrature_resolution=200, table_points=257):
    """Normalize a radial profile and tabulate its self-convolution.

    Parameters
    ----------
    d : int
        Spatial dimension.
    rho : float
        Support radius.
    profile : {"bump", "plateau"} or callable
        Callables map ``s = |x|/rho`` in ``[0, 1)`` to nonnegative values.
    quadrature_resolution : int
        Gauss-Legendre nodes per direction for all radial integrals.
    table_points : int
        Radii on ``[0, 2 rho]`` at which ``phi * phi`` is tabulated.
    """
    if not rho > 0:
        raise ConfigError("support radius must be positive", "rho")
    if int(d) != d or d < 1:
        raise ConfigError("must be an integer >= 1", "d")
    d = int(d)
    code, power, table, name = _profile_code(profile)

    def f(r):
        r = np.asarray(r, dtype=float)
        out = kern.profile_values(np.atleast_1d((r / rho) ** 2).ravel(), code, power, table)
        return out.reshape(r.shape)

    area = sphere_area(d)
    r, w = _gl(quadrature_resolution, 0.0, rho)
    mass = area * np.sum(w * f(r) * r ** (d - 1))
    if not (np.isfinite(mass) and mass > 0):
        raise NormalizationError(f"profile integral is {mass!r}; cannot normalize")
    cnorm = 1.0 / mass
    selfconv0 = cnorm**2 * area * np.sum(w * f(r) ** 2 * r ** (d - 1))
    if not selfconv0 > 0:
        raise NormalizationError("profile has zero L2 norm")

    conv_r = np.linspace(0.0, 2 * rho, table_points)
    conv_v = np.array([cnorm**2 * _conv_at(a, rho, d, f, quadrature_resolution) for a in conv_r])
    conv_v[0] = selfconv0
    conv_v[-1] = 0.0
    spline = CubicSpline(conv_r, conv_v, bc_type=((1, 0.0), (1, 0.0)))
    return Mollifier(
        d=d, rho=float(rho), cnorm=float(cnorm), selfconv0=float(selfconv0), code=code, power=power,
        table=table, conv_r=conv_r, conv_v=conv_v, name=name, _spline=spline,
    )


def mollifier_inner(phi, psi, quadrature_resolution=400):
    """``int phi psi dx`` for two radial mollifiers in the same dimension."""
    if phi.d != psi.d:
        raise ConfigError("mollifiers live in different dimensions", "d")
    top = min(phi.rho, psi.rho)
    r, w = _gl(quadrature_resolution, 0.0, top)
    return float(sphere_area(phi.d) * np.sum(w * phi.radial(r) * psi.radial(r) * r ** (phi.d - 1)))


def mollifier_overlap(phi, psi, tol=1e-10, quadrature_resolution=400):
    """Overlap ``int phi psi`` and whether the two smoothed noises can be told apart.

    Two Hamiltonians built from the same noise with ``phi`` and ``psi`` differ by
    a process whose quadratic variation grows at rate
    ``int phi^2 + int psi^2 - 2 int phi psi = ||phi - psi||^2``; the mollifiers
    are distinguishable when that rate exceeds ``tol``.

    Returns
    -------
    overlap : float
    distinguishable : bool
    """
    a = mollifier_inner(phi, phi, quadrature_resolution)
    b = mollifier_inner(psi, psi, quadrature_resolution)
    ab = mollifier_inner(phi, psi, quadrature_resolution)
    rate = a + b - 2 * ab
    return ab, bool(rate > tol)


def quadratic_variation_rate(phi, psi, quadrature_resolution=400):
    a = mollifier_inner(phi, phi, quadrature_resolution)
    b = mollifier_inner(psi, psi, quadrature_resolution)
    return a + b - 2 * mollifier_inner(phi, psi, quadrature_resolution)


@dataclass(frozen=True, eq=False)
class DriftOverlay:
    """Deterministic drift ``coef * phi(pos_k - y) dt dx^d`` on slabs ``[k_start, k_end)``.

    ``positions[k]`` is the tilting point for absolute slab ``k``.
    """

    positions: np.ndarray
    coef: float
    mollifier: Mollifier
    k_start: int = 0
    k_end: int = None

    def span(self):
        k_end = len(self.positions) if self.k_end is None else self.k_end
        return int(self.k_start), int(min(k_end, len(self.positions)))


@dataclass(frozen=True, eq=False)
class WhiteNoiseRealization:
    """A seeded lattice noise.

    Cell values are generated on demand from ``(seed, k, j)``, so two objects
    with equal fields are the same realization. Slabs ``k >= k_switch`` use
    ``seed2`` instead, which lets later slabs be replaced while earlier ones
    stay bit-identical. ``scale`` multiplies the random part; overlays add
    deterministic drift on top.
    """

    spec: LatticeSpec
    seed: int
    seed2: int = None
    k_switch: int = None
    scale: float = 1.0
    overlays: tuple = ()
    dense: np.ndarray = field(default=None, repr=False)

    def kernel_seeds(self):
        s1 = np.uint64(int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        if self.seed2 is None or self.k_switch is None:
            return s1, s1, np.int64(2**62)
        return s1, np.uint64(int(self.seed2) & 0xFFFFFFFFFFFFFFFF), np.int64(self.k_switch)

    def with_overlay(self, overlay):
        return replace(self, overlays=self.overlays + (overlay,), dense=None)

    def scaled(self, c):
        return replace(self, scale=self.scale * c, dense=None)

    def reseeded_after(self, k_switch, seed2):
        """Same noise on slabs ``< k_switch``, fresh noise from ``seed2`` afterwards."""
        return replace(self, k_switch=int(k_switch), seed2=int(seed2), dense=None)

    def normals(self, k0, k1, lo, hi):
        """Base standard normals on slabs ``[k0, k1)`` and per-axis index box ``[lo, hi]``."""
        lo = np.asarray(lo, dtype=np.int64)
        shape = np.asarray(hi, dtype=np.int64) - lo + 1
        out = np.empty((k1 - k0, int(np.prod(shape))))
        s1, s2, ks = self.kernel_seeds()
        kern.standard_normal_block(s1, s2, ks, k0, k1, lo, shape, self.spec.n, out)
        return out.reshape((k1 - k0, *shape))

    def block(self, k0, k1, lo, hi):
        """Increments ``dB`` (random part plus overlays) on a slab/cell block."""
        spec = self.spec
        out = self.normals(k0, k1, lo, hi) * (self.scale * math.sqrt(spec.cell_var))
        if not self.overlays:
            return out
        axes = [-spec.L + np.arange(l, h + 1) * spec.dx for l, h in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        for ov in self.overlays:
            a, b = ov.span()
            for k in range(max(k0, a), min(k1, b)):
                out[k - k0] += ov.coef * ov.mollifier(grid - ov.positions[k]) * spec.cell_var
        return out

    def increments(self, budget_bytes=DEFAULT_BUDGET_BYTES):
        """Full ``(K, n, ..., n)`` increment array, refusing if over budget."""
        if self.dense is not None:
            return self.dense
        spec = self.spec
        need = spec.K * spec.cells * 8
        if need > budget_bytes:
            raise ResourceBudgetError(need, budget_bytes, "dense noise array")
        return self.block(0, spec.K, np.zeros(spec.d, np.int64), np.full(spec.d, spec.n - 1, np.int64))


def sample_noise(spec, seed, materialize=False, budget_bytes=DEFAULT_BUDGET_BYTES):
    """Noise realization for ``(spec, seed)``.

    Cells are produced lazily; with ``materialize=True`` the full array is
    generated up front, subject to ``budget_bytes``.
    """
    noise = WhiteNoiseRealization(spec=spec, seed=int(seed))
    if materialize:
        noise = replace(noise, dense=noise.increments(budget_bytes))
    return noise


def check_box(spec, mollifier, positions, k0=0):
    """Raise :class:`BoxExitError` if any phi-ball around a path point leaves the grid."""
    pos = np.asarray(positions)
    margin = spec.L - mollifier.rho
    bad = np.abs(pos) > margin + 1e-12
    if not bad.any():
        return
    flat = np.argwhere(bad.any(axis=-1))
    m, i = flat[np.lexsort((flat[:, 0], flat[:, 1]))][0]
    x = pos[m, i]
    need = float(np.max(np.abs(pos))) + mollifier.rho
    raise BoxExitError(k0 + int(i), (k0 + int(i)) * spec.dt, x, need, spec.L)


def _overlay_args(noise, mollifier):
    spec = noise.spec
    ovs = noise.overlays
    if not ovs:
        return np.zeros((0, 1, spec.d)), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64)
    K = max(len(o.positions) for o in ovs)
    ov_pos = np.zeros((len(ovs), K, spec.d))
    coef = np.empty(len(ovs))
    k0 = np.empty(len(ovs), np.int64)
    k1 = np.empty(len(ovs), np.int64)
    for i, o in enumerate(ovs):
        if not o.mollifier.same_profile(mollifier):
            raise ConfigError("overlay mollifier differs from the evaluating mollifier", "overlay")
        a, b = o.span()
        check_box(spec, mollifier, o.positions[None, a:b], a)
        ov_pos[i, : len(o.positions)] = o.positions
        coef[i], k0[i], k1[i] = o.coef, a, b
    return ov_pos, coef, k0, k1


def hamiltonians(noise, mollifier, positions, checkpoints=None, k0=0):
    """H and var for a batch of paths at several horizons.

    Parameters
    ----------
    positions : array (M, K', d)
        ``positions[m, i]`` is the point used on slab ``k0 + i``.
    checkpoints : sequence of int, optional
        Slab counts (1..K') at which to report cumulative sums. Default ``[K']``.

    Returns
    -------
    H, var : arrays (M, len(checkpoints))
    """
    spec = noise.spec
    pos = np.ascontiguousarray(positions, dtype=float)
    if pos.ndim == 2:
        pos = pos[None]
    M, K, d = pos.shape
    if d != spec.d or d != mollifier.d:
        raise ConfigError(f"path dimension {d} does not match lattice/mollifier", "d")
    if k0 + K > spec.K:
        raise ConfigError(f"path covers slabs up to {k0 + K}, lattice has {spec.K}", "T")
    check_box(spec, mollifier, pos, k0)
    cps = np.array([K] if checkpoints is None else checkpoints, dtype=np.int64)
    if cps.size and (np.any(np.diff(cps) < 0) or cps[0] < 1 or cps[-1] > K):
        raise ConfigError("checkpoints must be sorted slab counts in [1, K]", "checkpoints")
    out_h = np.zeros((M, cps.size))
    out_v = np.zeros((M, cps.size))
    if M == 0:
        return out_h, out_v
    s1, s2, ks = noise.kernel_seeds()
    ov_pos, coef, ok0, ok1 = _overlay_args(noise, mollifier)
    rho, code, power, table, cnorm = mollifier.kernel_args()
    kern.field_sums(
        pos, np.int64(k0), s1, s2, ks, float(noise.scale), spec.L, spec.dx, np.int64(spec.n), rho, code,
        np.int64(power), table, cnorm, spec.cell_var, ov_pos, coef, ok0, ok1, cps, out_h, out_v,
    )
    return out_h, out_v


def _slab_points(path, K):
    pos = path.positions if hasattr(path, "positions") else np.asarray(path)
    if len(pos) < K:
        raise ConfigError(f"path has {len(pos)} points, need {K}", "T")
    return np.asarray(pos[:K], dtype=float)


def hamiltonian(noise, mollifier, path):
    """``(H, var)`` for one path over the full lattice horizon."""
    K = noise.spec.K
    h, v = hamiltonians(noise, mollifier, _slab_points(path, K)[None])
    return float(h[0, 0]), float(v[0, 0])


def field_increment(noise, mollifier, k, x):
    """One slab's contribution ``sum_j phi(x - y_j) dB[k, j]``."""
    h, _ = hamiltonians(noise, mollifier, np.asarray(x, dtype=float).reshape(1, 1, -1), k0=int(k))
    return float(h[0, 0])


def discrete_variance(spec, mollifier, x):
    """``dt dx^d sum_j phi(x - y_j)^2`` at a single point."""
    _, v = hamiltonians(
        WhiteNoiseRealization(spec=spec, seed=0, scale=0.0), mollifier,
        np.asarray(x, dtype=float).reshape(1, 1, -1),
    )
    return float(v[0, 0])


def discrete_overlaps(spec, mollifier, pa, pb, checkpoints=None):
    """``dt dx^d sum_k sum_j phi(a_k - y_j) phi(b_k - y_j)`` per path pair, cumulative at checkpoints."""
    pa = np.ascontiguousarray(pa, dtype=float)
    pb = np.ascontiguousarray(pb, dtype=float)
    if pa.ndim == 2:
        pa, pb = pa[None], pb[None]
    P, K, _ = pa.shape
    check_box(spec, mollifier, pa)
    check_box(spec, mollifier, pb)
    cps = np.array([K] if checkpoints is None else checkpoints, dtype=np.int64)
    out = np.zeros((P, cps.size))
    rho, code, power, table, cnorm = mollifier.kernel_args()
    kern.pair_overlaps(pa, pb, spec.L, spec.dx, rho, code, np.int64(power), table, cnorm, spec.cell_var, cps, out)
    return out


def shifted_noise(noise, mollifier, path, gamma, k_end=None, k_start=0):
    """Noise with drift ``gamma * phi(w_{t_k} - y_j) dt dx^d`` added along ``path``.

    The original realization is unchanged; the drift is an overlay.
    """
    K = noise.spec.K
    pos = _slab_points(path, K) if k_end is None else _slab_points(path, min(K, k_end))
    check_box(noise.spec, mollifier, pos[None])
    ov = DriftOverlay(positions=pos, coef=float(gamma), mollifier=mollifier, k_start=k_start, k_end=k_end)
    return noise.with_overlay(ov)


def covariance_check(spec, mollifier, pa, pb, seeds):
    """Empirical ``Cov(H(a), H(b))`` over noise realizations against the discrete overlap sum.

    ``seeds`` lists one noise seed per replica. The SE is that of the mean of
    centred products.
    """
    pair = np.ascontiguousarray(np.stack([pa, pb])[:, : spec.K], dtype=float)
    seeds = list(seeds)
    R = len(seeds)
    H = np.empty((R, 2))
    for r, s in enumerate(seeds):
        h, _ = hamiltonians(sample_noise(spec, s), mollifier, pair)
        H[r] = h[:, 0]
    prod = (H[:, 0] - H[:, 0].mean()) * (H[:, 1] - H[:, 1].mean())
    cov = float(prod.sum() / (R - 1))
    se = float(prod.std(ddof=1) / math.sqrt(R))
    expected = float(discrete_overlaps(spec, mollifier, pair[:1], pair[1:])[0, 0])
    return {"cov": cov, "se": se, "expected": expected, "z": (cov - expected) / se if se > 0 else 0.0, "R": R}
