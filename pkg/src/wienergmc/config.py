"""Experiment configuration: sectioned ``key = value`` files mapped onto dataclasses."""

import configparser
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
import io
import math

from .errors import ConfigError
from .noise import LatticeSpec, build_mollifier
from .paths import WeightFunction


def _floats(text):
    return tuple(float(x) for x in str(text).replace(",", " ").split())


@dataclass(frozen=True)
class LatticeParams:
    d: int = 3
    dx: float = 0.5
    dt: float = 0.05
    box_sigmas: float = 5.0


@dataclass(frozen=True)
class MollifierParams:
    rho: float = 1.0
    profile: str = "bump"
    quadrature_resolution: int = 200


@dataclass(frozen=True)
class RunParams:
    gamma: float = 0.3
    T: float = 1.0
    replicas: int = 200
    paths: int = 500
    seed: int = 0
    threads: int = 1
    pairs: int = 1000
    budget_mb: float = 2048.0


@dataclass(frozen=True)
class WeightParams:
    a: float = 1.0
    beta: float = 1.0


@dataclass(frozen=True)
class GridParams:
    T_grid: tuple = (1.0, 2.0, 4.0)
    gammas: tuple = ()


@dataclass(frozen=True)
class MomentParams:
    p: tuple = (1.0, 2.0, -0.5)
    p_scan: tuple = (1.25, 1.5, 2.0)
    q_scan: tuple = (0.25, 0.5, 1.0)
    target_rel_se: float = 0.05
    max_paths: int = 4000
    floor: float = 1e-12
    bootstrap: int = 1000
    stability_tol: float = 0.2
    u: float = 1.5
    eps: float = 0.2


@dataclass(frozen=True)
class SmallBallParams:
    r: float = 1.0
    eps: tuple = (0.25, 0.3, 0.35, 0.4)
    c: tuple = (1.0, 2.0)
    particles: int = 1000
    batches: int = 4
    h: float = 2.5e-4
    n_conditioned: int = 256
    noise_replicas: int = 24
    sup_horizon: float = 1.0


@dataclass(frozen=True)
class BoundsParams:
    p: float = 2.0
    q: float = 1.0
    form: str = "holder"
    optimize: bool = False
    delta: tuple = (1.0, 0.5, 0.1)


@dataclass(frozen=True)
class KhasminskiiParams:
    T_cutoff: float = 16.0
    dt: float = 0.01
    n_paths: int = 2000
    n_starts: int = 9


@dataclass(frozen=True)
class OutputParams:
    out_dir: str = "runs"


SECTIONS = {
    "lattice": LatticeParams,
    "mollifier": MollifierParams,
    "run": RunParams,
    "weight": WeightParams,
    "grid": GridParams,
    "moments": MomentParams,
    "smallball": SmallBallParams,
    "bounds": BoundsParams,
    "khasminskii": KhasminskiiParams,
    "output": OutputParams,
}


def _parse(kind, text, name):
    try:
        if kind is tuple:
            return _floats(text)
        if kind is bool:
            low = str(text).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            v = float(text)
            if v != int(v):
                raise ValueError(text)
            return int(v)
        return kind(text)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {text!r} as {kind.__name__}", name) from None


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _assign(parts, section, name, text):
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]", section)
    types = {f.name: f.type for f in fields(SECTIONS[section])}
    if name not in types:
        raise ConfigError(f"unknown key in [{section}]", f"{section}.{name}")
    value = _parse(types[name], text, f"{section}.{name}")
    parts[section] = replace(parts[section], **{name: value})


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of an experiment, grouped by section."""

    lattice: LatticeParams = field(default_factory=LatticeParams)
    mollifier: MollifierParams = field(default_factory=MollifierParams)
    run: RunParams = field(default_factory=RunParams)
    weight: WeightParams = field(default_factory=WeightParams)
    grid: GridParams = field(default_factory=GridParams)
    moments: MomentParams = field(default_factory=MomentParams)
    smallball: SmallBallParams = field(default_factory=SmallBallParams)
    bounds: BoundsParams = field(default_factory=BoundsParams)
    khasminskii: KhasminskiiParams = field(default_factory=KhasminskiiParams)
    output: OutputParams = field(default_factory=OutputParams)

    def __post_init__(self):
        self.validate()

    def validate(self):
        lat, run = self.lattice, self.run
        if lat.d < 1:
            raise ConfigError("must be >= 1", "lattice.d")
        for name in ("dx", "dt", "box_sigmas"):
            if not getattr(lat, name) > 0:
                raise ConfigError("must be positive", f"lattice.{name}")
        if not self.mollifier.rho > 0:
            raise ConfigError("must be positive", "mollifier.rho")
        if self.mollifier.profile not in ("bump", "plateau"):
            raise ConfigError("must be 'bump' or 'plateau'", "mollifier.profile")
        if not (run.gamma >= 0 and math.isfinite(run.gamma)):
            raise ConfigError("must be >= 0", "run.gamma")
        if any(g < 0 for g in self.grid.gammas):
            raise ConfigError("must be >= 0", "grid.gammas")
        for name in ("T", "replicas", "paths", "pairs", "threads", "budget_mb"):
            if not getattr(run, name) > 0:
                raise ConfigError("must be positive", f"run.{name}")
        ts = self.grid.T_grid
        if not ts or any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] <= 0:
            raise ConfigError("must be a positive increasing list", "grid.T_grid")
        for T in ts + (run.T,):
            if abs(round(T / lat.dt) * lat.dt - T) > 1e-9 * T:
                raise ConfigError(f"horizon {T} is not a multiple of dt={lat.dt}", "lattice.dt")
        if self.weight.a <= 0:
            raise ConfigError("must be positive", "weight.a")
        if self.moments.u <= 1:
            raise ConfigError("must exceed 1", "moments.u")
        if self.bounds.form not in ("holder", "matching"):
            raise ConfigError("must be 'holder' or 'matching'", "bounds.form")

    @property
    def gammas(self):
        return self.grid.gammas if self.grid.gammas else (self.run.gamma,)

    @cached_property
    def phi(self):
        m = self.mollifier
        return build_mollifier(self.lattice.d, m.rho, m.profile, m.quadrature_resolution)

    def spec(self, T, box_T=None):
        """Lattice with horizon ``T`` and a box sized for horizon ``box_T`` (default ``T``)."""
        lat = self.lattice
        big = LatticeSpec.default(
            lat.d, T if box_T is None else max(T, box_T), rho=self.mollifier.rho, dx=lat.dx, dt=lat.dt,
            box_sigmas=lat.box_sigmas,
        )
        return big.with_horizon(T)

    def weight_function(self):
        return WeightFunction(self.weight.a, self.weight.beta)

    def with_overrides(self, pairs):
        """Apply ``section.key=value`` strings; validation runs once at the end."""
        parts = {s: getattr(self, s) for s in SECTIONS}
        for item in pairs:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value", "override")
            key, value = item.split("=", 1)
            if "." not in key:
                raise ConfigError(f"override key {key!r} needs a section prefix", "override")
            section, name = key.strip().split(".", 1)
            _assign(parts, section, name, value.strip())
        return ExperimentConfig(**parts)

    @classmethod
    def from_ini(cls, text):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc).splitlines()[0], "file") from None
        parts = {s: c() for s, c in SECTIONS.items()}
        for section in parser.sections():
            for name, value in parser.items(section):
                _assign(parts, section, name, value)
        return cls(**parts)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_ini(fh.read())

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section in SECTIONS:
            obj = getattr(self, section)
            parser[section] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def as_dict(self):
        return {s: {f.name: getattr(getattr(self, s), f.name) for f in fields(getattr(self, s))} for s in SECTIONS}
