"""Run configuration: ``key = value`` sections parsed into dataclasses.

Unknown sections or keys are rejected with the offending line number, and
:func:`serialize` writes a text that parses back to an equal config.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
import re
from dataclasses import dataclass, field, fields

import numpy as np

from . import constitutive as cst
from .errors import ConfigError
from .fields import Grid


@dataclass
class ProblemConfig:
    d: int = 2
    n: int = 32
    T: float = 0.1
    n_t: int = 21
    p: float = 2.0
    q: float = 4.0


@dataclass
class ModelConfig:
    family: str = "newtonian"
    mu0: float = 1.0
    lam0: float = 1.0
    exponent: float = 1.8
    mu_coeffs: tuple = (1.0, 1.0)
    lam_coeffs: tuple = (1.0,)
    mu_expr: str = "1"
    lam_expr: str = "1"
    s_max: float = math.inf
    r_max: float = math.inf


@dataclass
class PressureConfig:
    kappa: float = 1.0
    gamma: float = 1.4


@dataclass
class InitialConfig:
    preset: str = "trig"
    rho_star: float = 1.0
    amplitude: float = 0.01
    k_max: int = 2
    seed: int = 0


@dataclass
class SolverConfig:
    nu: float = 1.0
    beta: float = math.pi / 4
    sigma: float = 0.5
    tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 8
    linear_tol: float = 1e-10
    n_pairs: int = 4
    T_list: tuple = (0.1, 0.05, 0.025, 0.0125)
    n_scan: int = 1024
    n_samples: int = 100_000


@dataclass
class OutputConfig:
    directory: str = "run"
    snapshot_every: int = 0
    csv: bool = True


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pressure: PressureConfig = field(default_factory=PressureConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()

    # builders ------------------------------------------------------------

    def grid(self) -> Grid:
        return Grid(self.problem.d, self.problem.n)

    def viscosity(self) -> cst.ViscosityModel:
        m = self.model
        ranges = {"s_max": m.s_max, "r_max": m.r_max}
        if m.family == "newtonian":
            return cst.ViscosityModel.newtonian(m.mu0, m.lam0, **ranges)
        if m.family == "power_law":
            return cst.ViscosityModel.power_law(m.mu0, m.exponent, m.lam0, **ranges)
        if m.family == "polynomial":
            return cst.ViscosityModel.polynomial(m.mu_coeffs, m.lam_coeffs, **ranges)
        return cst.ViscosityModel.from_expressions(m.mu_expr, m.lam_expr, **ranges)

    def pressure_law(self) -> cst.PressureLaw:
        return cst.PressureLaw(self.pressure.kappa, self.pressure.gamma)

    def initial_data(self):
        """``(rho0, u0)`` from the named preset."""
        from .fixedpoint import band_limited

        g = self.grid()
        ic = self.initial
        a = ic.amplitude
        if ic.preset == "rest":
            return np.full(g.shape, ic.rho_star), np.zeros((g.d,) + g.shape)
        if ic.preset == "trig":
            X = g.coords
            rho = ic.rho_star * (1.0 + a * np.cos(np.pi * X[0]))
            u = np.stack([a * np.sin(np.pi * X[(i + 1) % g.d]) for i in range(g.d)])
            return rho, u
        rng = np.random.default_rng(ic.seed)
        th = band_limited(g, rng, ic.k_max)
        u = band_limited(g, rng, ic.k_max, lead=(g.d,))
        rho = ic.rho_star * (1.0 + a * th / np.max(np.abs(th)))
        return rho, a * u / np.max(np.abs(u))


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}
_FAMILIES = ("newtonian", "power_law", "polynomial", "expression")
_PRESETS = ("rest", "trig", "random")


def _section_class(name):
    return {"problem": ProblemConfig, "model": ModelConfig, "pressure": PressureConfig,
            "initial": InitialConfig, "solver": SolverConfig, "output": OutputConfig}[name]


def _line_of(text, section, key=None):
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in re.split(r"[,\s]+", raw.strip()) if p]
            return tuple(float(p) for p in parts)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(default).__name__}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration text."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = RunConfig()
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"line {_line_of(text, section)}: unknown section [{section}]")
        cls = _section_class(section)
        defaults = cls()
        names = {f.name for f in fields(cls)}
        values = {}
        for key, raw in cp.items(section):
            line = _line_of(text, section, key)
            where = f"line {line}: [{section}] {key}"
            if key not in names:
                raise ConfigError(f"{where}: unknown key {key!r}")
            values[key] = _convert(raw, getattr(defaults, key), where)
        setattr(cfg, section, dataclasses.replace(defaults, **values))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    p = cfg.problem
    if p.d not in (2, 3):
        raise ConfigError(f"[problem] d must be 2 or 3, got {p.d}")
    if p.n < 4 or p.n % 2:
        raise ConfigError(f"[problem] n must be an even number >= 4, got {p.n}")
    if not p.T > 0:
        raise ConfigError(f"[problem] T must be positive, got {p.T}")
    if p.n_t < 2:
        raise ConfigError(f"[problem] n_t must be at least 2, got {p.n_t}")
    if not 1 < p.p < math.inf:
        raise ConfigError(f"[problem] p must lie in (1, inf), got {p.p}")
    if not p.q > p.d:
        raise ConfigError(f"[problem] q must exceed d, got q={p.q}")
    if cfg.model.family not in _FAMILIES:
        raise ConfigError(f"[model] family must be one of {_FAMILIES}, got {cfg.model.family!r}")
    if cfg.initial.preset not in _PRESETS:
        raise ConfigError(f"[initial] preset must be one of {_PRESETS}, got {cfg.initial.preset!r}")
    if not cfg.initial.rho_star > 0:
        raise ConfigError("[initial] rho_star must be positive")
    if not 0 < cfg.solver.beta < math.pi / 2:
        raise ConfigError("[solver] beta must lie in (0, pi/2)")
    if not cfg.solver.nu > 0:
        raise ConfigError("[solver] nu must be positive")
    if not cfg.solver.sigma > 0:
        raise ConfigError("[solver] sigma must be positive")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def serialize(cfg: RunConfig) -> str:
    out = []
    for section in _SECTIONS:
        out.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            out.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)
