"""Run configuration read from a TOML file.

Every key has a default; unknown keys are rejected.  Example::

    seed = 0

    [grid]
    length = 1.0
    horizon = 0.45
    n_x = 400

    [potential]
    kind = "gaussian_bump"      # zero | constant | gaussian_bump | table
    center = 0.4
    width = 0.2236
    depth = 1.5
    offset = 2.0

    [pipeline]
    floor_rel = 1e-6
    ridge = 1e-6
    trim = 0.1
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError
from .tor import PipelineOptions
from .wavesim import (Potential, SimGrid, constant_potential, gaussian_bump,
                      tabulated_potential, zero_potential)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


FIXTURE_WIDTH = 20 ** -0.5


@dataclass(frozen=True)
class GridSection:
    length: float = 1.0
    horizon: float = 0.45
    n_x: int = 400


@dataclass(frozen=True)
class PotentialSpec:
    """Named built-in potential.

    ``kind`` selects the parameters used: ``constant`` reads ``value``;
    ``gaussian_bump`` is ``offset - depth * exp(-((x - center)/width)^2)``;
    ``table`` interpolates the lists ``x`` and ``q``.
    """

    kind: str = "zero"
    value: float = 0.0
    center: float = 0.4
    width: float = FIXTURE_WIDTH
    depth: float = 1.5
    offset: float = 2.0
    x: tuple = ()
    q: tuple = ()

    KINDS = ("zero", "constant", "gaussian_bump", "table")

    def build(self, grid: SimGrid) -> Potential:
        if self.kind == "zero":
            return zero_potential(grid)
        if self.kind == "constant":
            return constant_potential(grid, self.value)
        if self.kind == "gaussian_bump":
            if self.width <= 0:
                raise ConfigError("potential width must be positive")
            return gaussian_bump(grid, self.center, self.width, self.depth, self.offset)
        try:
            return tabulated_potential(grid, self.x, self.q)
        except ValueError as exc:
            raise ConfigError(f"potential table: {exc}") from None


DEFAULT_PERTURBATION = PotentialSpec(kind="gaussian_bump", center=0.25,
                                     width=40 ** -0.5, depth=-0.5, offset=0.0)


@dataclass(frozen=True)
class ForwardSection:
    control: str = "sin2"  # sin2 | sin2_half | t2
    windows: int = 1

    CONTROLS = ("sin2", "sin2_half", "t2")


@dataclass(frozen=True)
class FamilySection:
    m: int = 8


@dataclass(frozen=True)
class StabilitySection:
    levels: int = 6
    decay: float = 0.5
    inject_irregularity: bool = False


@dataclass(frozen=True)
class LemmaSection:
    dim: int = 24
    levels: int = 12
    zero_e: bool = False
    cholesky_n: int = 16
    cholesky_count: int = 20


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    svg: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    grid: GridSection = field(default_factory=GridSection)
    potential: PotentialSpec = field(default_factory=lambda: PotentialSpec("gaussian_bump"))
    perturbation: PotentialSpec = DEFAULT_PERTURBATION
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)
    family: FamilySection = field(default_factory=FamilySection)
    forward: ForwardSection = field(default_factory=ForwardSection)
    stability: StabilitySection = field(default_factory=StabilitySection)
    lemmas: LemmaSection = field(default_factory=LemmaSection)
    output: OutputSection = field(default_factory=OutputSection)

    def make_grid(self) -> SimGrid:
        g = self.grid
        try:
            return SimGrid(g.length, g.horizon, g.n_x)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None


_SECTIONS = {
    "grid": GridSection,
    "potential": PotentialSpec,
    "perturbation": PotentialSpec,
    "pipeline": PipelineOptions,
    "family": FamilySection,
    "forward": ForwardSection,
    "stability": StabilitySection,
    "lemmas": LemmaSection,
    "output": OutputSection,
}


def _coerce(name, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        if not np.isfinite(value):
            raise ConfigError(f"{name} must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of numbers")
        return tuple(float(v) for v in value)
    raise ConfigError(f"{name}: unsupported value")


def _section(name, cls, table, base):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    updates = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
        updates[key] = _coerce(f"{name}.{key}", value, getattr(base, key))
    return replace(base, **updates)


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a validated :class:`RunConfig`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    cfg = RunConfig()
    updates = {}
    for key, value in data.items():
        if key == "seed":
            updates["seed"] = _coerce("seed", value, 0)
        elif key in _SECTIONS:
            if key in ("potential", "perturbation") and isinstance(value, dict) \
                    and "kind" not in value:
                raise ConfigError(f"missing required key '{key}.kind'")
            base = PotentialSpec() if key in ("potential", "perturbation") \
                else getattr(cfg, key)
            updates[key] = _section(key, _SECTIONS[key], value, base)
        else:
            raise ConfigError(f"unknown key '{key}'")
    cfg = replace(cfg, **updates)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def validate(cfg: RunConfig):
    for name in ("potential", "perturbation"):
        spec = getattr(cfg, name)
        if spec.kind not in PotentialSpec.KINDS:
            raise ConfigError(
                f"{name}.kind must be one of {', '.join(PotentialSpec.KINDS)}; got '{spec.kind}'")
        if spec.kind == "table" and (not spec.x or not spec.q):
            raise ConfigError(f"missing required key '{name}.x' or '{name}.q' for a table")
    if cfg.forward.control not in ForwardSection.CONTROLS:
        raise ConfigError(f"forward.control must be one of {', '.join(ForwardSection.CONTROLS)}")
    if cfg.forward.windows not in (1, 2):
        raise ConfigError("forward.windows must be 1 or 2")
    if cfg.family.m < 1:
        raise ConfigError("family.m must be >= 1")
    if cfg.stability.levels < 0:
        raise ConfigError("stability.levels must be >= 0")
    if not 0 < cfg.stability.decay < 1:
        raise ConfigError("stability.decay must lie in (0, 1)")
    if cfg.lemmas.dim < 2 or cfg.lemmas.levels < 1:
        raise ConfigError("lemmas.dim must be >= 2 and lemmas.levels >= 1")
    if cfg.lemmas.cholesky_n < 1 or cfg.lemmas.cholesky_count < 1:
        raise ConfigError("lemmas.cholesky_n and lemmas.cholesky_count must be >= 1")
    p = cfg.pipeline
    if p.method not in ("exact", "sandwich"):
        raise ConfigError("pipeline.method must be 'exact' or 'sandwich'")
    if p.derivative not in ("discrete", "analytic"):
        raise ConfigError("pipeline.derivative must be 'discrete' or 'analytic'")
    if not 0 <= p.trim < 0.5:
        raise ConfigError("pipeline.trim must lie in [0, 0.5)")
    for key in ("floor_rel", "rank_tol", "conv_tol", "ridge"):
        if getattr(p, key) < 0:
            raise ConfigError(f"pipeline.{key} must be >= 0")
    cfg.make_grid()
