"""Experiment configuration: one INI file with a section per concern.

Every key has a default, so an empty file is a valid config and describes the
benchmark setup.  ``dump_config`` writes every key back out, which makes the
serialized form a canonical description that the run manifest can hash.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .costs import TravelCost, make_discount
from .dynamics import double_integrator
from .errors import ParseError
from .grid import Grid2
from .siren import TrainConfig


@dataclass(frozen=True)
class DynamicsSection:
    a_max: float = 1.0


@dataclass(frozen=True)
class CostSection:
    radius: float = 1.0
    scale: float = 1.0


@dataclass(frozen=True)
class DiscountSection:
    rate: float = 1.0
    dt: float = 0.05


@dataclass(frozen=True)
class SweepSection:
    tol: float = 1e-6
    max_iters: int = 2000


@dataclass(frozen=True)
class Stage1Section:
    half_width: float = 10.0
    n: int = 501
    compare_n: int = 51
    horizon: float = 1.0
    rates: tuple[float, ...] = (0.0, 1.0)
    threshold: float = -1e-6
    band_cells: int = 2
    max_switches: int = 3
    hist_bins: int = 50


@dataclass(frozen=True)
class Stage2Section:
    half_width: float = 2.5
    n: int = 201


@dataclass(frozen=True)
class PropertiesSection:
    trials: int = 50
    rates: tuple[float, ...] = (0.5, 1.0, 2.0)
    sigmas: tuple[float, ...] = (0.025, 0.05, 0.1)
    residual_probes: int = 20
    residual_sigmas: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125)
    ratio_lo: float = 0.35
    ratio_hi: float = 0.65
    grad_nets: int = 20
    grad_probes: int = 5
    grad_rtol: float = 1e-5


@dataclass(frozen=True)
class RunSection:
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    cost: CostSection = field(default_factory=CostSection)
    discount: DiscountSection = field(default_factory=DiscountSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    train: TrainConfig = field(default_factory=TrainConfig)
    properties: PropertiesSection = field(default_factory=PropertiesSection)
    run: RunSection = field(default_factory=RunSection)

    # builders for the module-level objects

    def dyn(self, half_width: float | None = None):
        hw = self.stage2.half_width if half_width is None else half_width
        return double_integrator(self.dynamics.a_max, hw)

    def travel_cost(self) -> TravelCost:
        return TravelCost(self.cost.radius, self.cost.scale)

    def disc(self, rate: float | None = None):
        return make_discount(self.discount.rate if rate is None else rate, self.discount.dt)

    def stage1_grid(self) -> Grid2:
        return Grid2.square(self.stage1.half_width, self.stage1.n)

    def stage1_compare_grid(self) -> Grid2:
        return Grid2.square(self.stage1.half_width, self.stage1.compare_n)

    def stage2_grid(self) -> Grid2:
        return Grid2.square(self.stage2.half_width, self.stage2.n)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.run.seed)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=RunSection(seed=seed))


SECTIONS = tuple(f.name for f in fields(ExperimentConfig))


# the training seed comes from [run] so that one --seed drives everything
_DERIVED = {("train", "seed")}


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(s) for s in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ParseError(f"bad value for {where}: {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ParseError(f"malformed config: {e.message.splitlines()[0]}", line=line) from None
    sections = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ParseError(f"unknown section [{name}]")
        default = getattr(ExperimentConfig(), name)
        known = {f.name for f in fields(default)}
        updates = {}
        for key, raw in cp.items(name):
            where = f"{name}.{key}"
            if key not in known or (name, key) in _DERIVED:
                raise ParseError(f"unknown key {where}")
            updates[key] = _convert(raw, getattr(default, key), where)
        try:
            sections[name] = replace(default, **updates)
        except ValueError as e:
            raise ParseError(f"invalid [{name}]: {e}") from None
    cfg = ExperimentConfig(**sections)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    checks = [
        ("discount.dt", cfg.discount.dt > 0),
        ("discount.rate", cfg.discount.rate >= 0),
        ("cost.radius", cfg.cost.radius > 0),
        ("cost.scale", cfg.cost.scale >= 0),
        ("dynamics.a_max", cfg.dynamics.a_max > 0),
        ("sweep.tol", cfg.sweep.tol > 0),
        ("sweep.max_iters", cfg.sweep.max_iters >= 1),
        ("stage1.n", cfg.stage1.n >= 2),
        ("stage1.compare_n", cfg.stage1.compare_n >= 2),
        ("stage1.threshold", cfg.stage1.threshold < 0),
        ("stage1.max_switches", 0 <= cfg.stage1.max_switches <= 3),
        ("stage1.rates", len(cfg.stage1.rates) >= 1 and min(cfg.stage1.rates) >= 0),
        ("stage2.n", cfg.stage2.n >= 2),
        ("properties.residual_sigmas", len(cfg.properties.residual_sigmas) >= 2),
        ("run.seed", cfg.run.seed >= 0),
    ]
    for where, ok in checks:
        if not ok:
            raise ParseError(f"out-of-range value for {where}")


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text with every key written out."""
    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in fields(section):
            if (name, f.name) in _DERIVED:
                continue
            out.append(f"{f.name} = {_format(getattr(section, f.name))}")
        out.append("")
    return "\n".join(out)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()
