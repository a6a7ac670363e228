"""Pipeline configuration: one YAML file per experiment, CLI overrides, stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path

import numpy as np
import yaml

from gridrisk.grid import PowerGrid, load_case
from gridrisk.risk import CostCurve, RiskConfig
from gridrisk.scenarios import (
    DEFAULT_LOAD_MARGINALS,
    DEFAULT_WIND_MARGINALS,
    default_covariance,
    marginal_from_dict,
    marginal_to_dict,
    zone_adjacency,
)
from gridrisk.scuc import ScucConfig
from gridrisk.surrogate import HEADS, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class SolverSection:
    gap: float = 1e-4
    node_limit: int = 10000
    reserve_fraction: float = 0.05
    shed_penalty: float = 1000.0
    lp_method: str = "highs"
    workers: int = 1

    def scuc(self) -> ScucConfig:
        return ScucConfig(reserve_fraction=self.reserve_fraction, shed_penalty=self.shed_penalty,
                          gap=self.gap, node_limit=self.node_limit, lp_method=self.lp_method)


@dataclass
class TrainSection:
    heads: list = field(default_factory=lambda: ["generation", "shedding", "branch_flow"])
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 800
    patience: int = 100
    seed: int = 0
    penalty_weight: float = 1.0
    weight_decay: float = 0.1
    zero_cut: bool = True

    def train_config(self) -> TrainConfig:
        return TrainConfig(tuple(self.split), self.lr, self.batch_size, self.epochs, self.patience,
                           self.seed, self.penalty_weight, self.weight_decay, self.zero_cut)


@dataclass
class RiskSection:
    delta_t: int = 2
    epsilon: float = 0.85
    shed_cost: object = 10.0          # number or {"rates": [...], "breaks": [...]}
    overload_cost: object = 1.0
    discount: bool = False
    shed_tolerance: float = 1e-3
    k_significant: int = 4            # 0 = all branches
    evaluate_on: str = "test"         # "test" split or "all" scenarios

    def risk_config(self) -> RiskConfig:
        return RiskConfig(self.delta_t, self.epsilon, self.shed_tolerance, 0.0,
                          CostCurve.from_dict(self.shed_cost), CostCurve.from_dict(self.overload_cost),
                          self.discount)


@dataclass
class CompareSection:
    probability_abs: float = 0.05
    risk_rel: float = 0.15


@dataclass
class PipelineConfig:
    case: str = "case6z"
    out_dir: str = "runs/case6z"
    n_scenarios: int = 1000
    steps: int = 12
    seed: int = 0
    lhs: bool = True
    load_marginals: list | None = None   # list of marginal dicts, one per zone
    wind_marginals: list | None = None
    covariance: object = 0.3             # adjacent-zone rho, or explicit 2Z x 2Z matrix
    solver: SolverSection = field(default_factory=SolverSection)
    train: TrainSection = field(default_factory=TrainSection)
    risk: RiskSection = field(default_factory=RiskSection)
    compare: CompareSection = field(default_factory=CompareSection)

    def __post_init__(self):
        if self.n_scenarios <= 0:
            raise ConfigError(f"n_scenarios must be positive, got {self.n_scenarios}")
        if self.steps <= 0:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.risk.delta_t < 1 or self.risk.delta_t >= self.steps:
            raise ConfigError("delta_t must satisfy 1 <= delta_t < steps")
        bad = [h for h in self.train.heads if h not in HEADS]
        if bad:
            raise ConfigError(f"unknown heads {bad}")

    # -- derived objects ----------------------------------------------------------------

    def grid(self) -> PowerGrid:
        return resolve_case(self.case)

    def marginals(self, grid: PowerGrid):
        load = [marginal_from_dict(d) for d in self.load_marginals] if self.load_marginals else list(DEFAULT_LOAD_MARGINALS)
        wind = [marginal_from_dict(d) for d in self.wind_marginals] if self.wind_marginals else list(DEFAULT_WIND_MARGINALS)
        if len(load) != grid.n_zone or len(wind) != grid.n_zone:
            raise ConfigError(f"grid has {grid.n_zone} zones; got {len(load)} load and {len(wind)} wind marginals")
        return load, wind

    def covariance_matrix(self, grid: PowerGrid) -> np.ndarray:
        if isinstance(self.covariance, (int, float)):
            return default_covariance(zone_adjacency(grid), float(self.covariance))
        return np.asarray(self.covariance, dtype=float)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hex digest of the settings that determine outputs (paths and worker count excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        d["solver"].pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


_SECTIONS = {"solver": SolverSection, "train": TrainSection, "risk": RiskSection, "compare": CompareSection}


def config_from_dict(d: dict) -> PipelineConfig:
    d = dict(d or {})
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key, cls in _SECTIONS.items():
        sec = d.get(key) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        sec_known = {f.name for f in dataclasses.fields(cls)}
        bad = set(sec) - sec_known
        if bad:
            raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
        d[key] = cls(**sec)
    return PipelineConfig(**d)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> PipelineConfig:
    """Read YAML (or defaults when ``path`` is None) and apply ``key.sub=value`` overrides."""
    d = {}
    if path is not None:
        d = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return config_from_dict(d)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def resolve_case(case: str) -> PowerGrid:
    """A path to a case file, or the name of a bundled case (``case6z``)."""
    p = Path(case)
    if p.suffix or p.exists():
        if not p.exists():
            raise ConfigError(f"case file {case} not found")
        return load_case(p)
    bundled = files("gridrisk") / "data" / f"{case}.txt"
    if not bundled.is_file():
        raise ConfigError(f"no bundled case named {case!r}")
    return load_case(Path(str(bundled)))


def default_marginal_dicts() -> tuple[list, list]:
    return ([marginal_to_dict(m) for m in DEFAULT_LOAD_MARGINALS],
            [marginal_to_dict(m) for m in DEFAULT_WIND_MARGINALS])
