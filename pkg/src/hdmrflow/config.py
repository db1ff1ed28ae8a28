"""Experiment configuration: a flat YAML mapping with strict keys.

Every field has a default, so an empty file is a valid configuration of
the scaled quarter five-spot experiment. Unknown keys and bad values are
reported with the offending line number.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import yaml

CACHE_ENV = "HDMRFLOW_CACHE"

METHODS = (
    "MFEM-full",
    "L-MMsFEM-full",
    "G-MMsFEM-full",
    "L-MMsFEM-hybrid",
    "G-MMsFEM-hybrid",
    "L-MMsFEM-adaptive",
    "G-MMsFEM-adaptive",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    fine: tuple = (60, 60)
    coarse: tuple = (6, 6)
    sigma2: float = 1.0
    corr_x: float = 0.1
    corr_y: float = 0.1
    n_terms: int = 20
    distribution: str = "uniform"
    mean_field: str = "zero"  # zero | channelized
    zeta: float = 0.9
    level: int = 2
    level_inactive: int | None = None
    anchor: float = 0.0
    adaptive_order: int = 2
    flow_model: str = "linear"  # linear | quadratic
    viscosity_ratio: float = 0.1
    dt_pvi: float = 0.02
    t_end_pvi: float = 1.0
    snapshot_pvi: tuple = (0.4,)
    method: str = "L-MMsFEM-hybrid"
    output_dir: str = "output"
    node_budget: int = 20000
    seed: int = 0
    workers: int = 1
    cache_dir: str | None = None
    sensitivity_qoi: str = "saturation"  # saturation | watercut
    active: tuple | None = None  # fixed active set (0-based); skips the sensitivity pass

    @property
    def levels(self) -> tuple:
        lp = self.level if self.level_inactive is None else self.level_inactive
        return self.level, lp

    def resolved_cache_dir(self) -> str | None:
        return self.cache_dir or os.environ.get(CACHE_ENV)

    def validate(self) -> "ExperimentConfig":
        def bad(name, msg):
            raise ConfigError(f"field {name!r}: {msg}")

        self.fine = tuple(int(v) for v in self.fine)
        self.coarse = tuple(int(v) for v in self.coarse)
        self.snapshot_pvi = tuple(float(v) for v in self.snapshot_pvi)
        if len(self.fine) != 2 or min(self.fine) < 1:
            bad("fine", "expected two positive integers")
        if len(self.coarse) != 2 or min(self.coarse) < 1:
            bad("coarse", "expected two positive integers")
        if self.fine[0] % self.coarse[0] or self.fine[1] % self.coarse[1]:
            bad("coarse", f"{self.coarse} does not divide fine grid {self.fine}")
        if self.sigma2 <= 0:
            bad("sigma2", "must be positive")
        if self.corr_x <= 0 or self.corr_y <= 0:
            bad("corr_x/corr_y", "must be positive")
        if not 1 <= self.n_terms <= self.fine[0] * self.fine[1]:
            bad("n_terms", "must be between 1 and the number of fine cells")
        if self.distribution != "uniform":
            bad("distribution", "only 'uniform' on [-1, 1] is supported")
        if self.mean_field not in ("zero", "channelized"):
            bad("mean_field", "expected 'zero' or 'channelized'")
        if not 0 < self.zeta < 1:
            bad("zeta", "must lie in (0, 1)")
        if self.level < 0:
            bad("level", "must be >= 0")
        if self.level_inactive is not None and not 0 <= self.level_inactive <= self.level:
            bad("level_inactive", "must satisfy 0 <= level_inactive <= level")
        if self.anchor != 0.0:
            bad("anchor", "only the grid centre (0) is supported")
        if not 1 <= self.adaptive_order <= 3:
            bad("adaptive_order", "must be 1, 2 or 3")
        if self.flow_model not in ("linear", "quadratic"):
            bad("flow_model", "expected 'linear' or 'quadratic'")
        if self.viscosity_ratio <= 0:
            bad("viscosity_ratio", "must be positive")
        if self.dt_pvi <= 0 or self.t_end_pvi < 0:
            bad("dt_pvi/t_end_pvi", "need dt_pvi > 0 and t_end_pvi >= 0")
        for t in self.snapshot_pvi:
            if not 0 <= t <= self.t_end_pvi:
                bad("snapshot_pvi", f"{t} outside [0, t_end_pvi]")
            k = round(t / self.dt_pvi)
            if abs(k * self.dt_pvi - t) > 1e-9:
                bad("snapshot_pvi", f"{t} is not a multiple of dt_pvi")
        if self.method not in METHODS:
            bad("method", f"expected one of {', '.join(METHODS)}")
        if self.node_budget < 1:
            bad("node_budget", "must be positive")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        if self.sensitivity_qoi not in ("saturation", "watercut"):
            bad("sensitivity_qoi", "expected 'saturation' or 'watercut'")
        if self.active is not None:
            self.active = tuple(sorted(set(int(a) for a in self.active)))
            if not self.active or self.active[0] < 0 or self.active[-1] >= self.n_terms:
                bad("active", "indices must lie in [0, n_terms)")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _line_of(node, key):
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            if k.value == key:
                return k.start_mark.line + 1
    return None


def parse_config(text: str, source: str = "<config>", overrides: dict | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    data.update(overrides or {})
    for key in data:
        if key not in FIELDS:
            line = _line_of(node, key)
            where = f"{source}:{line}" if line else source
            raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        cfg = ExperimentConfig(**data)
        return cfg.validate()
    except (ConfigError, TypeError, ValueError) as exc:
        msg = str(exc)
        for key in data:
            if f"'{key}'" in msg or f"{key}/" in msg or f"/{key}" in msg:
                line = _line_of(node, key)
                if line:
                    raise ConfigError(f"{source}:{line}: {msg}") from exc
        raise ConfigError(f"{source}: {msg}") from exc


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path), overrides)
