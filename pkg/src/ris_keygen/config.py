"""Scenario configuration: YAML tree with packaged defaults.

User files only need the keys they change; everything else comes from
``data/default.yaml``.  Unknown keys are rejected.  dB/dBm values are
converted to linear units by the accessor methods, never stored linear.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import yaml

ALGORITHMS = ("ma_no_ris", "ma_ris_raw", "sa_ris_opt", "upper_bound", "proposed")
SWEEP_VARS = ("pt", "m", "dr", "k")


@dataclass(frozen=True)
class GeometryCfg:
    n: int = 2
    m_y: int = 4
    m_z: int = 4
    d_a: float = 0.5
    d_r: float = 0.5
    wavelength: float = 0.1
    bs_pos: tuple = (0.0, 0.0, 1.0)
    ris_pos: tuple = (39.0, 4.9, 4.9)
    ue_pos: tuple = (39.0, 4.2, 5.4)

    @property
    def m(self) -> int:
        return self.m_y * self.m_z


@dataclass(frozen=True)
class LinksCfg:
    k_db: float = 10.0
    beta0_db: float = -30.0
    d0: float = 1.0
    exponent_bs_ris: float = 2.0
    exponent_ue_ris: float = 2.0
    exponent_ue_bs: float = 3.67
    n_paths: int = 8


@dataclass(frozen=True)
class CorrelationCfg:
    r: float = 0.5
    gamma: Optional[float] = 1.0
    mu1: float = 1.0


@dataclass(frozen=True)
class PowerCfg:
    pt_dbm: float = 20.0
    noise_dbm: float = -96.0

    @property
    def pt_w(self) -> float:
        return dbm_to_w(self.pt_dbm)

    @property
    def noise_w(self) -> float:
        return dbm_to_w(self.noise_dbm)


@dataclass(frozen=True)
class ProbingCfg:
    v: Optional[int] = None
    q: int = 1
    k_q: int = 2


@dataclass(frozen=True)
class ModelCfg:
    static_ris_link: bool = True
    subtract_mean: bool = False
    nlos: str = "gaussian"
    cov_trials: int = 100_000


@dataclass(frozen=True)
class RunCfg:
    seed: int = 1
    realizations: int = 1
    trials: int = 0
    algorithms: tuple = ALGORITHMS
    sa_trials: int = 100_000
    sa_randomizations: int = 100


@dataclass(frozen=True)
class SweepCfg:
    var: Optional[str] = "pt"
    grid: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: GeometryCfg = field(default_factory=GeometryCfg)
    links: LinksCfg = field(default_factory=LinksCfg)
    correlation: CorrelationCfg = field(default_factory=CorrelationCfg)
    power: PowerCfg = field(default_factory=PowerCfg)
    probing: ProbingCfg = field(default_factory=ProbingCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    run: RunCfg = field(default_factory=RunCfg)
    sweep: SweepCfg = field(default_factory=SweepCfg)

    def __post_init__(self):
        validate(self)

    def replace(self, **sections) -> "ScenarioConfig":
        """Copy with some fields of some sections replaced, e.g.
        ``cfg.replace(power={"pt_dbm": 10})``."""
        updates = {name: dataclasses.replace(getattr(self, name), **vals)
                   for name, vals in sections.items()}
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTION_TYPES = {
    "geometry": GeometryCfg, "links": LinksCfg, "correlation": CorrelationCfg,
    "power": PowerCfg, "probing": ProbingCfg, "model": ModelCfg, "run": RunCfg,
    "sweep": SweepCfg,
}


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_lin(db: float) -> float:
    return 10.0 ** (db / 10.0)


def validate(cfg: ScenarioConfig) -> None:
    g = cfg.geometry
    if min(g.n, g.m_y, g.m_z) < 1:
        raise ValueError("array sizes must be >= 1")
    if min(g.d_a, g.d_r, g.wavelength) <= 0:
        raise ValueError("spacings and wavelength must be positive")
    for name in ("bs_pos", "ris_pos", "ue_pos"):
        if len(getattr(g, name)) != 3:
            raise ValueError(f"geometry.{name} must have 3 coordinates")
    lk = cfg.links
    if lk.d0 <= 0 or lk.n_paths < 1:
        raise ValueError("links.d0 must be positive and links.n_paths >= 1")
    if min(lk.exponent_bs_ris, lk.exponent_ue_ris, lk.exponent_ue_bs) <= 0:
        raise ValueError("path-loss exponents must be positive")
    c = cfg.correlation
    if not 0 <= c.r < 1 or c.mu1 <= 0 or (c.gamma is not None and c.gamma <= 0):
        raise ValueError("need 0 <= r < 1, mu1 > 0 and gamma > 0")
    p = cfg.probing
    if p.q < 1 or p.k_q < 2 or (p.v is not None and p.v < g.m + 1):
        raise ValueError("need q >= 1, k_q >= 2 and v >= M + 1")
    m = cfg.model
    if m.nlos not in ("gaussian", "paths"):
        raise ValueError("model.nlos must be 'gaussian' or 'paths'")
    if m.cov_trials < 1000:
        raise ValueError("model.cov_trials must be >= 1000")
    r = cfg.run
    bad = [a for a in r.algorithms if a not in ALGORITHMS]
    if bad or not r.algorithms:
        raise ValueError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
    if r.seed < 0 or r.seed >= 2 ** 64:
        raise ValueError("run.seed must fit in an unsigned 64-bit integer")
    if r.realizations < 1 or r.trials < 0 or r.sa_trials < 10_000 or r.sa_randomizations < 1:
        raise ValueError("invalid run counts")
    s = cfg.sweep
    if s.var is not None and s.var not in SWEEP_VARS:
        raise ValueError(f"sweep.var must be one of {SWEEP_VARS}")


def _default_tree() -> dict:
    text = resources.files("ris_keygen").joinpath("data/default.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in out:
            raise ValueError(f"unknown config key {path}{key}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ValueError(f"config key {path}{key} must be a mapping")
            out[key] = _merge(out[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def _freeze(v):
    return tuple(_freeze(x) for x in v) if isinstance(v, list) else v


def from_dict(tree: dict) -> ScenarioConfig:
    """Build a config from a (possibly partial) tree merged over the defaults."""
    merged = _merge(_default_tree(), tree or {})
    sections = {}
    for name, typ in _SECTION_TYPES.items():
        vals = {k: _freeze(v) for k, v in merged[name].items()}
        sections[name] = typ(**vals)
    return ScenarioConfig(**sections)


def load_config(path=None) -> ScenarioConfig:
    """Read a YAML scenario file; ``None`` gives the defaults."""
    if path is None:
        return from_dict({})
    with open(path) as fh:
        tree = yaml.safe_load(fh) or {}
    if not isinstance(tree, dict):
        raise ValueError("config root must be a mapping")
    return from_dict(tree)
