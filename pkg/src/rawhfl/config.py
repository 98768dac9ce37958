"""Experiment configuration: defaults, the desk-scale profile and YAML loading."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from typing import Any

import yaml

ALGORITHMS = ("rawhfl", "hfedavg_m1", "hfedavg_m2", "hfedavg_ub", "top_popular")


@dataclass
class TopologyConfig:
    num_bs: int = 4
    users_per_bs: int = 12
    cell_radius_m: float = 400.0
    min_distance_m: float = 10.0


@dataclass
class CatalogConfig:
    num_genres: int = 8
    per_genre: int = 32
    feature_dim: int = 16


@dataclass
class RequestConfig:
    dirichlet: float = 0.3
    activity_range: tuple[float, float] = (0.2, 0.8)
    similarity_range: tuple[float, float] = (0.1, 0.8)
    warm_up: int = 5
    test_requests: int = 200


@dataclass
class LearningConfig:
    global_rounds: int = 300
    edge_rounds: int = 4
    local_rounds: int = 50
    lr: float = 0.1
    minibatches: int = 10
    batch_size: int = 32
    fpp: int = 32


@dataclass
class RadioConfig:
    carrier_ghz: float = 2.4
    prb_hz: float = 540e3
    p_tx_dbm_range: tuple[float, float] = (20.0, 30.0)
    noise_dbm_hz: float = -174.0


@dataclass
class ComputeConfig:
    cycles_per_bit_range: tuple[float, float] = (25.0, 40.0)
    f_max_ghz_range: tuple[float, float] = (1.2, 2.0)
    energy_budget_range: tuple[float, float] = (0.8, 1.5)
    zeta_cap: float = 2e-28
    deadline_s: float = 150.0


@dataclass
class PlannerConfig:
    theta: float = 0.4
    rho: float = 1.0
    max_iter: int = 50
    tol: float = 1e-4
    Z: int = 2


@dataclass
class BoundConfig:
    smoothness: float = 1.0
    # None means estimate from the initial global model
    sigma_sq: float | None = None
    eps0_sq: float | None = None
    eps1_sq: float | None = None


@dataclass
class ExperimentConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    catalog: CatalogConfig = field(default_factory=CatalogConfig)
    request: RequestConfig = field(default_factory=RequestConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    compute: ComputeConfig = field(default_factory=ComputeConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    bound: BoundConfig = field(default_factory=BoundConfig)
    algorithm: str = "rawhfl"
    seed: int = 0

    @property
    def num_items(self) -> int:
        return self.catalog.num_genres * self.catalog.per_genre

    @property
    def num_users(self) -> int:
        return self.topology.num_bs * self.topology.users_per_bs

    def replace(self, **changes: Any) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"planner.Z": 4})``."""
        out = copy.deepcopy(self)
        for key, value in changes.items():
            _set_dotted(out, key, value)
        validate(out)
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _set_dotted(cfg, key: str, value) -> None:
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise ConfigError(key, "unknown configuration key")
        obj = getattr(obj, p)
    if not hasattr(obj, parts[-1]):
        raise ConfigError(key, "unknown configuration key")
    current = getattr(obj, parts[-1])
    if isinstance(current, tuple) and isinstance(value, list):
        value = tuple(value)
    setattr(obj, parts[-1], value)


def _range_ok(name: str, rng, lo_bound: float | None = None, hi_bound: float | None = None):
    if not (isinstance(rng, (tuple, list)) and len(rng) == 2):
        raise ConfigError(name, f"expected a [low, high] pair, got {rng!r}")
    lo, hi = float(rng[0]), float(rng[1])
    if lo > hi:
        raise ConfigError(name, f"empty range [{lo}, {hi}]")
    if lo_bound is not None and lo < lo_bound:
        raise ConfigError(name, f"lower end {lo} below {lo_bound}")
    if hi_bound is not None and hi > hi_bound:
        raise ConfigError(name, f"upper end {hi} above {hi_bound}")


def _positive(name: str, value) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ConfigError(name, f"must be a positive number, got {value!r}")


def _positive_int(name: str, value) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(name, f"must be a positive integer, got {value!r}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    t, c, r, lr, ra, co, p, b = (cfg.topology, cfg.catalog, cfg.request, cfg.learning,
                                 cfg.radio, cfg.compute, cfg.planner, cfg.bound)
    _positive_int("topology.num_bs", t.num_bs)
    _positive_int("topology.users_per_bs", t.users_per_bs)
    _positive("topology.cell_radius_m", t.cell_radius_m)
    if not 10.0 <= t.min_distance_m < t.cell_radius_m <= 5000.0:
        raise ConfigError("topology.cell_radius_m",
                          "need 10 <= min_distance_m < cell_radius_m <= 5000")
    for name in ("num_genres", "per_genre", "feature_dim"):
        _positive_int(f"catalog.{name}", getattr(c, name))
    if c.num_genres * c.per_genre < 2:
        raise ConfigError("catalog.per_genre", "catalog needs at least 2 items")
    _positive("request.dirichlet", r.dirichlet)
    _range_ok("request.activity_range", r.activity_range, 0.0, 1.0)
    _range_ok("request.similarity_range", r.similarity_range, 0.0, 1.0)
    if not isinstance(r.warm_up, int) or r.warm_up < 2:
        raise ConfigError("request.warm_up", "need at least 2 warm-up requests")
    _positive_int("request.test_requests", r.test_requests)
    for name in ("global_rounds", "edge_rounds", "local_rounds", "minibatches",
                 "batch_size", "fpp"):
        _positive_int(f"learning.{name}", getattr(lr, name))
    if not isinstance(lr.lr, (int, float)) or lr.lr < 0:
        raise ConfigError("learning.lr", f"must be non-negative, got {lr.lr!r}")
    _positive("radio.carrier_ghz", ra.carrier_ghz)
    _positive("radio.prb_hz", ra.prb_hz)
    _range_ok("radio.p_tx_dbm_range", ra.p_tx_dbm_range)
    _range_ok("compute.cycles_per_bit_range", co.cycles_per_bit_range, 0.0)
    _range_ok("compute.f_max_ghz_range", co.f_max_ghz_range, 0.0)
    _range_ok("compute.energy_budget_range", co.energy_budget_range, 0.0)
    if co.cycles_per_bit_range[0] <= 0 or co.f_max_ghz_range[0] <= 0 \
            or co.energy_budget_range[0] <= 0:
        raise ConfigError("compute", "ranges must be strictly positive")
    _positive("compute.zeta_cap", co.zeta_cap)
    _positive("compute.deadline_s", co.deadline_s)
    if not 0.0 <= p.theta <= 1.0:
        raise ConfigError("planner.theta", f"must lie in [0, 1], got {p.theta}")
    _positive("planner.rho", p.rho)
    _positive_int("planner.max_iter", p.max_iter)
    _positive("planner.tol", p.tol)
    if not isinstance(p.Z, int) or isinstance(p.Z, bool) or not 1 <= p.Z <= t.users_per_bs:
        raise ConfigError("planner.Z", f"must lie in [1, users_per_bs={t.users_per_bs}]")
    if not b.smoothness > 0:
        raise ConfigError("bound.smoothness", "must be positive")
    for name in ("sigma_sq", "eps0_sq", "eps1_sq"):
        v = getattr(b, name)
        if v is not None and v < 0:
            raise ConfigError(f"bound.{name}", "must be non-negative")
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {cfg.seed!r}")
    return cfg


def from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in (data or {}).items():
        if isinstance(value, dict):
            section = getattr(cfg, key, None)
            if section is None or not dataclasses.is_dataclass(section):
                raise ConfigError(key, "unknown configuration section")
            for sub, v in value.items():
                _set_dotted(cfg, f"{key}.{sub}", v)
        else:
            _set_dotted(cfg, key, value)
    return validate(cfg)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<root>", "configuration file must hold a mapping")
    return from_dict(data or {})


def full_profile() -> ExperimentConfig:
    return validate(ExperimentConfig())


def desk_profile(**overrides: Any) -> ExperimentConfig:
    """B=2 BSs with 4 users each, a 32-item catalog, K=50, L=10."""
    cfg = ExperimentConfig(
        topology=TopologyConfig(num_bs=2, users_per_bs=4),
        catalog=CatalogConfig(num_genres=4, per_genre=8),
        learning=LearningConfig(global_rounds=50, local_rounds=10),
    )
    validate(cfg)
    return cfg.replace(**overrides) if overrides else cfg
