"""Run configuration: every tunable constant, loadable from one YAML file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .arbiter import DriftConfig
from .scoring import ScoringConfig
from .selectors import EndpointConfig, LatencyModel, SCRIPTED_POLICIES
from .sim import EnvConfig, IdmParams, SpeedProfile
from .worldlines import HazardPenalty, RiskConfig, ROLES

MODES = ("reactive", "dual", "deterministic")
RUNTIME_SOURCES = ("rule_based", "endpoint")
SELECTORS = SCRIPTED_POLICIES + ("analytical_top", "endpoint")

#: Named matched-seed bank; every compared condition runs this identical list.
SEED_BANKS = {"steinsgate_v1": tuple(range(1, 11))}
DEFAULT_SEED_BANK = "steinsgate_v1"

ROLE_CELLS = {
    "alpha": (("alpha",), "balanced"),
    "alpha+beta": (("alpha", "beta"), "balanced"),
    "alpha+gamma": (("alpha", "gamma"), "balanced"),
    "alpha+beta+gamma-balanced": (("alpha", "beta", "gamma"), "balanced"),
    "alpha+beta+gamma-natural": (("alpha", "beta", "gamma"), "natural"),
}

SWEEP_AXES = {
    "horizon": (1, 2, 4, 8, 12),
    "budget": (1, 2, 3, 6, 8),
    "drift": (0.20, 0.35, 0.50, 0.65, 1.00),
    "roles": tuple(ROLE_CELLS),
}


@dataclass(frozen=True)
class RunConfig:
    mode: str = "dual"
    selector: str = "top"
    runtime_source: str = "rule_based"
    seed_bank: str = DEFAULT_SEED_BANK
    seeds: tuple[int, ...] = SEED_BANKS[DEFAULT_SEED_BANK]
    episode_steps: int = 20
    horizon_s: float = 3.0
    roles_enabled: tuple[str, ...] = ROLES
    balance: str = "natural"  # strategic prompt mode
    retain_n: int = 6
    env: EnvConfig = field(default_factory=EnvConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    latency: LatencyModel = field(default_factory=LatencyModel)
    endpoint: EndpointConfig | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")
        if self.runtime_source not in RUNTIME_SOURCES:
            raise ValueError(f"unknown runtime source {self.runtime_source!r}")
        if self.mode == "deterministic" and (self.selector != "analytical_top"
                                             or self.runtime_source != "rule_based"):
            raise ValueError("deterministic mode requires the analytical-top "
                             "selector and the rule-based runtime")
        if self.balance not in ("natural", "balanced"):
            raise ValueError(f"unknown balance mode {self.balance!r}")
        if "alpha" not in self.roles_enabled:
            raise ValueError("alpha role must be enabled")
        if self.horizon_s <= 0 or self.episode_steps < 1 or not self.seeds:
            raise ValueError("horizon, steps, and seeds must be positive")
        if (self.selector == "endpoint" or self.runtime_source == "endpoint") \
                and self.endpoint is None:
            raise ValueError("endpoint selector/runtime requires endpoint config")

    @property
    def horizon_steps(self) -> int:
        # Policy runs at policy_hz, so seconds and steps coincide at 1 Hz.
        return max(int(round(self.horizon_s * self.env.policy_hz)), 1)

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "selector": self.selector,
            "runtime_source": self.runtime_source,
            "seed_bank": self.seed_bank,
            "seeds": list(self.seeds),
            "episode_steps": self.episode_steps,
            "horizon_s": self.horizon_s,
            "roles_enabled": list(self.roles_enabled),
            "balance": self.balance,
            "shortlist_k": self.scoring.shortlist_k,
            "drift_tau": [self.drift.tau_low, self.drift.tau_med, self.drift.tau_high],
            "retain_n": self.retain_n,
        }


def apply_axis(cfg: RunConfig, axis: str, value) -> tuple[str, RunConfig]:
    """One sweep cell: override a single mechanism knob, return (cell id, config)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    allowed = SWEEP_AXES[axis]
    if axis == "horizon":
        v = float(value)
        if v not in {float(a) for a in allowed}:
            raise ValueError(f"horizon value {value!r} outside {allowed}")
        return f"horizon={value}", replace(cfg, horizon_s=v)
    if axis == "budget":
        k = int(value)
        if k not in allowed:
            raise ValueError(f"budget value {value!r} outside {allowed}")
        return f"budget={k}", replace(cfg, scoring=replace(cfg.scoring, shortlist_k=k))
    if axis == "drift":
        tau = float(value)
        if tau not in {float(a) for a in allowed}:
            raise ValueError(f"drift value {value!r} outside {allowed}")
        drift = replace(cfg.drift, tau_low=tau, tau_med=tau, tau_high=tau)
        return f"drift={tau:.2f}", replace(cfg, drift=drift)
    # roles axis
    if value not in ROLE_CELLS:
        raise ValueError(f"roles value {value!r} outside {tuple(ROLE_CELLS)}")
    roles, balance = ROLE_CELLS[value]
    return f"roles={value}", replace(cfg, roles_enabled=roles, balance=balance)


def _dataclass_from(mapping: dict, cls, **overrides):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(mapping)
    kwargs.update(overrides)
    return cls(**kwargs)


def _env_from(mapping: dict) -> EnvConfig:
    mapping = dict(mapping)
    profile = mapping.pop("speed_profile", None)
    idm = mapping.pop("idm", None)
    kwargs = {}
    if profile is not None:
        kwargs["speed_profile"] = SpeedProfile(
            target_band_kmh=tuple(profile["target_band_kmh"]),
            reward_band_kmh=tuple(profile["reward_band_kmh"]),
        )
    if idm is not None:
        kwargs["idm"] = _dataclass_from(idm, IdmParams)
    for key in ("spawn_speed_frac",):
        if key in mapping:
            mapping[key] = tuple(mapping[key])
    return _dataclass_from(mapping, EnvConfig, **kwargs)


def _risk_from(mapping: dict) -> RiskConfig:
    mapping = dict(mapping)
    hazards = mapping.pop("hazard_penalties", None)
    kwargs = {}
    if hazards is not None:
        kwargs["hazard_penalties"] = {
            name: HazardPenalty(**tupled) for name, tupled in hazards.items()
        }
    for key in ("risk_weights", "risk_thresholds"):
        if key in mapping:
            mapping[key] = tuple(mapping[key])
    return _dataclass_from(mapping, RiskConfig, **kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    """Build a RunConfig from a YAML file; absent keys keep their defaults."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    return run_config_from_dict(raw)


def run_config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    kwargs = {}
    if "env" in raw:
        kwargs["env"] = _env_from(raw.pop("env"))
    if "risk" in raw:
        kwargs["risk"] = _risk_from(raw.pop("risk"))
    if "scoring" in raw:
        kwargs["scoring"] = _dataclass_from(raw.pop("scoring"), ScoringConfig)
    if "drift" in raw:
        kwargs["drift"] = _dataclass_from(raw.pop("drift"), DriftConfig)
    if "latency" in raw:
        kwargs["latency"] = _dataclass_from(raw.pop("latency"), LatencyModel)
    if "endpoint" in raw:
        ep = raw.pop("endpoint")
        kwargs["endpoint"] = None if ep is None else _dataclass_from(ep, EndpointConfig)
    if "seed_bank" in raw and "seeds" not in raw:
        raw["seeds"] = SEED_BANKS[raw["seed_bank"]]
    for key in ("seeds", "roles_enabled"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return _dataclass_from(raw, RunConfig, **kwargs)


def run_config_to_dict(cfg: RunConfig) -> dict:
    """Full YAML-serializable view, including every tunable constant."""
    out = {
        "mode": cfg.mode,
        "selector": cfg.selector,
        "runtime_source": cfg.runtime_source,
        "seed_bank": cfg.seed_bank,
        "seeds": list(cfg.seeds),
        "episode_steps": cfg.episode_steps,
        "horizon_s": cfg.horizon_s,
        "roles_enabled": list(cfg.roles_enabled),
        "balance": cfg.balance,
        "retain_n": cfg.retain_n,
        "env": cfg.env.to_dict(),
        "risk": {
            "risk_weights": list(cfg.risk.risk_weights),
            "risk_thresholds": list(cfg.risk.risk_thresholds),
            "adverse_gap_mult": cfg.risk.adverse_gap_mult,
            "adverse_ttc_mult": cfg.risk.adverse_ttc_mult,
            "kappa_speed_weight": cfg.risk.kappa_speed_weight,
            "kappa_gap_weight": cfg.risk.kappa_gap_weight,
            "beta_front_decel": cfg.risk.beta_front_decel,
            "beta_rear_rush_ms": cfg.risk.beta_rear_rush_ms,
            "beta_cutin_gap_factor": cfg.risk.beta_cutin_gap_factor,
            "adjacent_range_m": cfg.risk.adjacent_range_m,
            "alpha_variants": cfg.risk.alpha_variants,
            "actor_budget": cfg.risk.actor_budget,
            "comfort_accel_norm": cfg.risk.comfort_accel_norm,
            "lane_change_comfort": cfg.risk.lane_change_comfort,
            "unc_alpha_nominal": cfg.risk.unc_alpha_nominal,
            "unc_alpha_adverse": cfg.risk.unc_alpha_adverse,
            "unc_beta": cfg.risk.unc_beta,
            "unc_gamma": cfg.risk.unc_gamma,
            "sentinel": cfg.risk.sentinel,
            "hazard_penalties": {
                name: dataclasses.asdict(pen)
                for name, pen in sorted(cfg.risk.hazard_penalties.items())
            },
        },
        "scoring": dataclasses.asdict(cfg.scoring),
        "drift": dataclasses.asdict(cfg.drift),
        "latency": dataclasses.asdict(cfg.latency),
        "endpoint": None if cfg.endpoint is None else dataclasses.asdict(cfg.endpoint),
    }
    return out


def write_default_config(path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(run_config_to_dict(RunConfig()),
                                         sort_keys=True))
