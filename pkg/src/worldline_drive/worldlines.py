"""Bounded role-typed world-line generation.

A world line is an action-conditioned short-horizon future of the ego scene,
typed by its uncertainty source:

* ``alpha``: nominal constant-acceleration ego rollout, plus bounded adverse
  variants of the same action;
* ``beta``: one critical neighboring actor stressed at a time (lead braking
  hard, rear rushing, adjacent cutting in) while the primitive action is
  preserved;
* ``gamma``: one hazard sampled from a closed pool, applied as a fixed
  penalty tuple.

For each feasible action the generator emits at most
``n_alpha + actor_budget + 1`` branches, so the full set is bounded by
``len(actions) * (n_alpha + actor_budget + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import CandidateAction, CompactState, NeighborVehicle

ROLE_ALPHA = "alpha"
ROLE_BETA = "beta"
ROLE_GAMMA = "gamma"
ROLES = (ROLE_ALPHA, ROLE_BETA, ROLE_GAMMA)

ACTOR_FRONT_LEAD = "front_lead"
ACTOR_REAR = "rear_vehicle"
ACTOR_ADJACENT = "adjacent_vehicle"

#: Closed hazard pool, fixed order (grounded highway hazards first, then
#: abstract stressors).
HAZARD_POOL = (
    "sudden_front_braking",
    "rear_aggression",
    "adjacent_cut_in",
    "blocked_lane",
    "low_clearance_corridor",
    "unexpected_obstacle",
    "visibility_degradation",
)


@dataclass(frozen=True)
class HazardPenalty:
    """Fixed penalty tuple a hazard applies to (gap, TTC, risk, comfort, uncertainty)."""

    gap_mult: float
    ttc_mult: float
    risk_add: float
    comfort_add: float
    uncertainty_add: float


def _default_hazard_penalties() -> dict[str, HazardPenalty]:
    return {
        "sudden_front_braking": HazardPenalty(0.5, 0.4, 0.25, 0.20, 0.15),
        "rear_aggression": HazardPenalty(0.8, 0.6, 0.20, 0.15, 0.15),
        "adjacent_cut_in": HazardPenalty(0.5, 0.5, 0.25, 0.20, 0.20),
        "blocked_lane": HazardPenalty(0.4, 0.5, 0.30, 0.30, 0.20),
        "low_clearance_corridor": HazardPenalty(0.6, 0.7, 0.20, 0.25, 0.15),
        "unexpected_obstacle": HazardPenalty(0.45, 0.45, 0.30, 0.25, 0.25),
        "visibility_degradation": HazardPenalty(0.75, 0.7, 0.15, 0.10, 0.30),
    }


@dataclass(frozen=True)
class RiskConfig:
    """Every tunable constant of branch generation, overridable from the config file."""

    # Collision-risk proxy: weights and deficit thresholds over (TTC, front gap, rear gap).
    risk_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    risk_thresholds: tuple[float, float, float] = (3.0, 15.0, 8.0)
    # Adverse alpha variant: bounded gap/TTC reductions.
    adverse_gap_mult: float = 0.7
    adverse_ttc_mult: float = 0.7
    # Critical-actor score coefficients (relative-speed term, inverse-gap term).
    kappa_speed_weight: float = 0.5
    kappa_gap_weight: float = 10.0
    # Beta stress magnitudes.
    beta_front_decel: float = 4.0
    beta_rear_rush_ms: float = 4.0
    beta_cutin_gap_factor: float = 0.5
    adjacent_range_m: float = 30.0
    # Budgets.
    alpha_variants: int = 2
    actor_budget: int = 2
    # A lane change whose target lane holds a vehicle within this bumper gap
    # is an immediate merge conflict (branch TTC zero).
    merge_conflict_gap_m: float = 2.0
    # Comfort and role-base uncertainty.
    comfort_accel_norm: float = 2.0
    lane_change_comfort: float = 0.3
    unc_alpha_nominal: float = 0.0
    unc_alpha_adverse: float = 0.2
    unc_beta: float = 0.35
    unc_gamma: float = 0.5
    #: Gap/TTC stand-in when no vehicle or closing pair exists.
    sentinel: float = 1000.0
    hazard_penalties: dict[str, HazardPenalty] = field(default_factory=_default_hazard_penalties)

    def __post_init__(self) -> None:
        if any(w < 0 for w in self.risk_weights):
            raise ValueError("risk weights must be >= 0")
        if any(t <= 0 for t in self.risk_thresholds):
            raise ValueError("risk thresholds must be > 0")
        for mult in (self.adverse_gap_mult, self.adverse_ttc_mult):
            if not 0.0 < mult <= 1.0:
                raise ValueError("adverse multipliers must lie in (0, 1]")
        if self.alpha_variants < 1:
            raise ValueError("alpha_variants must be >= 1")
        if self.actor_budget < 0:
            raise ValueError("actor_budget must be >= 0")
        missing = set(HAZARD_POOL) - set(self.hazard_penalties)
        if missing:
            raise ValueError(f"hazard penalties missing for {sorted(missing)}")


@dataclass(frozen=True)
class WorldLineBranch:
    branch_id: str
    role: str
    variant: str  # nominal | adverse | actor_stress | hazard_stress
    action: CandidateAction
    horizon_s: float
    predicted_lane: int
    predicted_speed_ms: float
    predicted_progress_m: float
    front_gap_m: float
    rear_gap_m: float
    min_ttc_s: float
    collision_risk: float
    comfort_penalty: float
    uncertainty: float
    role_tags: tuple[str, ...]
    hazard_tags: tuple[str, ...]
    critical_actor_id: int | None
    summary: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.collision_risk <= 1.0:
            raise ValueError("collision_risk must lie in [0, 1]")
        if not 0.0 <= self.uncertainty <= 1.0:
            raise ValueError("uncertainty must lie in [0, 1]")
        if min(self.front_gap_m, self.rear_gap_m, self.min_ttc_s) < 0.0:
            raise ValueError("gaps and TTC must be >= 0")
        if (self.critical_actor_id is not None) != (self.role == ROLE_BETA):
            raise ValueError("critical_actor_id present iff role is beta")
        if bool(self.hazard_tags) != (self.role == ROLE_GAMMA):
            raise ValueError("hazard_tags non-empty iff role is gamma")

    def to_dict(self) -> dict:
        return {
            "branch_id": self.branch_id,
            "role": self.role,
            "variant": self.variant,
            "action_id": self.action.action_id,
            "action": self.action.token,
            "horizon_s": self.horizon_s,
            "predicted_lane": self.predicted_lane,
            "predicted_speed_ms": self.predicted_speed_ms,
            "predicted_progress_m": self.predicted_progress_m,
            "front_gap_m": self.front_gap_m,
            "rear_gap_m": self.rear_gap_m,
            "min_ttc_s": self.min_ttc_s,
            "collision_risk": self.collision_risk,
            "comfort_penalty": self.comfort_penalty,
            "uncertainty": self.uncertainty,
            "role_tags": list(self.role_tags),
            "hazard_tags": list(self.hazard_tags),
            "critical_actor_id": self.critical_actor_id,
            "summary": self.summary,
        }


@dataclass(frozen=True)
class BranchSet:
    horizon_s: float
    branches: tuple[WorldLineBranch, ...]

    def __len__(self) -> int:
        return len(self.branches)

    def __iter__(self):
        return iter(self.branches)

    def to_jsonable(self) -> list[dict]:
        return [b.to_dict() for b in self.branches]


def collision_risk(min_ttc_s: float, front_gap_m: float, rear_gap_m: float,
                   cfg: RiskConfig) -> float:
    """Hinge-deficit risk proxy over (TTC, front gap, rear gap), clipped to [0, 1]."""
    if min(min_ttc_s, front_gap_m, rear_gap_m) < 0.0:
        raise ValueError("risk inputs must be >= 0")
    total = 0.0
    for weight, threshold, value in zip(cfg.risk_weights, cfg.risk_thresholds,
                                        (min_ttc_s, front_gap_m, rear_gap_m)):
        total += weight * max(threshold - value, 0.0) / threshold
    return min(total, 1.0)


def _branch_observables(state: CompactState, lane: int, ego_speed_eff: float,
                        cfg: RiskConfig) -> tuple[float, float, float]:
    """Front gap, rear gap, and min TTC in ``lane`` from the retained neighbors.

    Gaps mirror the simulator's current-scene measurement over the compact
    view. TTC is action-conditioned: closing speeds use ``ego_speed_eff``, the
    ego's mean speed over the branch horizon, so braking branches read safer
    and accelerating branches riskier against the same scene. A lane change
    whose target lane holds a vehicle inside the merge-conflict gap reads as
    an immediate conflict (TTC zero).
    """
    sentinel = cfg.sentinel
    front_gap = sentinel
    rear_gap = sentinel
    for nb in state.neighbors:
        if nb.lane != lane:
            continue
        if nb.rel_pos_m >= 0.0:
            front_gap = min(front_gap, nb.gap_m)
        else:
            rear_gap = min(rear_gap, nb.gap_m)

    min_ttc = sentinel
    lanes = {state.ego.lane, lane}
    for nb in state.neighbors:
        if nb.lane not in lanes:
            continue
        closing = (ego_speed_eff - nb.speed_ms) if nb.rel_pos_m >= 0.0 \
            else (nb.speed_ms - ego_speed_eff)
        if closing > 1e-12:
            min_ttc = min(min_ttc, nb.gap_m / closing)
    if lane != state.ego.lane:
        conflicted = any(nb.lane == lane and nb.gap_m < cfg.merge_conflict_gap_m
                         for nb in state.neighbors)
        if conflicted:
            min_ttc = 0.0
    return front_gap, rear_gap, min(min_ttc, sentinel)


def _comfort(action: CandidateAction, cfg: RiskConfig) -> float:
    penalty = abs(action.accel_proxy) / cfg.comfort_accel_norm
    if action.target_lane is not None:
        penalty += cfg.lane_change_comfort
    return penalty


def _summary(role: str, action: CandidateAction, front_gap: float,
             min_ttc: float, risk: float) -> str:
    return f"{role}/{action.token}/gf={front_gap:.1f}/ttc={min_ttc:.1f}/r={risk:.2f}"


def rollout_alpha(state: CompactState, action: CandidateAction, horizon_s: float,
                  cfg: RiskConfig) -> list[WorldLineBranch]:
    """Nominal ego rollout plus ``alpha_variants - 1`` adverse variants.

    The nominal branch rolls constant-acceleration kinematics over the
    horizon and measures gaps/TTC in the action's target lane. Adverse
    variants keep the primitive action but shrink gaps and TTC by the
    configured multipliers (compounded per variant level) before re-scoring
    risk, so adverse risk is never below nominal.
    """
    ego = state.ego
    accel = action.accel_proxy
    v_hat = max(ego.speed_ms + accel * horizon_s, 0.0)
    p_hat = max(ego.speed_ms * horizon_s + 0.5 * accel * horizon_s ** 2, 0.0)
    target_lane = action.target_lane if action.target_lane is not None else ego.lane
    v_eff = 0.5 * (ego.speed_ms + v_hat)
    front_gap, rear_gap, min_ttc = _branch_observables(state, target_lane, v_eff, cfg)
    comfort = _comfort(action, cfg)

    branches = []
    for level in range(cfg.alpha_variants):
        gap_mult = cfg.adverse_gap_mult ** level
        ttc_mult = cfg.adverse_ttc_mult ** level
        g_f = front_gap * gap_mult
        g_r = rear_gap * gap_mult
        ttc = min_ttc * ttc_mult
        risk = collision_risk(ttc, g_f, g_r, cfg)
        nominal = level == 0
        branches.append(WorldLineBranch(
            branch_id=f"a{action.action_id}-alpha-" + ("nom" if nominal else f"adv{level}"),
            role=ROLE_ALPHA,
            variant="nominal" if nominal else "adverse",
            action=action,
            horizon_s=horizon_s,
            predicted_lane=target_lane,
            predicted_speed_ms=v_hat,
            predicted_progress_m=p_hat,
            front_gap_m=g_f,
            rear_gap_m=g_r,
            min_ttc_s=ttc,
            collision_risk=risk,
            comfort_penalty=comfort,
            uncertainty=cfg.unc_alpha_nominal if nominal else cfg.unc_alpha_adverse,
            role_tags=(ROLE_ALPHA,),
            hazard_tags=(),
            critical_actor_id=None,
            summary=_summary(ROLE_ALPHA, action, g_f, ttc, risk),
        ))
    return branches


def _actor_role(nb: NeighborVehicle, state: CompactState, action: CandidateAction,
                cfg: RiskConfig) -> str | None:
    """Geometric eligibility of a neighbor for the given action.

    Vehicles in the action's primary lane (the target lane for lane changes,
    the ego lane otherwise) act as lead or rear actors. Remaining close
    vehicles in lanes adjacent to the primary lane act as adjacent actors.
    """
    primary = action.target_lane if action.target_lane is not None else state.ego.lane
    if nb.lane == primary:
        return ACTOR_FRONT_LEAD if nb.rel_pos_m >= 0.0 else ACTOR_REAR
    if abs(nb.lane - primary) == 1 and abs(nb.rel_pos_m) <= cfg.adjacent_range_m:
        return ACTOR_ADJACENT
    return None


def rank_critical_actors(state: CompactState, action: CandidateAction, budget: int,
                         cfg: RiskConfig | None = None) -> list[tuple[NeighborVehicle, str]]:
    """Top-``budget`` eligible neighbors by the deterministic criticality score.

    Score combines absolute relative speed and inverse gap; ineligible
    neighbors score zero and are dropped. Ties break by actor id ascending.
    """
    cfg = cfg or RiskConfig()
    if budget < 0:
        raise ValueError("budget must be >= 0")
    scored = []
    for nb in state.neighbors:
        role = _actor_role(nb, state, action, cfg)
        if role is None:
            continue
        kappa = (cfg.kappa_speed_weight * abs(nb.rel_speed_ms)
                 + cfg.kappa_gap_weight / max(nb.gap_m, 1.0))
        scored.append((kappa, nb, role))
    scored.sort(key=lambda item: (-item[0], item[1].id))
    return [(nb, role) for _, nb, role in scored[:budget]]


def generate_beta(state: CompactState, action: CandidateAction, horizon_s: float,
                  actors: list[tuple[NeighborVehicle, str]],
                  cfg: RiskConfig) -> list[WorldLineBranch]:
    """One stress branch per critical actor, starting from the nominal future.

    The stress is role-specific: a lead actor brakes hard (front gap and TTC
    shrink), a rear actor rushes from behind (rear closing speed rises), an
    adjacent actor cuts in ahead at a fraction of the nominal front gap. The
    primitive action is preserved and the responsible actor recorded.
    """
    nominal = rollout_alpha(state, action, horizon_s, cfg)[0]
    # Same action-conditioned ego speed the nominal future used.
    v_eff = 0.5 * (state.ego.speed_ms + nominal.predicted_speed_ms)
    branches = []
    for nb, role in actors:
        g_f, g_r, ttc = nominal.front_gap_m, nominal.rear_gap_m, nominal.min_ttc_s
        if role == ACTOR_FRONT_LEAD:
            brake_loss = 0.5 * cfg.beta_front_decel * horizon_s ** 2
            g_f = max(min(g_f, nb.gap_m) - brake_loss, 0.0)
            slowed = max(nb.speed_ms - cfg.beta_front_decel * horizon_s, 0.0)
            closing = max(v_eff - slowed, 0.0)
            stressed_ttc = g_f / closing if closing > 1e-12 else cfg.sentinel
            ttc = min(ttc, stressed_ttc)
        elif role == ACTOR_REAR:
            g_r = min(g_r, nb.gap_m)
            closing = max(nb.speed_ms + cfg.beta_rear_rush_ms - v_eff, 0.0)
            stressed_ttc = g_r / closing if closing > 1e-12 else cfg.sentinel
            ttc = min(ttc, stressed_ttc)
        else:  # adjacent cut-in
            g_f = cfg.beta_cutin_gap_factor * g_f
            closing = max(v_eff - nb.speed_ms, 0.0)
            stressed_ttc = g_f / closing if closing > 1e-12 else cfg.sentinel
            ttc = min(ttc, stressed_ttc)
        risk = collision_risk(ttc, g_f, g_r, cfg)
        branches.append(WorldLineBranch(
            branch_id=f"a{action.action_id}-beta-{nb.id}",
            role=ROLE_BETA,
            variant="actor_stress",
            action=action,
            horizon_s=horizon_s,
            predicted_lane=nominal.predicted_lane,
            predicted_speed_ms=nominal.predicted_speed_ms,
            predicted_progress_m=nominal.predicted_progress_m,
            front_gap_m=g_f,
            rear_gap_m=g_r,
            min_ttc_s=ttc,
            collision_risk=risk,
            comfort_penalty=nominal.comfort_penalty,
            uncertainty=cfg.unc_beta,
            role_tags=(ROLE_BETA, role),
            hazard_tags=(),
            critical_actor_id=nb.id,
            summary=_summary(ROLE_BETA, action, g_f, ttc, risk),
        ))
    return branches


def generate_gamma(state: CompactState, action: CandidateAction, horizon_s: float,
                   rng: np.random.Generator, cfg: RiskConfig) -> WorldLineBranch:
    """One hazard-stress branch for the action, hazard drawn from the closed pool.

    ``rng`` must be derived from (episode seed, step, action), e.g. via
    :func:`per_action_rng`, so the same coordinates always draw the same
    hazard. The hazard's penalty tuple scales gaps and TTC, adds risk before
    the [0, 1] clip, and inflates comfort and uncertainty; the hazard name is
    attached as a tag to expose the stress source.
    """
    nominal = rollout_alpha(state, action, horizon_s, cfg)[0]
    hazard = HAZARD_POOL[int(rng.integers(0, len(HAZARD_POOL)))]
    pen = cfg.hazard_penalties[hazard]
    g_f = nominal.front_gap_m * pen.gap_mult
    g_r = nominal.rear_gap_m * pen.gap_mult
    ttc = nominal.min_ttc_s * pen.ttc_mult
    risk = min(collision_risk(ttc, g_f, g_r, cfg) + pen.risk_add, 1.0)
    return WorldLineBranch(
        branch_id=f"a{action.action_id}-gamma-{hazard}",
        role=ROLE_GAMMA,
        variant="hazard_stress",
        action=action,
        horizon_s=horizon_s,
        predicted_lane=nominal.predicted_lane,
        predicted_speed_ms=nominal.predicted_speed_ms,
        predicted_progress_m=nominal.predicted_progress_m,
        front_gap_m=g_f,
        rear_gap_m=g_r,
        min_ttc_s=ttc,
        collision_risk=risk,
        comfort_penalty=nominal.comfort_penalty + pen.comfort_add,
        uncertainty=min(cfg.unc_gamma + pen.uncertainty_add, 1.0),
        role_tags=(ROLE_GAMMA,),
        hazard_tags=(hazard,),
        critical_actor_id=None,
        summary=_summary(ROLE_GAMMA, action, g_f, ttc, risk),
    )


def per_action_rng(rng: np.random.SeedSequence, action_id: int) -> np.random.Generator:
    """Child generator keyed by action ID on top of an (episode seed, step) sequence.

    Deriving per-action children keeps hazard draws stable under changes to
    the feasible-set size: the same (seed, step, action) coordinates always
    see the same stream.
    """
    entropy = rng.entropy
    if entropy is None:
        raise ValueError("seed sequence must carry explicit entropy")
    base = list(entropy) if isinstance(entropy, (list, tuple)) else [int(entropy)]
    return np.random.default_rng(np.random.SeedSequence(base + [action_id]))


def generate_all(state: CompactState, actions: list[CandidateAction], horizon_s: float,
                 roles_enabled: tuple[str, ...], rng: np.random.SeedSequence,
                 cfg: RiskConfig) -> BranchSet:
    """Full bounded branch set over the feasible actions.

    Alpha is always enabled; disabled roles contribute nothing. Branch IDs are
    unique and deterministic, and the output order is fixed (actions by ID,
    roles alpha/beta/gamma within an action).
    """
    roles = set(roles_enabled)
    if ROLE_ALPHA not in roles:
        raise ValueError("alpha role must always be enabled")
    unknown = roles - set(ROLES)
    if unknown:
        raise ValueError(f"unknown roles: {sorted(unknown)}")

    branches: list[WorldLineBranch] = []
    for action in sorted(actions, key=lambda a: a.action_id):
        branches.extend(rollout_alpha(state, action, horizon_s, cfg))
        if ROLE_BETA in roles:
            actors = rank_critical_actors(state, action, cfg.actor_budget, cfg)
            branches.extend(generate_beta(state, action, horizon_s, actors, cfg))
        if ROLE_GAMMA in roles:
            branches.append(generate_gamma(state, action, horizon_s,
                                           per_action_rng(rng, action.action_id), cfg))
    return BranchSet(horizon_s=horizon_s, branches=tuple(branches))
