"""Seeded kinematic highway simulator: IDM traffic, discrete ego meta-actions.

Three straight lanes by default. Surrounding vehicles follow the Intelligent
Driver Model in their spawn lane; the ego vehicle tracks a discrete
target-speed / target-lane pair with a proportional controller. One policy
decision advances ``sim_hz / policy_hz`` fixed substeps. Every floating-point
update runs in a fixed order, so identical (seed, config, action sequence)
inputs reproduce bit-identical trajectories.

Lane centers sit at ``lane * lane_width_m`` laterally. Collision is a
rectangle-overlap predicate: center distance below one vehicle length
longitudinally and below one vehicle width laterally (lane transits expose
partial lateral overlap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .actions import ACTION_IDS, ACTION_TOKENS, FASTER, LANE_LEFT, LANE_RIGHT, SLOWER


class SpawnError(RuntimeError):
    """Traffic could not be placed without violating the minimum spawn gap."""


class InfeasibleActionError(ValueError):
    """A lane action was requested past the road edge, or the token is unknown.

    Feasibility filtering is the state encoder's job; reaching this error
    indicates a caller bug.
    """


@dataclass(frozen=True)
class IdmParams:
    desired_speed_ms: float = 25.0
    time_headway_s: float = 1.5
    min_gap_m: float = 2.0
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    exponent: float = 4.0


@dataclass(frozen=True)
class SpeedProfile:
    target_band_kmh: tuple[float, float] = (0.0, 130.0)
    reward_band_kmh: tuple[float, float] = (80.0, 130.0)


@dataclass(frozen=True)
class EnvConfig:
    """Environment and episode parameters plus controller/spawn tuning."""

    lane_count: int = 3
    traffic_count: int = 20
    sim_hz: int = 5
    policy_hz: int = 1
    episode_steps: int = 20
    lane_width_m: float = 4.0
    vehicle_length_m: float = 5.0
    vehicle_width_m: float = 2.0
    speed_profile: SpeedProfile = field(default_factory=SpeedProfile)
    idm: IdmParams = field(default_factory=IdmParams)
    # Discrete target-speed ladder stepped by FASTER/SLOWER.
    speed_step_ms: float = 5.0
    speed_ladder_max_ms: float = 30.0
    # Proportional ego controller.
    ctrl_gain: float = 1.5
    ctrl_accel_limit: float = 3.0
    ctrl_brake_limit: float = 5.0
    # Seeded spawn layout.
    spawn_min_gap_m: float = 12.0
    spawn_back_m: float = 150.0
    spawn_ahead_m: float = 250.0
    spawn_speed_frac: tuple[float, float] = (0.6, 1.0)
    #: Gap/TTC value reported when no vehicle (or no closing pair) exists.
    observable_sentinel: float = 1000.0

    def __post_init__(self) -> None:
        if self.lane_count < 2:
            raise ValueError("lane_count must be >= 2")
        if self.policy_hz <= 0 or self.sim_hz % self.policy_hz != 0:
            raise ValueError("sim_hz must be a positive integer multiple of policy_hz")
        for name in ("lane_width_m", "vehicle_length_m", "vehicle_width_m"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.traffic_count < 0 or self.episode_steps <= 0:
            raise ValueError("traffic_count must be >= 0 and episode_steps > 0")

    @property
    def substeps_per_decision(self) -> int:
        return self.sim_hz // self.policy_hz

    @property
    def substep_dt(self) -> float:
        return 1.0 / self.sim_hz

    @property
    def band_max_ms(self) -> float:
        return self.speed_profile.target_band_kmh[1] / 3.6

    def to_dict(self) -> dict:
        return {
            "lane_count": self.lane_count,
            "traffic_count": self.traffic_count,
            "sim_hz": self.sim_hz,
            "policy_hz": self.policy_hz,
            "episode_steps": self.episode_steps,
            "lane_width_m": self.lane_width_m,
            "vehicle_length_m": self.vehicle_length_m,
            "vehicle_width_m": self.vehicle_width_m,
            "speed_profile": {
                "target_band_kmh": list(self.speed_profile.target_band_kmh),
                "reward_band_kmh": list(self.speed_profile.reward_band_kmh),
            },
            "idm": {
                "desired_speed_ms": self.idm.desired_speed_ms,
                "time_headway_s": self.idm.time_headway_s,
                "min_gap_m": self.idm.min_gap_m,
                "max_accel": self.idm.max_accel,
                "comfort_decel": self.idm.comfort_decel,
                "exponent": self.idm.exponent,
            },
            "speed_step_ms": self.speed_step_ms,
            "speed_ladder_max_ms": self.speed_ladder_max_ms,
            "ctrl_gain": self.ctrl_gain,
            "ctrl_accel_limit": self.ctrl_accel_limit,
            "ctrl_brake_limit": self.ctrl_brake_limit,
            "spawn_min_gap_m": self.spawn_min_gap_m,
            "spawn_back_m": self.spawn_back_m,
            "spawn_ahead_m": self.spawn_ahead_m,
            "spawn_speed_frac": list(self.spawn_speed_frac),
            "observable_sentinel": self.observable_sentinel,
        }


@dataclass
class EgoState:
    lane: int
    pos_m: float
    speed_ms: float
    target_speed_ms: float
    target_lane: int
    lateral_m: float

    def copy(self) -> "EgoState":
        return EgoState(self.lane, self.pos_m, self.speed_ms,
                        self.target_speed_ms, self.target_lane, self.lateral_m)


@dataclass
class TrafficVehicle:
    id: int
    lane: int
    pos_m: float
    speed_ms: float

    def copy(self) -> "TrafficVehicle":
        return TrafficVehicle(self.id, self.lane, self.pos_m, self.speed_ms)


@dataclass
class SimState:
    """Full live scene: ego, traffic, and episode bookkeeping.

    Treated as an immutable value by convention: :func:`step_decision` returns
    a fresh state and never mutates its input. ``collided`` is monotone within
    an episode.
    """

    step_index: int
    sim_time_s: float
    ego: EgoState
    traffic: list[TrafficVehicle]
    rng_state: dict
    collided: bool
    config: EnvConfig

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "sim_time_s": self.sim_time_s,
            "ego": {
                "lane": self.ego.lane,
                "pos_m": self.ego.pos_m,
                "speed_ms": self.ego.speed_ms,
                "target_speed_ms": self.ego.target_speed_ms,
                "target_lane": self.ego.target_lane,
                "lateral_m": self.ego.lateral_m,
            },
            "traffic": [
                {"id": v.id, "lane": v.lane, "pos_m": v.pos_m, "speed_ms": v.speed_ms}
                for v in self.traffic
            ],
            "rng_state": self.rng_state,
            "collided": self.collided,
            "config": self.config.to_dict(),
        }


@dataclass
class StepOutcome:
    new_state: SimState
    collision: bool
    ego_speed_kmh: float
    #: One snapshot per substep; length is always sim_hz / policy_hz.
    trace: list[dict]


def init_episode(seed: int, config: EnvConfig) -> SimState:
    """Place the ego mid-lane and spawn seeded IDM traffic without overlaps.

    Identical (seed, config) pairs produce bit-identical states. Raises
    :class:`SpawnError` when traffic_count vehicles cannot be placed with
    pairwise same-lane center distances of at least ``spawn_min_gap_m``.
    """
    rng = np.random.default_rng(seed)
    mid_lane = config.lane_count // 2
    ego = EgoState(
        lane=mid_lane,
        pos_m=0.0,
        speed_ms=25.0,
        target_speed_ms=25.0,
        target_lane=mid_lane,
        lateral_m=mid_lane * config.lane_width_m,
    )

    traffic: list[TrafficVehicle] = []
    lo_frac, hi_frac = config.spawn_speed_frac
    for vid in range(config.traffic_count):
        placed = False
        for _ in range(200):
            lane = int(rng.integers(0, config.lane_count))
            pos = float(rng.uniform(-config.spawn_back_m, config.spawn_ahead_m))
            occupied = [v.pos_m for v in traffic if v.lane == lane]
            if lane == ego.lane:
                occupied.append(ego.pos_m)
            if all(abs(pos - other) >= config.spawn_min_gap_m for other in occupied):
                speed = float(rng.uniform(lo_frac, hi_frac) * config.idm.desired_speed_ms)
                traffic.append(TrafficVehicle(id=vid, lane=lane, pos_m=pos, speed_ms=speed))
                placed = True
                break
        if not placed:
            raise SpawnError(
                f"could not place vehicle {vid} of {config.traffic_count}; "
                "traffic too dense for the spawn window"
            )

    return SimState(
        step_index=0,
        sim_time_s=0.0,
        ego=ego,
        traffic=traffic,
        rng_state=rng.bit_generator.state,
        collided=False,
        config=config,
    )


def _idm_accel(vehicle: TrafficVehicle, leader_pos: float | None,
               leader_speed: float, cfg: EnvConfig) -> float:
    p = cfg.idm
    v = vehicle.speed_ms
    free = 1.0 - (v / p.desired_speed_ms) ** p.exponent
    if leader_pos is None:
        accel = p.max_accel * free
    else:
        gap = max(leader_pos - vehicle.pos_m - cfg.vehicle_length_m, 0.1)
        dv = v - leader_speed
        s_star = p.min_gap_m + v * p.time_headway_s + \
            v * dv / (2.0 * math.sqrt(p.max_accel * p.comfort_decel))
        accel = p.max_accel * (free - (s_star / gap) ** 2)
    # Emergency braking is allowed up to twice the comfortable deceleration.
    return min(max(accel, -2.0 * p.comfort_decel), p.max_accel)


def _leader_of(vehicle: TrafficVehicle, state: SimState) -> tuple[float | None, float]:
    best_pos: float | None = None
    best_speed = 0.0
    for other in state.traffic:
        if other.id == vehicle.id or other.lane != vehicle.lane:
            continue
        if other.pos_m > vehicle.pos_m and (best_pos is None or other.pos_m < best_pos):
            best_pos, best_speed = other.pos_m, other.speed_ms
    ego = state.ego
    if ego.lane == vehicle.lane and ego.pos_m > vehicle.pos_m:
        if best_pos is None or ego.pos_m < best_pos:
            best_pos, best_speed = ego.pos_m, ego.speed_ms
    return best_pos, best_speed


def _apply_action(state: SimState, token: str) -> tuple[float, int]:
    """Resolve an action token into (new target speed, new target lane)."""
    cfg = state.config
    ego = state.ego
    target_speed = ego.target_speed_ms
    target_lane = ego.target_lane
    if token == FASTER:
        target_speed = min(target_speed + cfg.speed_step_ms,
                           cfg.speed_ladder_max_ms, cfg.band_max_ms)
    elif token == SLOWER:
        target_speed = max(target_speed - cfg.speed_step_ms, 0.0)
    elif token == LANE_LEFT:
        if ego.lane == 0:
            raise InfeasibleActionError("LANE_LEFT from leftmost lane")
        target_lane = ego.lane - 1
    elif token == LANE_RIGHT:
        if ego.lane == cfg.lane_count - 1:
            raise InfeasibleActionError("LANE_RIGHT from rightmost lane")
        target_lane = ego.lane + 1
    return target_speed, target_lane


def step_decision(state: SimState, action: str | int) -> StepOutcome:
    """Advance one policy decision: one ego action, substeps of physics.

    ``action`` is a primitive token or its action ID. The collision flag is
    true iff any substep satisfies the rectangle-overlap predicate; the trace
    carries one snapshot per substep regardless.
    """
    if state.collided:
        raise ValueError("episode already ended in a collision")
    token = ACTION_TOKENS[action] if isinstance(action, int) else action
    if token not in ACTION_IDS:
        raise InfeasibleActionError(f"unknown action token {token!r}")

    cfg = state.config
    target_speed, target_lane = _apply_action(state, token)

    ego = state.ego.copy()
    ego.target_speed_ms = target_speed
    ego.target_lane = target_lane
    work = SimState(state.step_index, state.sim_time_s, ego,
                    [v.copy() for v in state.traffic],
                    state.rng_state, False, cfg)

    dt = cfg.substep_dt
    lateral_rate = cfg.lane_width_m * cfg.policy_hz  # full change in one decision
    collided = False
    trace: list[dict] = []
    speed_sum = 0.0

    for sub in range(cfg.substeps_per_decision):
        # Accelerations from the synchronous pre-substep snapshot.
        accels = []
        for vehicle in work.traffic:
            leader_pos, leader_speed = _leader_of(vehicle, work)
            accels.append(_idm_accel(vehicle, leader_pos, leader_speed, cfg))
        ego_accel = min(max(cfg.ctrl_gain * (ego.target_speed_ms - ego.speed_ms),
                            -cfg.ctrl_brake_limit), cfg.ctrl_accel_limit)

        for vehicle, accel in zip(work.traffic, accels):
            vehicle.speed_ms = max(vehicle.speed_ms + accel * dt, 0.0)
            vehicle.pos_m += vehicle.speed_ms * dt
        ego.speed_ms = max(ego.speed_ms + ego_accel * dt, 0.0)
        ego.pos_m += ego.speed_ms * dt

        target_lateral = ego.target_lane * cfg.lane_width_m
        shift = target_lateral - ego.lateral_m
        max_shift = lateral_rate * dt
        ego.lateral_m += min(max(shift, -max_shift), max_shift)
        ego.lane = min(max(int(round(ego.lateral_m / cfg.lane_width_m)), 0),
                       cfg.lane_count - 1)

        for vehicle in work.traffic:
            lon = abs(vehicle.pos_m - ego.pos_m)
            lat = abs(vehicle.lane * cfg.lane_width_m - ego.lateral_m)
            if lon < cfg.vehicle_length_m and lat < cfg.vehicle_width_m:
                collided = True

        speed_sum += ego.speed_ms
        trace.append({
            "sub": sub,
            "ego": {
                "lane": ego.lane,
                "pos_m": ego.pos_m,
                "speed_ms": ego.speed_ms,
                "lateral_m": ego.lateral_m,
            },
            "traffic": [[v.id, v.lane, v.pos_m, v.speed_ms] for v in work.traffic],
            "collided": collided,
        })

    substeps = cfg.substeps_per_decision
    new_state = SimState(
        step_index=state.step_index + 1,
        sim_time_s=state.sim_time_s + substeps * dt,
        ego=ego,
        traffic=work.traffic,
        rng_state=state.rng_state,
        collided=collided,
        config=cfg,
    )
    return StepOutcome(
        new_state=new_state,
        collision=collided,
        ego_speed_kmh=(speed_sum / substeps) * 3.6,
        trace=trace,
    )


def measure_observables(state: SimState, lane: int) -> tuple[float, float, float]:
    """(front gap, rear gap, min TTC) for the ego against vehicles in ``lane``.

    Gaps are bumper-to-bumper center distances minus one vehicle length,
    clamped nonnegative. Min TTC scans closing pairs in the ego's own lane and
    in ``lane``; a missing vehicle or a non-closing pair yields the configured
    sentinel. Results never exceed the sentinel and are never negative.
    """
    cfg = state.config
    if not 0 <= lane < cfg.lane_count:
        raise ValueError(f"lane {lane} out of range")
    sentinel = cfg.observable_sentinel
    length = cfg.vehicle_length_m
    ego = state.ego

    front_gap = sentinel
    rear_gap = sentinel
    for vehicle in state.traffic:
        if vehicle.lane != lane:
            continue
        delta = vehicle.pos_m - ego.pos_m
        gap = max(abs(delta) - length, 0.0)
        if delta >= 0.0:
            front_gap = min(front_gap, gap)
        else:
            rear_gap = min(rear_gap, gap)

    min_ttc = sentinel
    lanes = {ego.lane, lane}
    for vehicle in state.traffic:
        if vehicle.lane not in lanes:
            continue
        delta = vehicle.pos_m - ego.pos_m
        gap = max(abs(delta) - length, 0.0)
        closing = (ego.speed_ms - vehicle.speed_ms) if delta >= 0.0 \
            else (vehicle.speed_ms - ego.speed_ms)
        if closing > 1e-12:
            min_ttc = min(min_ttc, gap / closing)

    return front_gap, rear_gap, min(min_ttc, sentinel)
