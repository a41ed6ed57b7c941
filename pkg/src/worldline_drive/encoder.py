"""Compact symbolic planner state extracted from the live simulator scene.

The planner never sees raw simulator objects: it receives an ego summary, the
nearest retained neighbors with relative kinematics, and action metadata
(feasible set, fallback, speed band). Encoding is a pure function of the
scene, so repeated calls on the same state are identical.
"""

from __future__ import annotations

from dataclasses import dataclass

from .actions import ACTION_IDS, FASTER, IDLE, LANE_LEFT, LANE_RIGHT, SLOWER, token_for_id
from .sim import SimState, measure_observables

#: Constant-acceleration proxies attached to candidate actions (m/s^2).
DEFAULT_ACCEL_PROXIES = {
    LANE_LEFT: 0.0,
    IDLE: 0.0,
    LANE_RIGHT: 0.0,
    FASTER: 2.0,
    SLOWER: -2.0,
}

#: Hard-safety floors mirrored from the runtime arbiter; the encoder marks
#: IDLE unsafe (and falls back to SLOWER) when the live scene is within
#: ``fallback_margin`` times these floors.
DEFAULT_GAP_FLOOR_M = 2.0
DEFAULT_TTC_FLOOR_S = 1.0
DEFAULT_FALLBACK_MARGIN = 2.0


@dataclass(frozen=True)
class NeighborVehicle:
    """One retained traffic participant, relative to the ego."""

    id: int
    lane: int
    rel_pos_m: float      # signed, positive = ahead of ego
    rel_speed_ms: float   # signed, vehicle speed minus ego speed
    gap_m: float          # bumper-to-bumper, >= 0
    speed_ms: float


@dataclass(frozen=True)
class EgoSummary:
    lane: int
    speed_ms: float
    pos_m: float


@dataclass(frozen=True)
class StateMeta:
    lane_count: int
    feasible_action_ids: tuple[int, ...]
    fallback_action_id: int
    step: int
    speed_band_kmh: tuple[float, float]


@dataclass(frozen=True)
class CandidateAction:
    action_id: int
    token: str
    target_lane: int | None
    accel_proxy: float

    def __post_init__(self) -> None:
        is_lane_change = self.token in (LANE_LEFT, LANE_RIGHT)
        if is_lane_change != (self.target_lane is not None):
            raise ValueError("target_lane present iff the action is a lane change")


@dataclass(frozen=True)
class CompactState:
    ego: EgoSummary
    neighbors: tuple[NeighborVehicle, ...]
    meta: StateMeta

    def to_dict(self) -> dict:
        return {
            "ego": {"lane": self.ego.lane, "speed_ms": self.ego.speed_ms,
                    "pos_m": self.ego.pos_m},
            "neighbors": [
                {"id": n.id, "lane": n.lane, "rel_pos_m": n.rel_pos_m,
                 "rel_speed_ms": n.rel_speed_ms, "gap_m": n.gap_m,
                 "speed_ms": n.speed_ms}
                for n in self.neighbors
            ],
            "meta": {
                "lane_count": self.meta.lane_count,
                "feasible_action_ids": list(self.meta.feasible_action_ids),
                "fallback_action_id": self.meta.fallback_action_id,
                "step": self.meta.step,
                "speed_band_kmh": list(self.meta.speed_band_kmh),
            },
        }


def _feasible_ids(lane: int, lane_count: int) -> tuple[int, ...]:
    ids = []
    if lane > 0:
        ids.append(ACTION_IDS[LANE_LEFT])
    ids.append(ACTION_IDS[IDLE])
    if lane < lane_count - 1:
        ids.append(ACTION_IDS[LANE_RIGHT])
    ids.append(ACTION_IDS[FASTER])
    ids.append(ACTION_IDS[SLOWER])
    return tuple(sorted(ids))


def encode_state(sim: SimState, retain_n: int = 6, *,
                 gap_floor_m: float = DEFAULT_GAP_FLOOR_M,
                 ttc_floor_s: float = DEFAULT_TTC_FLOOR_S,
                 fallback_margin: float = DEFAULT_FALLBACK_MARGIN) -> CompactState:
    """Summarize a live scene into the planner-facing compact state.

    Retains the ``retain_n`` nearest vehicles by absolute longitudinal
    distance (ties broken by vehicle id), sorted nearest first. The fallback
    action is IDLE unless the ego-lane front gap or min TTC sits within the
    margin-scaled hard-safety floors, in which case it is SLOWER.
    """
    if sim.collided:
        raise ValueError("cannot encode a collided scene")
    if retain_n < 0:
        raise ValueError("retain_n must be >= 0")

    cfg = sim.config
    ego = sim.ego
    ranked = sorted(sim.traffic, key=lambda v: (abs(v.pos_m - ego.pos_m), v.id))
    neighbors = []
    for vehicle in ranked[:retain_n]:
        rel = vehicle.pos_m - ego.pos_m
        neighbors.append(NeighborVehicle(
            id=vehicle.id,
            lane=vehicle.lane,
            rel_pos_m=rel,
            rel_speed_ms=vehicle.speed_ms - ego.speed_ms,
            gap_m=max(abs(rel) - cfg.vehicle_length_m, 0.0),
            speed_ms=vehicle.speed_ms,
        ))

    front_gap, _, min_ttc = measure_observables(sim, ego.lane)
    idle_unsafe = (front_gap < fallback_margin * gap_floor_m
                   or min_ttc < fallback_margin * ttc_floor_s)
    fallback_id = ACTION_IDS[SLOWER] if idle_unsafe else ACTION_IDS[IDLE]

    meta = StateMeta(
        lane_count=cfg.lane_count,
        feasible_action_ids=_feasible_ids(ego.lane, cfg.lane_count),
        fallback_action_id=fallback_id,
        step=sim.step_index,
        speed_band_kmh=cfg.speed_profile.target_band_kmh,
    )
    return CompactState(
        ego=EgoSummary(lane=ego.lane, speed_ms=ego.speed_ms, pos_m=ego.pos_m),
        neighbors=tuple(neighbors),
        meta=meta,
    )


def feasible_actions(state: CompactState,
                     accel_proxies: dict[str, float] | None = None) -> list[CandidateAction]:
    """Materialize the feasible candidate set, ordered by action ID."""
    proxies = DEFAULT_ACCEL_PROXIES if accel_proxies is None else accel_proxies
    lane = state.ego.lane
    out = []
    for action_id in state.meta.feasible_action_ids:
        token = token_for_id(action_id)
        if token == LANE_LEFT:
            target: int | None = lane - 1
        elif token == LANE_RIGHT:
            target = lane + 1
        else:
            target = None
        out.append(CandidateAction(action_id=action_id, token=token,
                                   target_lane=target, accel_proxy=proxies[token]))
    return out
