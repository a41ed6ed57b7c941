"""Fast runtime supervisor over buffered strategic forecasts.

Each decision step the arbiter scores drift against the committed branch's
expectations, applies the four-way invalidation predicate (expiry, abort-atom
firing, validity-atom violation, drift breach), and resolves one constrained
tactical decision: execute the buffered action, soften a completed commit,
fall back on invalidation, or override under hard safety pressure.

Safety-reuse invariant: a buffered action is never executed at a step where
the invalidation predicate holds, and abort/validity/hard-safety checks are
independent of the authority level (authority only widens the drift band).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .actions import (ACCELERATE, ACTION_IDS, CHANGE_LEFT, CHANGE_RIGHT,
                      DECELERATE, IDLE, SLOWER, token_for_id)
from .contract import RuntimeObservables, StrategicForecast, eval_atom, with_drift
from .encoder import CandidateAction, CompactState
from .scoring import PrunedBranch

STATUS_NONE = "none"
STATUS_ACTIVE = "active"
STATUS_SOFTENED = "softened"
STATUS_EXPIRED = "expired"
STATUS_ABORTED = "aborted"
STATUS_OVERRIDDEN = "overridden"

REASON_EXPIRED = "expired"
REASON_DRIFT = "drift"
REASON_VALIDITY = "validity"
REASON_ABORT = "abort"

#: Ledger status a forecast ends in, per invalidation reason.
_STATUS_FOR_REASON = {
    REASON_EXPIRED: STATUS_EXPIRED,
    REASON_DRIFT: STATUS_EXPIRED,
    REASON_VALIDITY: STATUS_ABORTED,
    REASON_ABORT: STATUS_ABORTED,
}

#: Completed ACCELERATE/DECELERATE commits tolerate this band around the
#: branch's predicted speed.
SPEED_COMPLETION_BAND_MS = 1.0


@dataclass(frozen=True)
class DriftConfig:
    # Drift mix over front-gap deficit, TTC deficit, and lane mismatch.
    gap_weight: float = 0.4
    ttc_weight: float = 0.4
    lane_weight: float = 0.2
    # Replan thresholds selected by forecast authority.
    tau_low: float = 0.20
    tau_med: float = 0.35
    tau_high: float = 0.50
    # Hard-safety floor; trips override regardless of authority or atoms.
    ttc_floor_s: float = 1.0
    gap_floor_m: float = 2.0
    # Expectations are capped at these caps when frozen, so a branch that saw
    # an empty lane (sentinel gap/TTC) promises "comfortable", not "infinite";
    # otherwise any finite live measurement would register as a deficit.
    expected_gap_cap_m: float = 50.0
    expected_ttc_cap_s: float = 10.0

    def __post_init__(self) -> None:
        if min(self.gap_weight, self.ttc_weight, self.lane_weight) < 0.0:
            raise ValueError("drift weights must be >= 0")
        if not self.tau_low <= self.tau_med <= self.tau_high <= 1.0:
            raise ValueError("authority thresholds must satisfy low <= med <= high <= 1")


@dataclass(frozen=True)
class WorldlineExecutionState:
    """Forecast-buffer status tracked across a forecast's life."""

    active: StrategicForecast | None
    expected_front_gap_m: float
    expected_min_ttc_s: float
    expected_lane: int
    expected_speed_ms: float
    steps_executed: int
    status: str
    refresh_pending: bool


def idle_execution_state() -> WorldlineExecutionState:
    return WorldlineExecutionState(active=None, expected_front_gap_m=0.0,
                                   expected_min_ttc_s=0.0, expected_lane=0,
                                   expected_speed_ms=0.0, steps_executed=0,
                                   status=STATUS_NONE, refresh_pending=True)


def commit_execution(forecast: StrategicForecast, selected: PrunedBranch,
                     cfg: DriftConfig | None = None) -> WorldlineExecutionState:
    """Freeze the selected branch's expectations for the forecast's life."""
    cfg = cfg or DriftConfig()
    branch = selected.branch
    return WorldlineExecutionState(
        active=forecast,
        expected_front_gap_m=min(branch.front_gap_m, cfg.expected_gap_cap_m),
        expected_min_ttc_s=min(branch.min_ttc_s, cfg.expected_ttc_cap_s),
        expected_lane=branch.predicted_lane,
        expected_speed_ms=branch.predicted_speed_ms,
        steps_executed=0,
        status=STATUS_ACTIVE,
        refresh_pending=False,
    )


@dataclass(frozen=True)
class TacticalDecision:
    action_token: str
    provenance: str  # buffered | softened | fallback | override | reactive
    invalidation_reason: str | None
    drift: float
    reason: str

    def __post_init__(self) -> None:
        if self.provenance == "buffered" and self.invalidation_reason is not None:
            raise ValueError("buffered decisions carry no invalidation reason")
        if self.provenance == "fallback" and self.invalidation_reason is None:
            raise ValueError("fallback decisions must carry their invalidation reason")


def drift_score(exec_state: WorldlineExecutionState, obs: RuntimeObservables,
                cfg: DriftConfig) -> float:
    """Scalar deviation of the live scene from the committed expectations, in [0, 1].

    Only deficits count: a live gap or TTC above expectation contributes
    nothing. Lane mismatch is a unit indicator.
    """
    if exec_state.active is None:
        raise ValueError("drift is undefined without an active forecast")
    gap_star = exec_state.expected_front_gap_m
    ttc_star = exec_state.expected_min_ttc_s
    gap_term = max(gap_star - obs.front_gap_m, 0.0) / max(gap_star, 1.0)
    ttc_term = max(ttc_star - obs.min_ttc_s, 0.0) / max(ttc_star, 1.0)
    lane_term = 1.0 if obs.ego_lane != exec_state.expected_lane else 0.0
    return min(cfg.gap_weight * gap_term + cfg.ttc_weight * ttc_term
               + cfg.lane_weight * lane_term, 1.0)


def authority_threshold(authority: str, cfg: DriftConfig) -> float:
    table = {"low": cfg.tau_low, "med": cfg.tau_med, "high": cfg.tau_high}
    try:
        return table[authority]
    except KeyError:
        raise ValueError(f"unknown authority {authority!r}") from None


def check_invalid(exec_state: WorldlineExecutionState, obs: RuntimeObservables,
                  step: int, cfg: DriftConfig) -> tuple[bool, str | None]:
    """Four-way invalidation predicate with a fixed reason precedence.

    Precedence is expiry, abort, validity, drift, so ledger reasons stay
    unambiguous. Abort and validity checks ignore the authority threshold
    entirely; only the drift disjunct consults it.
    """
    forecast = exec_state.active
    if forecast is None:
        raise ValueError("no active forecast to check")
    if step > forecast.t_issue + forecast.horizon_steps:
        return True, REASON_EXPIRED
    drift = drift_score(exec_state, obs, cfg)
    live = with_drift(obs, drift)
    for atom in forecast.abort:
        if eval_atom(atom, live):
            return True, REASON_ABORT
    for atom in forecast.validity:
        if not eval_atom(atom, live):
            return True, REASON_VALIDITY
    if drift > authority_threshold(forecast.authority, cfg):
        return True, REASON_DRIFT
    return False, None


def _family_completed(exec_state: WorldlineExecutionState, state: CompactState) -> bool:
    forecast = exec_state.active
    if forecast is None:
        return False
    family = forecast.commit_family
    if family in (CHANGE_LEFT, CHANGE_RIGHT):
        return state.ego.lane == exec_state.expected_lane
    if family in (ACCELERATE, DECELERATE):
        return abs(state.ego.speed_ms - exec_state.expected_speed_ms) <= SPEED_COMPLETION_BAND_MS
    return False  # KEEP never completes; softening does not apply


def arbitrate(exec_state: WorldlineExecutionState, state: CompactState,
              obs: RuntimeObservables, cfg: DriftConfig, *,
              analytical_top: CandidateAction | None = None,
              ) -> tuple[TacticalDecision, WorldlineExecutionState]:
    """Resolve one constrained tactical decision for the current step.

    Order of authority: hard safety pressure overrides everything; then the
    invalidation predicate emits the forecast's fallback within the same
    step; then a completed commit family softens to IDLE; otherwise the
    buffered primitive action executes. With no active forecast the decision
    is reactive, using the supplied analytical-top action (or the encoder's
    fallback) and flagging a refresh.
    """
    feasible_ids = set(state.meta.feasible_action_ids)
    meta_fallback = token_for_id(state.meta.fallback_action_id)
    drift = drift_score(exec_state, obs, cfg) if exec_state.active is not None else 0.0

    if obs.min_ttc_s < cfg.ttc_floor_s or obs.front_gap_m < cfg.gap_floor_m:
        status = STATUS_OVERRIDDEN if exec_state.active is not None else exec_state.status
        new_state = replace(exec_state, active=None, status=status, refresh_pending=True)
        return (TacticalDecision(SLOWER, "override", None, drift, "hard_safety"), new_state)

    if exec_state.active is None:
        token = analytical_top.token if analytical_top is not None else meta_fallback
        decision = TacticalDecision(token, "reactive", None, 0.0, "no_active_forecast")
        return decision, replace(exec_state, refresh_pending=True)

    invalid, reason = check_invalid(exec_state, obs, obs.step, cfg)
    if invalid:
        fallback = exec_state.active.fallback_token
        if ACTION_IDS[fallback] not in feasible_ids:
            fallback = meta_fallback
        new_state = replace(exec_state, active=None,
                            status=_STATUS_FOR_REASON[reason], refresh_pending=True)
        decision = TacticalDecision(fallback, "fallback", reason, drift,
                                    f"invalidated:{reason}")
        return decision, new_state

    if exec_state.status == STATUS_SOFTENED or _family_completed(exec_state, state):
        new_state = replace(exec_state, status=STATUS_SOFTENED,
                            steps_executed=exec_state.steps_executed + 1)
        return (TacticalDecision(IDLE, "softened", None, drift, "commit_completed"),
                new_state)

    token = exec_state.active.action.token
    if ACTION_IDS[token] not in feasible_ids:
        # Scene moved past the commit (e.g. lane edge); drop it safely.
        new_state = replace(exec_state, active=None, status=STATUS_OVERRIDDEN,
                            refresh_pending=True)
        return (TacticalDecision(meta_fallback, "override", None, drift,
                                 "infeasible_action"), new_state)
    new_state = replace(exec_state, status=STATUS_ACTIVE,
                        steps_executed=exec_state.steps_executed + 1)
    return TacticalDecision(token, "buffered", None, drift, "forecast_valid"), new_state
