"""Typed strategic forecast objects and the machine-checkable condition-atom grammar.

Atoms have the exact shape ``metric_cmp:threshold`` with metric in
{front_gap, min_ttc, drift_score}, comparator in {ge, gt, le, lt}, and a
nonnegative decimal threshold (drift_score thresholds additionally capped at
1). Parsing is whitespace-intolerant and total over its error classes: any
non-atom input raises exactly one of the four distinct error types.

A selector response becomes a :class:`StrategicForecast` only if every field
type-checks, every atom parses, the branch is on the shortlist, the actions
are feasible, and the commit family matches the primitive action. Anything
else is a classified :class:`ParserFallback`, a recorded interface-health
outcome rather than an exception path.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, replace
from decimal import Decimal

from .actions import (ACTION_IDS, AUTHORITY_LEVELS, COMMIT_FAMILIES,
                      FAMILY_FOR_TOKEN)
from .encoder import CandidateAction
from .scoring import PrunedBranch

log = logging.getLogger(__name__)

ATOM_METRICS = ("front_gap", "min_ttc", "drift_score")
ATOM_COMPARATORS = ("ge", "gt", "le", "lt")

#: Closed vocabulary for self-reported rationale tags; never read by any
#: runtime decision path.
RATIONALE_TAGS = ("safety_margin", "progress", "stress_hedge",
                  "lane_opportunity", "uncertainty_avoidance")

#: Validity/abort sets are capped; longer lists are truncated with a warning.
MAX_ATOMS = 4

#: Exact wire field names of the forecast JSON schema.
FORECAST_FIELDS = ("branch_id", "action", "commit_family", "horizon_steps",
                   "validity", "abort", "fallback", "authority", "rationale_tags")

_THRESHOLD_RE = re.compile(r"^\d+(\.\d+)?$")


class AtomError(ValueError):
    """Base class for condition-atom grammar violations."""


class UnknownMetric(AtomError):
    pass


class UnknownComparator(AtomError):
    pass


class MalformedThreshold(AtomError):
    pass


class ThresholdOutOfRange(AtomError):
    pass


@dataclass(frozen=True)
class ConditionAtom:
    metric: str
    cmp: str
    threshold: float

    def __post_init__(self) -> None:
        if self.metric not in ATOM_METRICS:
            raise UnknownMetric(self.metric)
        if self.cmp not in ATOM_COMPARATORS:
            raise UnknownComparator(self.cmp)
        if not math.isfinite(self.threshold) or self.threshold < 0.0:
            raise MalformedThreshold(repr(self.threshold))
        if self.metric == "drift_score" and self.threshold > 1.0:
            raise ThresholdOutOfRange(repr(self.threshold))


def parse_atom(text: str) -> ConditionAtom:
    """Parse ``metric_cmp:threshold`` exactly; no whitespace tolerance.

    Raises UnknownComparator when the head carries no recognizable comparator
    suffix, UnknownMetric for a metric outside the closed vocabulary,
    MalformedThreshold for a missing/non-decimal/negative threshold, and
    ThresholdOutOfRange for drift_score thresholds above 1.
    """
    head, sep, tail = text.partition(":")
    for cmp in ATOM_COMPARATORS:
        suffix = "_" + cmp
        if head.endswith(suffix):
            metric = head[:-len(suffix)]
            break
    else:
        raise UnknownComparator(text)
    if metric not in ATOM_METRICS:
        raise UnknownMetric(metric)
    if not sep or not _THRESHOLD_RE.match(tail):
        raise MalformedThreshold(text)
    value = float(tail)
    if not math.isfinite(value):
        raise MalformedThreshold(text)
    if metric == "drift_score" and value > 1.0:
        raise ThresholdOutOfRange(text)
    return ConditionAtom(metric=metric, cmp=cmp, threshold=value)


def _format_threshold(value: float) -> str:
    # At least one decimal place, no exponent notation, exact round-trip.
    text = repr(float(value))
    if "e" in text or "E" in text:
        text = format(Decimal(text), "f")
    if "." not in text:
        text += ".0"
    return text


def render_atom(atom: ConditionAtom) -> str:
    """Inverse of :func:`parse_atom`: parse(render(x)) == x for all valid atoms."""
    return f"{atom.metric}_{atom.cmp}:{_format_threshold(atom.threshold)}"


@dataclass(frozen=True)
class RuntimeObservables:
    """Live evaluation context for condition atoms."""

    front_gap_m: float
    min_ttc_s: float
    drift_score: float
    ego_lane: int
    step: int

    def __post_init__(self) -> None:
        if min(self.front_gap_m, self.min_ttc_s, self.drift_score) < 0.0:
            raise ValueError("observables must be >= 0")


_CMP_OPS = {
    "ge": lambda a, b: a >= b,
    "gt": lambda a, b: a > b,
    "le": lambda a, b: a <= b,
    "lt": lambda a, b: a < b,
}


def eval_atom(atom: ConditionAtom, obs: RuntimeObservables) -> bool:
    value = {
        "front_gap": obs.front_gap_m,
        "min_ttc": obs.min_ttc_s,
        "drift_score": obs.drift_score,
    }[atom.metric]
    return _CMP_OPS[atom.cmp](value, atom.threshold)


@dataclass(frozen=True)
class Provenance:
    selector_id: str
    rationale_tags: tuple[str, ...]
    prompt_hash: str | None


@dataclass(frozen=True)
class StrategicForecast:
    """The typed, revocable commit object binding one branch to runtime checks."""

    branch_id: str
    action: CandidateAction
    commit_family: str
    horizon_steps: int
    validity: tuple[ConditionAtom, ...]
    abort: tuple[ConditionAtom, ...]
    fallback_token: str
    authority: str
    provenance: Provenance
    t_issue: int

    def __post_init__(self) -> None:
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.commit_family not in COMMIT_FAMILIES:
            raise ValueError(f"unknown commit family {self.commit_family!r}")
        if self.authority not in AUTHORITY_LEVELS:
            raise ValueError(f"unknown authority {self.authority!r}")
        if FAMILY_FOR_TOKEN[self.action.token] != self.commit_family:
            raise ValueError("commit family inconsistent with the primitive action")

    def to_raw(self) -> dict:
        """Wire-schema dict (field names exactly as in the response template)."""
        return {
            "branch_id": self.branch_id,
            "action": self.action.token,
            "commit_family": self.commit_family,
            "horizon_steps": self.horizon_steps,
            "validity": [render_atom(a) for a in self.validity],
            "abort": [render_atom(a) for a in self.abort],
            "fallback": self.fallback_token,
            "authority": self.authority,
            "rationale_tags": list(self.provenance.rationale_tags),
        }


@dataclass(frozen=True)
class ParserFallback:
    """Classified rejection of a selector response; resolved by the caller to
    the analytical-top action and logged as an interface-health event."""

    reason: str
    detail: str = ""


def _parse_atom_list(values: object, field_name: str) -> tuple[ConditionAtom, ...] | ParserFallback:
    if not isinstance(values, (list, tuple)):
        return ParserFallback("bad_type", f"{field_name} must be a list of atom strings")
    items = list(values)
    if len(items) > MAX_ATOMS:
        log.warning("%s carries %d atoms; truncating to %d", field_name, len(items), MAX_ATOMS)
        items = items[:MAX_ATOMS]
    atoms = []
    for item in items:
        if not isinstance(item, str):
            return ParserFallback("bad_type", f"{field_name} atom {item!r} is not a string")
        try:
            atoms.append(parse_atom(item))
        except AtomError as err:
            return ParserFallback(f"atom_{type(err).__name__}", f"{field_name}: {item!r}")
    return tuple(atoms)


def validate_forecast(raw: object, shortlist: list[PrunedBranch],
                      feasible: list[CandidateAction], step: int, *,
                      selector_id: str = "unknown",
                      prompt_hash: str | None = None) -> StrategicForecast | ParserFallback:
    """Total validation: every input yields a typed forecast or a classified fallback.

    ``step`` is recorded as the forecast's issue step. The committed branch
    must come from the shortlist; the primitive action must match that branch
    and be feasible; the fallback must be feasible; the commit family must be
    consistent with the action. Unknown rationale tags are dropped (they are
    diagnostics, not decision inputs).
    """
    if not isinstance(raw, dict):
        return ParserFallback("bad_payload", f"expected an object, got {type(raw).__name__}")
    missing = [f for f in FORECAST_FIELDS if f not in raw]
    if missing:
        return ParserFallback("missing_field", ",".join(missing))

    branch_id = raw["branch_id"]
    if not isinstance(branch_id, str):
        return ParserFallback("bad_type", "branch_id must be a string")
    by_id = {pb.branch.branch_id: pb for pb in shortlist}
    if branch_id not in by_id:
        return ParserFallback("unknown_branch", branch_id)
    selected = by_id[branch_id]

    action_token = raw["action"]
    if not isinstance(action_token, str) or action_token not in ACTION_IDS:
        return ParserFallback("bad_type", f"unknown action {action_token!r}")
    if action_token != selected.branch.action.token:
        return ParserFallback("action_mismatch",
                              f"{action_token} vs branch {selected.branch.action.token}")
    feasible_tokens = {a.token for a in feasible}
    if action_token not in feasible_tokens:
        return ParserFallback("infeasible_action", action_token)

    family = raw["commit_family"]
    if family not in COMMIT_FAMILIES:
        return ParserFallback("bad_type", f"unknown commit family {family!r}")
    if FAMILY_FOR_TOKEN[action_token] != family:
        return ParserFallback("family_mismatch", f"{family} vs {action_token}")

    horizon = raw["horizon_steps"]
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
        return ParserFallback("bad_horizon", repr(horizon))

    validity = _parse_atom_list(raw["validity"], "validity")
    if isinstance(validity, ParserFallback):
        return validity
    abort = _parse_atom_list(raw["abort"], "abort")
    if isinstance(abort, ParserFallback):
        return abort

    fallback_token = raw["fallback"]
    if not isinstance(fallback_token, str) or fallback_token not in ACTION_IDS:
        return ParserFallback("bad_type", f"unknown fallback {fallback_token!r}")
    if fallback_token not in feasible_tokens:
        return ParserFallback("infeasible_fallback", fallback_token)

    authority = raw["authority"]
    if authority not in AUTHORITY_LEVELS:
        return ParserFallback("bad_authority", repr(authority))

    tags_raw = raw["rationale_tags"]
    if not isinstance(tags_raw, (list, tuple)):
        return ParserFallback("bad_type", "rationale_tags must be a list")
    tags = tuple(t for t in tags_raw if isinstance(t, str) and t in RATIONALE_TAGS)
    if len(tags) != len(tags_raw):
        log.warning("dropped rationale tags outside the closed vocabulary: %r", tags_raw)

    return StrategicForecast(
        branch_id=branch_id,
        action=selected.branch.action,
        commit_family=family,
        horizon_steps=horizon,
        validity=validity,
        abort=abort,
        fallback_token=fallback_token,
        authority=authority,
        provenance=Provenance(selector_id=selector_id, rationale_tags=tags,
                              prompt_hash=prompt_hash),
        t_issue=step,
    )


def with_drift(obs: RuntimeObservables, drift: float) -> RuntimeObservables:
    return replace(obs, drift_score=drift)
