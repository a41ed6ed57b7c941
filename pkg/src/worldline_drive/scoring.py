"""Analytical branch scoring, deterministic ordering, and role-diverse shortlisting."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .worldlines import BranchSet, WorldLineBranch

#: Fixed clip normalizers for the safety quality term (seconds, meters).
TTC_CLIP_S = 5.0
GAP_CLIP_M = 35.0


@dataclass(frozen=True)
class ScoringConfig:
    # Safety quality: weights on clipped TTC, clipped front gap, and risk.
    safety_ttc_weight: float = 0.5
    safety_gap_weight: float = 0.3
    safety_risk_weight: float = 0.4
    # Aggregate mix: safety, efficiency, comfort credit, uncertainty penalty.
    agg_safety: float = 0.5
    agg_efficiency: float = 0.3
    agg_comfort: float = 0.1
    agg_uncertainty: float = 0.1
    shortlist_k: int = 3
    diversity: bool = True
    #: Speed-band ceiling used to normalize predicted progress into efficiency.
    v_max_ms: float = 130.0 / 3.6

    def __post_init__(self) -> None:
        weights = (self.safety_ttc_weight, self.safety_gap_weight, self.safety_risk_weight,
                   self.agg_safety, self.agg_efficiency, self.agg_comfort, self.agg_uncertainty)
        if any(w < 0 for w in weights):
            raise ValueError("scoring weights must be >= 0")
        if self.shortlist_k < 1:
            raise ValueError("shortlist_k must be >= 1")


@dataclass(frozen=True)
class PrunedBranch:
    branch: WorldLineBranch
    q_saf: float
    s_eff: float
    s_agg: float
    rank: int  # 1-based once ordered; 0 before ordering

    def to_dict(self) -> dict:
        return {
            "branch_id": self.branch.branch_id,
            "role": self.branch.role,
            "action_id": self.branch.action.action_id,
            "action": self.branch.action.token,
            "q_saf": self.q_saf,
            "s_eff": self.s_eff,
            "s_agg": self.s_agg,
            "rank": self.rank,
            "summary": self.branch.summary,
        }


def score_branch(branch: WorldLineBranch, cfg: ScoringConfig) -> PrunedBranch:
    """Safety quality from clipped TTC/front-gap minus risk, then the aggregate mix."""
    q_saf = max(
        cfg.safety_ttc_weight * min(branch.min_ttc_s / TTC_CLIP_S, 1.0)
        + cfg.safety_gap_weight * min(branch.front_gap_m / GAP_CLIP_M, 1.0)
        - cfg.safety_risk_weight * branch.collision_risk,
        0.0,
    )
    s_eff = min(branch.predicted_progress_m / (cfg.v_max_ms * branch.horizon_s), 1.0)
    s_agg = (cfg.agg_safety * q_saf
             + cfg.agg_efficiency * s_eff
             + cfg.agg_comfort * max(1.0 - branch.comfort_penalty, 0.0)
             - cfg.agg_uncertainty * branch.uncertainty)
    return PrunedBranch(branch=branch, q_saf=q_saf, s_eff=s_eff, s_agg=s_agg, rank=0)


def score_all(branch_set: BranchSet, cfg: ScoringConfig) -> list[PrunedBranch]:
    return [score_branch(b, cfg) for b in branch_set]


def order_branches(scored: list[PrunedBranch]) -> list[PrunedBranch]:
    """Total four-key order: aggregate desc, safety desc, action ID asc, branch ID asc."""
    ordered = sorted(scored, key=lambda pb: (-pb.s_agg, -pb.q_saf,
                                             pb.branch.action.action_id,
                                             pb.branch.branch_id))
    return [replace(pb, rank=i + 1) for i, pb in enumerate(ordered)]


def shortlist(ordered: list[PrunedBranch], k: int, diversity: bool) -> list[PrunedBranch]:
    """Selector-visible subset of at most ``k`` branches.

    With diversity on, the best branch of each role present is included first
    (best-ranked roles win when the budget is tighter than the role count),
    then the list is backfilled by global order. Output keeps the four-key
    order and never contains duplicates.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not diversity or not ordered:
        picked = ordered[:k]
    else:
        role_tops: dict[str, PrunedBranch] = {}
        for pb in ordered:
            role_tops.setdefault(pb.branch.role, pb)
        picked = sorted(role_tops.values(), key=lambda pb: pb.rank)[:k]
        seen = {pb.branch.branch_id for pb in picked}
        for pb in ordered:
            if len(picked) >= k:
                break
            if pb.branch.branch_id not in seen:
                picked.append(pb)
                seen.add(pb.branch.branch_id)
    return sorted(picked, key=lambda pb: pb.rank)
