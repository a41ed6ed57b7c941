"""Primitive meta-action vocabulary and commit families shared across the stack."""

from __future__ import annotations

LANE_LEFT = "LANE_LEFT"
IDLE = "IDLE"
LANE_RIGHT = "LANE_RIGHT"
FASTER = "FASTER"
SLOWER = "SLOWER"

#: The five discrete environment actions, indexed by primitive action ID.
ACTION_TOKENS = (LANE_LEFT, IDLE, LANE_RIGHT, FASTER, SLOWER)
ACTION_IDS = {token: idx for idx, token in enumerate(ACTION_TOKENS)}

KEEP = "KEEP"
ACCELERATE = "ACCELERATE"
CHANGE_LEFT = "CHANGE_LEFT"
CHANGE_RIGHT = "CHANGE_RIGHT"
DECELERATE = "DECELERATE"

#: Maneuver-level meaning a forecast preserves across buffered steps.
COMMIT_FAMILIES = (KEEP, ACCELERATE, CHANGE_LEFT, CHANGE_RIGHT, DECELERATE)

FAMILY_FOR_TOKEN = {
    IDLE: KEEP,
    FASTER: ACCELERATE,
    LANE_LEFT: CHANGE_LEFT,
    LANE_RIGHT: CHANGE_RIGHT,
    SLOWER: DECELERATE,
}
TOKEN_FOR_FAMILY = {family: token for token, family in FAMILY_FOR_TOKEN.items()}

AUTHORITY_LEVELS = ("low", "med", "high")


def token_for_id(action_id: int) -> str:
    return ACTION_TOKENS[action_id]
