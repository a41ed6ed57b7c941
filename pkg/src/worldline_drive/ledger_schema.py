"""JSON schemas for the E1/E2/E3 ledger line formats."""

from __future__ import annotations

import jsonschema

_NULLABLE_NUMBER = {"type": ["number", "null"]}
_NULLABLE_STRING = {"type": ["string", "null"]}

EPISODE_HEADER_SCHEMA = {
    "type": "object",
    "required": ["kind", "seed", "mode", "selector", "horizon_s", "env"],
    "properties": {
        "kind": {"const": "episode_header"},
        "seed": {"type": "integer"},
        "mode": {"enum": ["reactive", "dual", "deterministic"]},
        "selector": {"type": "string"},
        "horizon_s": {"type": "number"},
        "env": {"type": "object"},
    },
}

STEP_SCHEMA = {
    "type": "object",
    "required": ["kind", "step", "action", "action_id", "provenance", "drift",
                 "status", "speed_kmh", "ego_lane", "front_gap_m", "min_ttc_s",
                 "headway_s", "collision", "trace"],
    "properties": {
        "kind": {"const": "step"},
        "step": {"type": "integer", "minimum": 0},
        "action": {"enum": ["LANE_LEFT", "IDLE", "LANE_RIGHT", "FASTER", "SLOWER"]},
        "action_id": {"type": "integer", "minimum": 0, "maximum": 4},
        "provenance": {"enum": ["buffered", "softened", "fallback", "override", "reactive"]},
        "invalidation_reason": {"enum": ["expired", "drift", "validity", "abort", None]},
        "reason": {"type": "string"},
        "drift": {"type": "number", "minimum": 0, "maximum": 1},
        "status": {"enum": ["none", "active", "softened", "expired", "aborted", "overridden"]},
        "speed_kmh": {"type": "number", "minimum": 0},
        "ego_lane": {"type": "integer", "minimum": 0},
        "front_gap_m": {"type": "number", "minimum": 0},
        "min_ttc_s": {"type": "number", "minimum": 0},
        "headway_s": {"type": "number", "minimum": 0},
        "collision": {"type": "boolean"},
        "trace": {"type": "array", "items": {"type": "object"}},
    },
}

STRATEGIC_CALL_SCHEMA = {
    "type": "object",
    "required": ["kind", "call_index", "step", "t_issue", "selector",
                 "branch_set", "shortlist", "selected_branch_id",
                 "shortlist_max_s_agg", "latency_s"],
    "properties": {
        "kind": {"const": "strategic_call"},
        "call_index": {"type": "integer", "minimum": 0},
        "step": {"type": "integer", "minimum": 0},
        "t_issue": {"type": "integer"},
        "selector": {"type": "string"},
        "prompt_mode": {"type": "string"},
        "branch_set": {"type": "array", "items": {"type": "object"}},
        "shortlist": {"type": "array", "items": {"type": "object"}},
        "selected_branch_id": _NULLABLE_STRING,
        "selected_s_agg": _NULLABLE_NUMBER,
        "shortlist_max_s_agg": {"type": "number"},
        "forecast": {"type": ["object", "null"]},
        "fallback_reason": _NULLABLE_STRING,
        "latency_s": {"type": "number", "minimum": 0},
        "prompt_hash": _NULLABLE_STRING,
        "prompt_tokens": {"type": ["integer", "null"]},
        "completion_tokens": {"type": ["integer", "null"]},
    },
}

INVALIDATION_SCHEMA = {
    "type": "object",
    "required": ["kind", "step", "call_index", "reason"],
    "properties": {
        "kind": {"const": "invalidation"},
        "step": {"type": "integer", "minimum": 0},
        "call_index": {"type": "integer", "minimum": 0},
        "reason": {"enum": ["expired", "drift", "validity", "abort"]},
    },
}

ATOM_EVAL_SCHEMA = {
    "type": "object",
    "required": ["kind", "step", "call_index", "drift", "validity", "abort"],
    "properties": {
        "kind": {"const": "atom_eval"},
        "step": {"type": "integer", "minimum": 0},
        "call_index": {"type": "integer", "minimum": 0},
        "drift": {"type": "number"},
        "validity": {"type": "array",
                     "items": {"type": "object",
                               "required": ["atom", "holds"],
                               "properties": {"atom": {"type": "string"},
                                              "holds": {"type": "boolean"}}}},
        "abort": {"type": "array",
                  "items": {"type": "object",
                            "required": ["atom", "fired"],
                            "properties": {"atom": {"type": "string"},
                                           "fired": {"type": "boolean"}}}},
    },
}

CONTRACT_COUNTERS_SCHEMA = {
    "type": "object",
    "required": ["kind", "seed", "decisions", "strategic_calls", "strict_parses",
                 "parser_fallbacks", "runtime_parse_calls", "runtime_strict",
                 "runtime_fallbacks", "sel_latencies_s", "dec_latencies_s"],
    "properties": {
        "kind": {"const": "contract_counters"},
        "seed": {"type": "integer"},
        "decisions": {"type": "integer", "minimum": 0},
        "strategic_calls": {"type": "integer", "minimum": 0},
        "strict_parses": {"type": "integer", "minimum": 0},
        "parser_fallbacks": {"type": "object",
                             "additionalProperties": {"type": "integer"}},
        "runtime_parse_calls": {"type": "integer", "minimum": 0},
        "runtime_strict": {"type": "integer", "minimum": 0},
        "runtime_fallbacks": {"type": "object",
                              "additionalProperties": {"type": "integer"}},
        "sel_latencies_s": {"type": "array", "items": {"type": "number"}},
        "dec_latencies_s": {"type": "array", "items": {"type": "number"}},
        "prompt_tokens": {"type": ["integer", "null"]},
        "completion_tokens": {"type": ["integer", "null"]},
    },
}

SCHEMA_BY_KIND = {
    "episode_header": EPISODE_HEADER_SCHEMA,
    "step": STEP_SCHEMA,
    "strategic_call": STRATEGIC_CALL_SCHEMA,
    "invalidation": INVALIDATION_SCHEMA,
    "atom_eval": ATOM_EVAL_SCHEMA,
    "contract_counters": CONTRACT_COUNTERS_SCHEMA,
}


def validate_line(line: dict) -> None:
    """Raise jsonschema.ValidationError when a ledger line is malformed."""
    kind = line.get("kind")
    schema = SCHEMA_BY_KIND.get(kind)
    if schema is None:
        raise jsonschema.ValidationError(f"unknown ledger line kind {kind!r}")
    jsonschema.validate(line, schema)
