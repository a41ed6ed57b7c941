"""Strategic branch selection and runtime decision sources.

Three selector families share one contract: scripted deterministic policies
(desk-scale stand-ins for a hosted model), the analytical-top committer used
by deterministic replay, and a live chat-completions-compatible endpoint
client. Every selector output passes :func:`validate_forecast` before it can
reach the runtime; endpoint runtime intents additionally pass the arbiter's
hard-safety and invalidation checks.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources

import httpx
import numpy as np

from .actions import ACTION_IDS, FAMILY_FOR_TOKEN
from .arbiter import (DriftConfig, TacticalDecision, WorldlineExecutionState,
                      arbitrate)
from .contract import (ParserFallback, RuntimeObservables, StrategicForecast,
                       validate_forecast)
from .encoder import CandidateAction, CompactState
from .scoring import PrunedBranch
from .worldlines import ROLES

PROMPT_VERSION = "v1"

#: Fixed instruction block prepended in balanced mode; byte-identical across
#: steps, only the rotating role_priority line varies.
BALANCED_MODE_BLOCK = (
    "Balanced selection mode: compare alpha, beta, and gamma as equal "
    "evidence hypotheses, not as a nominal score ladder. Beta and gamma "
    "scores include counterfactual or stress penalties; do not treat those "
    "penalties as automatic inferiority to alpha. Use role_priority only as "
    "a tie-breaker when safety, TTC/gap evidence, and robust progress are "
    "comparable."
)

SCRIPTED_POLICIES = ("top", "prefer_stress", "safest_qsaf", "round_robin_role")

#: Environment variable names for live-endpoint configuration.
ENV_ENDPOINT_URL = "STEINS_ENDPOINT_URL"
ENV_ENDPOINT_KEY = "STEINS_ENDPOINT_KEY"
ENV_MODEL = "STEINS_MODEL"


def _load_prompt(name: str) -> str:
    return resources.files("worldline_drive.prompts").joinpath(name).read_text()


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    mode: str  # natural | balanced
    role_priority: tuple[str, ...]
    step: int
    prompt_hash: str


@dataclass(frozen=True)
class SelectorResult:
    outcome: StrategicForecast | ParserFallback
    latency_s: float
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    raw_response: str = ""
    selector_id: str = ""

    def __post_init__(self) -> None:
        if self.latency_s < 0.0:
            raise ValueError("latency must be >= 0")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = ENV_ENDPOINT_KEY
    timeout_s: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout_s <= 0.0:
            raise ValueError("timeout must be > 0")


@dataclass(frozen=True)
class LatencyModel:
    """Synthetic per-call latencies for scripted selectors.

    Constants by default; a positive jitter turns each call into a truncated
    gaussian sample from the provided generator, recorded exactly like a
    measured latency.
    """

    sel_s: float = 0.0
    dec_s: float = 0.0
    jitter_s: float = 0.0

    def sample_sel(self, rng: np.random.Generator | None = None) -> float:
        return self._sample(self.sel_s, rng)

    def sample_dec(self, rng: np.random.Generator | None = None) -> float:
        return self._sample(self.dec_s, rng)

    def _sample(self, base: float, rng: np.random.Generator | None) -> float:
        if self.jitter_s <= 0.0 or rng is None:
            return base
        return max(base + self.jitter_s * float(rng.standard_normal()), 0.0)


@dataclass(frozen=True)
class DefaultContract:
    """Static contract policy applied by scripted selectors."""

    horizon_steps: int
    authority: str = "med"
    validity: tuple[str, ...] = ("front_gap_ge:4.0", "min_ttc_gt:2.0")
    abort: tuple[str, ...] = ("min_ttc_lt:2.0",)
    rationale_tags: tuple[str, ...] = ("safety_margin",)


@dataclass(frozen=True)
class SelectionContext:
    """Per-call context a scripted selector needs beyond the shortlist."""

    t_issue: int
    feasible: list[CandidateAction]
    fallback_token: str
    call_index: int = 0
    latency: LatencyModel = field(default_factory=LatencyModel)
    latency_rng: np.random.Generator | None = None


def build_strategic_prompt(shortlist: list[PrunedBranch], state: CompactState,
                           mode: str, step: int,
                           roles_enabled: tuple[str, ...] = ROLES) -> PromptBundle:
    """Serialize the shortlist and compact state into the strategic prompt.

    Natural mode presents branches in analytical pruning order with no role
    instruction. Balanced mode prepends the fixed instruction block and a
    role_priority list rotating over the enabled roles in (alpha, beta,
    gamma) order as the step advances.
    """
    if not shortlist:
        raise ValueError("shortlist must be non-empty")
    if mode not in ("natural", "balanced"):
        raise ValueError(f"unknown prompt mode {mode!r}")

    roles = tuple(r for r in ROLES if r in roles_enabled)
    lines: list[str] = []
    role_priority: tuple[str, ...] = ()
    if mode == "balanced":
        offset = step % len(roles)
        role_priority = roles[offset:] + roles[:offset]
        lines.append(BALANCED_MODE_BLOCK)
        lines.append("role_priority: " + ", ".join(role_priority))
        lines.append("")

    lines.append("Scene state:")
    lines.append(json.dumps(state.to_dict(), sort_keys=True))
    lines.append("")
    lines.append("Shortlisted branches (choose one branch_id):")
    for pb in shortlist:
        lines.append(json.dumps(pb.to_dict(), sort_keys=True))
    lines.append("")
    lines.append("Response template (answer with exactly this JSON object, "
                 "filling every field):")
    lines.append(json.dumps({
        "branch_id": "<shortlisted branch_id>",
        "action": "<LANE_LEFT|IDLE|LANE_RIGHT|FASTER|SLOWER>",
        "commit_family": "<KEEP|ACCELERATE|CHANGE_LEFT|CHANGE_RIGHT|DECELERATE>",
        "horizon_steps": "<integer >= 1>",
        "validity": ["<metric_cmp:threshold>"],
        "abort": ["<metric_cmp:threshold>"],
        "fallback": "<action token>",
        "authority": "<low|med|high>",
        "rationale_tags": ["<safety_margin|progress|stress_hedge|lane_opportunity|uncertainty_avoidance>"],
    }, sort_keys=True))
    lines.append("Condition atoms use metrics front_gap (m), min_ttc (s), "
                 "drift_score ([0,1]) with comparators ge, gt, le, lt.")

    system = _load_prompt(f"strategic_system_{PROMPT_VERSION}.txt")
    user = "\n".join(lines)
    digest = hashlib.sha256((system + "\x00" + user).encode()).hexdigest()
    return PromptBundle(system=system, user=user, mode=mode,
                        role_priority=role_priority, step=step, prompt_hash=digest)


def _raw_forecast(pb: PrunedBranch, contract: DefaultContract,
                  fallback_token: str) -> dict:
    token = pb.branch.action.token
    return {
        "branch_id": pb.branch.branch_id,
        "action": token,
        "commit_family": FAMILY_FOR_TOKEN[token],
        "horizon_steps": contract.horizon_steps,
        "validity": list(contract.validity),
        "abort": list(contract.abort),
        "fallback": fallback_token,
        "authority": contract.authority,
        "rationale_tags": list(contract.rationale_tags),
    }


def _commit(pb: PrunedBranch, contract: DefaultContract, ctx: SelectionContext,
            selector_id: str) -> SelectorResult:
    raw = _raw_forecast(pb, contract, ctx.fallback_token)
    outcome = validate_forecast(raw, [pb], ctx.feasible, ctx.t_issue,
                                selector_id=selector_id)
    if isinstance(outcome, ParserFallback):  # pragma: no cover - scripted commits are well-formed
        raise RuntimeError(f"scripted commit failed validation: {outcome}")
    return SelectorResult(outcome=outcome,
                          latency_s=ctx.latency.sample_sel(ctx.latency_rng),
                          raw_response=json.dumps(raw, sort_keys=True),
                          selector_id=selector_id)


def select_analytical_top(shortlist: list[PrunedBranch], contract: DefaultContract,
                          ctx: SelectionContext) -> SelectorResult:
    """Commit the rank-1 branch under the default contract (deterministic replay)."""
    if not shortlist:
        raise ValueError("shortlist must be non-empty")
    top = min(shortlist, key=lambda pb: pb.rank)
    return _commit(top, contract, ctx, selector_id="analytical_top")


def pick_branch(shortlist: list[PrunedBranch], policy: str,
                call_index: int) -> PrunedBranch:
    """Deterministic scripted branch choice.

    ``top`` mirrors the analytical top; ``prefer_stress`` takes the best
    beta/gamma branch sharing the top branch's primitive action when one
    exists; ``safest_qsaf`` maximizes the safety quality term;
    ``round_robin_role`` cycles the committed role across successive calls.
    """
    if not shortlist:
        raise ValueError("shortlist must be non-empty")
    ordered = sorted(shortlist, key=lambda pb: pb.rank)
    top = ordered[0]
    if policy == "top":
        return top
    if policy == "prefer_stress":
        stress = [pb for pb in ordered
                  if pb.branch.role in ("beta", "gamma")
                  and pb.branch.action.action_id == top.branch.action.action_id]
        return stress[0] if stress else top
    if policy == "safest_qsaf":
        return min(ordered, key=lambda pb: (-pb.q_saf, pb.rank))
    if policy == "round_robin_role":
        roles_present = sorted({pb.branch.role for pb in ordered},
                               key=lambda r: ROLES.index(r))
        wanted = roles_present[call_index % len(roles_present)]
        return next(pb for pb in ordered if pb.branch.role == wanted)
    raise ValueError(f"unknown scripted policy {policy!r}")


def select_scripted(shortlist: list[PrunedBranch], policy: str,
                    contract: DefaultContract, ctx: SelectionContext) -> SelectorResult:
    """Scripted selection committed as a full forecast under the default contract."""
    pick = pick_branch(shortlist, policy, ctx.call_index)
    return _commit(pick, contract, ctx, selector_id=f"scripted:{policy}")


def _post_chat(prompt: PromptBundle, ep: EndpointConfig, api_key: str | None,
               transport: httpx.BaseTransport | None) -> httpx.Response:
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {
        "model": ep.model,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": ep.temperature,
    }
    with httpx.Client(timeout=ep.timeout_s, transport=transport) as client:
        return client.post(ep.base_url, json=body, headers=headers)


def select_via_endpoint(prompt: PromptBundle, ep: EndpointConfig, *,
                        shortlist: list[PrunedBranch], ctx: SelectionContext,
                        api_key: str | None = None,
                        transport: httpx.BaseTransport | None = None) -> SelectorResult:
    """One chat-completions call parsed strictly through the forecast contract.

    Transport failures retry up to the configured limit and then degrade to a
    ParserFallback("unavailable"); parse failures never retry, they are the
    interface-health signal the strict parse rate counts.
    """
    start = time.monotonic()
    response = None
    last_error = ""
    for _ in range(ep.max_retries + 1):
        try:
            response = _post_chat(prompt, ep, api_key, transport)
            break
        except httpx.TimeoutException as err:
            last_error = f"timeout: {err}"
        except httpx.TransportError as err:
            last_error = f"transport: {err}"
    latency = time.monotonic() - start
    if response is None:
        return SelectorResult(outcome=ParserFallback("unavailable", last_error),
                              latency_s=latency, selector_id="endpoint")

    prompt_tokens = completion_tokens = None
    content = ""
    try:
        payload = response.json()
        content = str(payload["choices"][0]["message"]["content"])
        usage = payload.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        completion_tokens = usage.get("completion_tokens")
    except (KeyError, IndexError, TypeError, ValueError) as err:
        return SelectorResult(outcome=ParserFallback("unavailable", f"bad envelope: {err}"),
                              latency_s=latency, raw_response=content,
                              selector_id="endpoint")

    stripped = content.strip()
    try:
        raw = json.loads(stripped)
    except ValueError:
        # Prose-wrapped JSON is recoverable text but still a non-strict output.
        reason = "non_strict" if ("{" in stripped and "}" in stripped) else "unparseable"
        return SelectorResult(outcome=ParserFallback(reason, stripped[:200]),
                              latency_s=latency, prompt_tokens=prompt_tokens,
                              completion_tokens=completion_tokens,
                              raw_response=content, selector_id="endpoint")

    outcome = validate_forecast(raw, shortlist, ctx.feasible, ctx.t_issue,
                                selector_id="endpoint", prompt_hash=prompt.prompt_hash)
    return SelectorResult(outcome=outcome, latency_s=latency,
                          prompt_tokens=prompt_tokens,
                          completion_tokens=completion_tokens,
                          raw_response=content, selector_id="endpoint")


def parse_action_line(text: str) -> str | ParserFallback:
    """Strict runtime action line: the first non-empty line must be one token."""
    for line in text.splitlines():
        stripped = line.strip()
        if stripped:
            if stripped in ACTION_IDS:
                return stripped
            return ParserFallback("bad_action_line", stripped[:80])
    return ParserFallback("bad_action_line", "<empty>")


def build_runtime_prompt(exec_state: WorldlineExecutionState, state: CompactState,
                         obs: RuntimeObservables, drift: float) -> PromptBundle:
    """Narrow runtime prompt: active forecast, live scene, authority, validity status."""
    forecast = exec_state.active
    payload = {
        "active_forecast": forecast.to_raw() if forecast else None,
        "authority": forecast.authority if forecast else None,
        "scene": state.to_dict(),
        "observables": {"front_gap_m": obs.front_gap_m, "min_ttc_s": obs.min_ttc_s,
                        "ego_lane": obs.ego_lane, "step": obs.step},
        "diagnostics": {"drift_score": drift, "buffer_status": exec_state.status,
                        "steps_executed": exec_state.steps_executed},
        "feasible_actions": [a for a in state.meta.feasible_action_ids],
    }
    system = _load_prompt(f"runtime_system_{PROMPT_VERSION}.txt")
    user = json.dumps(payload, sort_keys=True)
    digest = hashlib.sha256((system + "\x00" + user).encode()).hexdigest()
    return PromptBundle(system=system, user=user, mode="natural",
                        role_priority=(), step=obs.step, prompt_hash=digest)


@dataclass(frozen=True)
class RuntimeDecideResult:
    decision: TacticalDecision
    exec_state: WorldlineExecutionState
    latency_s: float
    parse_event: str | None  # "strict" | fallback reason | None when no parse happened
    raw_response: str = ""


def runtime_decide(exec_state: WorldlineExecutionState, state: CompactState,
                   obs: RuntimeObservables, source: str, cfg: DriftConfig, *,
                   analytical_top: CandidateAction | None = None,
                   endpoint: EndpointConfig | None = None,
                   api_key: str | None = None,
                   transport: httpx.BaseTransport | None = None,
                   latency: LatencyModel | None = None,
                   latency_rng: np.random.Generator | None = None) -> RuntimeDecideResult:
    """Per-step runtime decision from a rule-based or endpoint source.

    The rule-based source delegates entirely to the arbiter. An endpoint may
    choose among valid actions while the forecast passes its checks, but it
    can never push a decision past a failed check: overrides, fallbacks, and
    softening bind regardless of the returned action line.
    """
    decision, new_exec = arbitrate(exec_state, state, obs, cfg,
                                   analytical_top=analytical_top)
    if source == "rule_based":
        lat = (latency or LatencyModel()).sample_dec(latency_rng)
        return RuntimeDecideResult(decision, new_exec, lat, None)
    if source != "endpoint":
        raise ValueError(f"unknown runtime source {source!r}")
    if endpoint is None:
        raise ValueError("endpoint runtime requires an EndpointConfig")

    drift = decision.drift
    prompt = build_runtime_prompt(exec_state, state, obs, drift)
    start = time.monotonic()
    raw = ""
    intent: str | ParserFallback
    try:
        response = _post_chat(prompt, endpoint, api_key, transport)
        payload = response.json()
        raw = str(payload["choices"][0]["message"]["content"])
        intent = parse_action_line(raw)
    except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as err:
        intent = ParserFallback("unavailable", str(err))
    lat = time.monotonic() - start

    if isinstance(intent, ParserFallback):
        return RuntimeDecideResult(decision, new_exec, lat, intent.reason, raw)

    # Free choice is allowed only while the buffered checks pass and the
    # intent is feasible; provenance records the override source.
    if ACTION_IDS[intent] in state.meta.feasible_action_ids \
            and intent != decision.action_token:
        if decision.provenance == "buffered":
            decision = TacticalDecision(intent, "override", None, decision.drift,
                                        "endpoint_intent")
        elif decision.provenance == "reactive":
            decision = TacticalDecision(intent, "reactive", None, decision.drift,
                                        "endpoint_intent")
    return RuntimeDecideResult(decision, new_exec, lat, "strict", raw)
