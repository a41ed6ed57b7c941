"""Episode and sweep orchestration with E1/E2/E3 evidence ledgers.

Episode loops implement the three measurement conditions:

* ``reactive``: a per-step selection from the live scene, no buffered
  foresight; the per-call latency is the decision latency.
* ``dual``: a strategic selection at the start and at every refresh boundary,
  runtime arbitration at every step over the buffered forecast.
* ``deterministic``: analytical-top commits re-executed under rule-based
  arbitration only, the end-to-end determinism diagnostic.

All modes share the identical simulator, encoder, generator, scoring, and
metrics paths, and every compared condition runs the same matched seed list.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .actions import ACTION_IDS, token_for_id
from .arbiter import (TacticalDecision, WorldlineExecutionState,
                      commit_execution, drift_score, idle_execution_state)
from .config import RunConfig, apply_axis, run_config_to_dict, SWEEP_AXES
from .contract import (RuntimeObservables, StrategicForecast, eval_atom,
                       render_atom, with_drift)
from .encoder import CandidateAction, encode_state, feasible_actions
from .ledger_schema import validate_line
from .metrics import EpisodeRecord, MetricsSummary, summarize
from .scoring import PrunedBranch, order_branches, score_all, shortlist
from .selectors import (DefaultContract, SelectionContext, SelectorResult,
                        build_strategic_prompt, pick_branch, runtime_decide,
                        select_analytical_top, select_scripted,
                        select_via_endpoint)
from .sim import init_episode, measure_observables, step_decision
from .worldlines import generate_all


class _Counters:
    """E3 prompt-contract counters for one episode."""

    def __init__(self) -> None:
        self.decisions = 0
        self.strategic_calls = 0
        self.strict_parses = 0
        self.parser_fallbacks: dict[str, int] = {}
        self.runtime_parse_calls = 0
        self.runtime_strict = 0
        self.runtime_fallbacks: dict[str, int] = {}
        self.sel_latencies: list[float] = []
        self.dec_latencies: list[float] = []
        self.prompt_tokens: int | None = None
        self.completion_tokens: int | None = None

    def record_strategic(self, result: SelectorResult) -> None:
        self.strategic_calls += 1
        self.sel_latencies.append(result.latency_s)
        if isinstance(result.outcome, StrategicForecast):
            self.strict_parses += 1
        else:
            reason = result.outcome.reason
            self.parser_fallbacks[reason] = self.parser_fallbacks.get(reason, 0) + 1
        self._add_tokens(result.prompt_tokens, result.completion_tokens)

    def record_runtime_parse(self, event: str | None) -> None:
        if event is None:
            return
        self.runtime_parse_calls += 1
        if event == "strict":
            self.runtime_strict += 1
        else:
            self.runtime_fallbacks[event] = self.runtime_fallbacks.get(event, 0) + 1

    def _add_tokens(self, prompt: int | None, completion: int | None) -> None:
        if prompt is None and completion is None:
            return
        self.prompt_tokens = (self.prompt_tokens or 0) + (prompt or 0)
        self.completion_tokens = (self.completion_tokens or 0) + (completion or 0)

    def snapshot(self, seed: int) -> dict:
        return {
            "kind": "contract_counters",
            "seed": seed,
            "decisions": self.decisions,
            "strategic_calls": self.strategic_calls,
            "strict_parses": self.strict_parses,
            "parser_fallbacks": dict(sorted(self.parser_fallbacks.items())),
            "runtime_parse_calls": self.runtime_parse_calls,
            "runtime_strict": self.runtime_strict,
            "runtime_fallbacks": dict(sorted(self.runtime_fallbacks.items())),
            "sel_latencies_s": list(self.sel_latencies),
            "dec_latencies_s": list(self.dec_latencies),
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


def _build_shortlist(compact, actions, cfg: RunConfig, seed: int, step: int):
    branch_set = generate_all(compact, actions, cfg.horizon_s, cfg.roles_enabled,
                              np.random.SeedSequence([seed, step]), cfg.risk)
    ordered = order_branches(score_all(branch_set, cfg.scoring))
    visible = shortlist(ordered, cfg.scoring.shortlist_k, cfg.scoring.diversity)
    return branch_set, visible


def _default_contract(cfg: RunConfig) -> DefaultContract:
    gap_floor = cfg.drift.gap_floor_m
    ttc_floor = cfg.drift.ttc_floor_s
    return DefaultContract(
        horizon_steps=cfg.horizon_steps,
        validity=(f"front_gap_ge:{2.0 * gap_floor:.1f}",
                  f"min_ttc_gt:{2.0 * ttc_floor:.1f}"),
        abort=("min_ttc_lt:2.0",),
    )


def _strategic_call(cfg: RunConfig, visible: list[PrunedBranch], compact,
                    actions: list[CandidateAction], step: int,
                    call_index: int, lat_rng) -> SelectorResult:
    ctx = SelectionContext(
        t_issue=step - 1,
        feasible=actions,
        fallback_token=token_for_id(compact.meta.fallback_action_id),
        call_index=call_index,
        latency=cfg.latency,
        latency_rng=lat_rng,
    )
    contract = _default_contract(cfg)
    if cfg.selector == "analytical_top":
        return select_analytical_top(visible, contract, ctx)
    if cfg.selector == "endpoint":
        prompt = build_strategic_prompt(visible, compact, cfg.balance, step,
                                        cfg.roles_enabled)
        key = os.environ.get(cfg.endpoint.api_key_env) if cfg.endpoint else None
        return select_via_endpoint(prompt, cfg.endpoint, shortlist=visible,
                                   ctx=ctx, api_key=key)
    return select_scripted(visible, cfg.selector, contract, ctx)


def _atom_eval_line(exec_state: WorldlineExecutionState, obs: RuntimeObservables,
                    step: int, call_index: int, cfg: RunConfig) -> dict:
    forecast = exec_state.active
    drift = drift_score(exec_state, obs, cfg.drift)
    live = with_drift(obs, drift)
    return {
        "kind": "atom_eval",
        "step": step,
        "call_index": call_index,
        "drift": drift,
        "validity": [{"atom": render_atom(a), "holds": eval_atom(a, live)}
                     for a in forecast.validity],
        "abort": [{"atom": render_atom(a), "fired": eval_atom(a, live)}
                  for a in forecast.abort],
    }


def run_episode(cfg: RunConfig, seed: int) -> EpisodeRecord:
    """Execute one full episode for the configured mode and return its evidence.

    Terminates at the decision budget or the first collision, whichever comes
    first. Endpoint unavailability degrades to fallback actions and never
    aborts the episode.
    """
    state = init_episode(seed, cfg.env)
    counters = _Counters()
    record = EpisodeRecord(seed=seed, mode=cfg.mode)
    record.e1.append({
        "kind": "episode_header",
        "seed": seed,
        "mode": cfg.mode,
        "selector": cfg.selector,
        "horizon_s": cfg.horizon_s,
        "env": cfg.env.to_dict(),
    })

    exec_state = idle_execution_state()
    call_index = -1
    lat_rng = np.random.default_rng(np.random.SeedSequence([seed, 10_000_019]))
    api_key = (os.environ.get(cfg.endpoint.api_key_env)
               if cfg.endpoint is not None else None)

    for step in range(cfg.episode_steps):
        compact = encode_state(state, cfg.retain_n,
                               gap_floor_m=cfg.drift.gap_floor_m,
                               ttc_floor_s=cfg.drift.ttc_floor_s)
        actions = feasible_actions(compact)
        front_gap, _, min_ttc = measure_observables(state, state.ego.lane)
        obs = RuntimeObservables(front_gap_m=front_gap, min_ttc_s=min_ttc,
                                 drift_score=0.0, ego_lane=state.ego.lane, step=step)

        if cfg.mode == "reactive":
            decision, dec_latency, parse_event = _reactive_decision(
                cfg, compact, actions, obs, seed, step, lat_rng, api_key)
            counters.record_runtime_parse(parse_event)
        else:
            analytical_top = None
            if exec_state.active is None:
                branch_set, visible = _build_shortlist(compact, actions, cfg, seed, step)
                analytical_top = min(visible, key=lambda pb: pb.rank).branch.action
                call_index += 1
                result = _strategic_call(cfg, visible, compact, actions, step,
                                         call_index, lat_rng)
                counters.record_strategic(result)
                forecast = result.outcome
                committed = None
                if isinstance(forecast, StrategicForecast):
                    committed = next(pb for pb in visible
                                     if pb.branch.branch_id == forecast.branch_id)
                    exec_state = commit_execution(forecast, committed, cfg.drift)
                record.e2.append(_strategic_line(call_index, step, result,
                                                 branch_set, visible, cfg))
            if exec_state.active is not None:
                # Re-measure against the committed lane so drift and atom
                # checks compare like for like; the TTC scan still unions the
                # ego's own lane so hard safety keeps watching it.
                front_gap, _, min_ttc = measure_observables(
                    state, exec_state.expected_lane)
                obs = RuntimeObservables(front_gap_m=front_gap, min_ttc_s=min_ttc,
                                         drift_score=0.0, ego_lane=state.ego.lane,
                                         step=step)
                record.e2.append(_atom_eval_line(exec_state, obs, step,
                                                 call_index, cfg))
            rd = runtime_decide(exec_state, compact, obs, cfg.runtime_source,
                                cfg.drift,
                                analytical_top=analytical_top,
                                endpoint=cfg.endpoint, api_key=api_key,
                                latency=cfg.latency, latency_rng=lat_rng)
            decision, exec_state = rd.decision, rd.exec_state
            dec_latency = rd.latency_s
            counters.record_runtime_parse(rd.parse_event)
            if decision.invalidation_reason is not None:
                record.e2.append({"kind": "invalidation", "step": step,
                                  "call_index": max(call_index, 0),
                                  "reason": decision.invalidation_reason})

        counters.dec_latencies.append(dec_latency)
        counters.decisions += 1

        # Last-resort guard; decisions are feasible by construction.
        if ACTION_IDS[decision.action_token] not in compact.meta.feasible_action_ids:
            decision = TacticalDecision(
                token_for_id(compact.meta.fallback_action_id), "override",
                None, decision.drift, "guard_infeasible")

        outcome = step_decision(state, decision.action_token)
        status = exec_state.status if cfg.mode != "reactive" else "none"
        record.e1.append({
            "kind": "step",
            "step": step,
            "action": decision.action_token,
            "action_id": ACTION_IDS[decision.action_token],
            "provenance": decision.provenance,
            "invalidation_reason": decision.invalidation_reason,
            "reason": decision.reason,
            "drift": decision.drift,
            "status": status,
            "speed_kmh": outcome.ego_speed_kmh,
            "ego_lane": obs.ego_lane,
            "front_gap_m": obs.front_gap_m,
            "min_ttc_s": obs.min_ttc_s,
            "headway_s": min(obs.front_gap_m / max(state.ego.speed_ms, 0.1),
                             cfg.env.observable_sentinel),
            "collision": outcome.collision,
            "trace": outcome.trace,
        })
        state = outcome.new_state
        if outcome.collision:
            break

    record.e3 = counters.snapshot(seed)
    return record


def _reactive_decision(cfg: RunConfig, compact, actions, obs, seed, step,
                       lat_rng, api_key):
    """Per-step selection from the live scene (no forecast buffer)."""
    _, visible = _build_shortlist(compact, actions, cfg, seed, step)
    top = min(visible, key=lambda pb: pb.rank)

    # Hard safety pressure binds in every mode.
    if obs.min_ttc_s < cfg.drift.ttc_floor_s or obs.front_gap_m < cfg.drift.gap_floor_m:
        decision = TacticalDecision("SLOWER", "override", None, 0.0, "hard_safety")
        return decision, cfg.latency.sample_dec(lat_rng), None

    if cfg.selector == "endpoint":
        rd = runtime_decide(idle_execution_state(), compact, obs, "endpoint",
                            cfg.drift, analytical_top=top.branch.action,
                            endpoint=cfg.endpoint, api_key=api_key,
                            latency=cfg.latency, latency_rng=lat_rng)
        return rd.decision, rd.latency_s, rd.parse_event

    policy = "top" if cfg.selector == "analytical_top" else cfg.selector
    pick = pick_branch(visible, policy, step)
    decision = TacticalDecision(pick.branch.action.token, "reactive", None, 0.0,
                                f"scripted:{policy}")
    return decision, cfg.latency.sample_dec(lat_rng), None


def _strategic_line(call_index: int, step: int, result: SelectorResult,
                    branch_set, visible: list[PrunedBranch],
                    cfg: RunConfig) -> dict:
    outcome = result.outcome
    selected_id = None
    selected_s_agg = None
    forecast_raw = None
    fallback_reason = None
    if isinstance(outcome, StrategicForecast):
        selected_id = outcome.branch_id
        selected_s_agg = next(pb.s_agg for pb in visible
                              if pb.branch.branch_id == selected_id)
        forecast_raw = dict(outcome.to_raw(), t_issue=outcome.t_issue)
    else:
        fallback_reason = outcome.reason
    return {
        "kind": "strategic_call",
        "call_index": call_index,
        "step": step,
        "t_issue": step - 1,
        "selector": cfg.selector,
        "prompt_mode": cfg.balance,
        "branch_set": branch_set.to_jsonable(),
        "shortlist": [pb.to_dict() for pb in visible],
        "selected_branch_id": selected_id,
        "selected_s_agg": selected_s_agg,
        "shortlist_max_s_agg": max(pb.s_agg for pb in visible),
        "forecast": forecast_raw,
        "fallback_reason": fallback_reason,
        "latency_s": result.latency_s,
        "prompt_hash": (outcome.provenance.prompt_hash
                        if isinstance(outcome, StrategicForecast) else None),
        "prompt_tokens": result.prompt_tokens,
        "completion_tokens": result.completion_tokens,
    }


def run_cell(cfg: RunConfig, out_dir: Path | None = None,
             cell_id: str = "cell") -> tuple[MetricsSummary, list[EpisodeRecord]]:
    """Run the full matched seed bank for one configuration."""
    records = [run_episode(cfg, seed) for seed in cfg.seeds]
    summary = summarize(records, mode=cfg.mode, horizon_s=cfg.horizon_s,
                        episode_steps=cfg.episode_steps)
    if out_dir is not None:
        persist_cell(out_dir, cell_id, cfg, records, summary)
    return summary, records


def run_sweep(cfg: RunConfig, axis: str, values: list,
              out_dir: Path | None = None) -> list[tuple[str, MetricsSummary | None]]:
    """One mechanism sweep: the same seed bank per cell, cells independent.

    A failing cell is recorded (summary ``None`` plus an error file when
    persisting) and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    results: list[tuple[str, MetricsSummary | None]] = []
    for value in values:
        cell_id, cell_cfg = apply_axis(cfg, axis, value)
        try:
            summary, _ = run_cell(cell_cfg, out_dir, cell_id)
            results.append((cell_id, summary))
        except Exception as err:  # noqa: BLE001 - partial cell failure is recorded
            if out_dir is not None:
                cell_dir = Path(out_dir) / cell_id
                cell_dir.mkdir(parents=True, exist_ok=True)
                (cell_dir / "error.txt").write_text(f"{type(err).__name__}: {err}\n")
            results.append((cell_id, None))
    return results


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def persist_cell(out_dir: Path | str, cell_id: str, cfg: RunConfig,
                 records: list[EpisodeRecord], summary: MetricsSummary) -> Path:
    cell_dir = Path(out_dir) / cell_id
    cell_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        for suffix, lines in (("e1", rec.e1), ("e2", rec.e2), ("e3", [rec.e3])):
            path = cell_dir / f"seed{rec.seed:04d}.{suffix}.jsonl"
            path.write_text("".join(_dump_line(line) for line in lines))
    (cell_dir / "summary.json").write_text(json.dumps({
        "cell_id": cell_id,
        "mode": cfg.mode,
        "selector": cfg.selector,
        "horizon_s": cfg.horizon_s,
        "episode_steps": cfg.episode_steps,
        "seeds": list(cfg.seeds),
        "config": run_config_to_dict(cfg),
        "summary": summary.to_dict(),
    }, sort_keys=True, indent=2) + "\n")
    return cell_dir


def load_cell_records(cell_dir: Path | str) -> tuple[dict, list[EpisodeRecord]]:
    cell_dir = Path(cell_dir)
    meta = json.loads((cell_dir / "summary.json").read_text())
    records = []
    for seed in meta["seeds"]:
        rec = EpisodeRecord(seed=seed, mode=meta["mode"])
        for suffix, target in (("e1", rec.e1), ("e2", rec.e2)):
            path = cell_dir / f"seed{seed:04d}.{suffix}.jsonl"
            target.extend(json.loads(line) for line in path.read_text().splitlines())
        e3_path = cell_dir / f"seed{seed:04d}.e3.jsonl"
        rec.e3 = json.loads(e3_path.read_text().splitlines()[0])
        records.append(rec)
    return meta, records


def verify_cell(cell_dir: Path | str) -> dict:
    """Ledger recompute pass: schema-check every line and reproduce the summary.

    Returns a report with ``ok`` plus any field-level mismatches; the summary
    must be recomputable from E1-E3 alone, exactly.
    """
    meta, records = load_cell_records(cell_dir)
    schema_errors = []
    for rec in records:
        for line in [*rec.e1, *rec.e2, rec.e3]:
            try:
                validate_line(line)
            except Exception as err:  # noqa: BLE001 - collected into the report
                schema_errors.append(f"seed {rec.seed}: {err}")
    recomputed = summarize(records, mode=meta["mode"], horizon_s=meta["horizon_s"],
                           episode_steps=meta["episode_steps"])
    stored = meta["summary"]
    mismatches = {
        key: {"stored": stored.get(key), "recomputed": value}
        for key, value in recomputed.to_dict().items()
        if stored.get(key) != value
    }
    return {
        "cell_id": meta["cell_id"],
        "ok": not mismatches and not schema_errors,
        "mismatches": mismatches,
        "schema_errors": schema_errors,
    }


def verify_tree(path: Path | str) -> list[dict]:
    """Verify a cell directory, or every cell found under a run directory."""
    path = Path(path)
    if (path / "summary.json").exists():
        return [verify_cell(path)]
    reports = []
    for child in sorted(path.iterdir()):
        if child.is_dir() and (child / "summary.json").exists():
            reports.append(verify_cell(child))
    if not reports:
        raise FileNotFoundError(f"no summary.json found under {path}")
    return reports
