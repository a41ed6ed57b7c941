"""Evidence aggregation: episode records, sweep-cell metrics, and table emission.

Every metric is recomputable from the three evidence ledgers alone: E1 (the
closed-loop outcome trace), E2 (the forecast ledger), and E3 (the
prompt-contract counters). Means are seed means: per-episode values are
computed first, then averaged across episodes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

#: A step counts toward TTC danger when its measured min TTC sits below this
#: threshold (seconds), matching the default abort-atom example.
TTC_DANGER_S = 2.0

ACCEL_TOKEN = "FASTER"
DECEL_TOKEN = "SLOWER"
LANE_TOKENS = ("LANE_LEFT", "LANE_RIGHT")


@dataclass
class EpisodeRecord:
    """One episode's evidence: E1/E2/E3 ledger lines as plain dicts.

    The dicts here are exactly what gets serialized to the JSONL ledgers, so
    summaries computed from records equal summaries recomputed from disk.
    """

    seed: int
    mode: str
    e1: list[dict] = field(default_factory=list)
    e2: list[dict] = field(default_factory=list)
    e3: dict = field(default_factory=dict)

    @property
    def steps(self) -> list[dict]:
        return [line for line in self.e1 if line.get("kind") == "step"]

    @property
    def collided(self) -> bool:
        return any(line.get("collision") for line in self.steps)

    @property
    def strategic_calls(self) -> list[dict]:
        return [line for line in self.e2 if line.get("kind") == "strategic_call"]

    @property
    def invalidations(self) -> list[dict]:
        return [line for line in self.e2 if line.get("kind") == "invalidation"]


@dataclass(frozen=True)
class MetricsSummary:
    n_episodes: int
    no_collision_rate: float        # percent of episodes without a collision
    wilson_low: float               # Wilson 95% bounds on no-collision, percent
    wilson_high: float
    completion: float               # percent of the decision budget executed
    mean_speed_kmh: float
    flap_rate: float                # percent of consecutive FASTER/SLOWER reversals
    lane_flap_rate: float           # lane-change oscillation, logged separately
    ttc_danger: float               # percent of steps with min TTC below threshold
    strict_parse: float | None      # percent of parse events that were strict
    low_score_sel: float | None     # percent of commits below the shortlist top score
    mean_sel_latency_s: float | None
    mean_dec_latency_s: float | None
    effective_lag_s: float
    prompt_ktok_per_decision: float | None
    completion_ktok_per_decision: float | None

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "no_collision_rate": self.no_collision_rate,
            "wilson_low": self.wilson_low,
            "wilson_high": self.wilson_high,
            "completion": self.completion,
            "mean_speed_kmh": self.mean_speed_kmh,
            "flap_rate": self.flap_rate,
            "lane_flap_rate": self.lane_flap_rate,
            "ttc_danger": self.ttc_danger,
            "strict_parse": self.strict_parse,
            "low_score_sel": self.low_score_sel,
            "mean_sel_latency_s": self.mean_sel_latency_s,
            "mean_dec_latency_s": self.mean_dec_latency_s,
            "effective_lag_s": self.effective_lag_s,
            "prompt_ktok_per_decision": self.prompt_ktok_per_decision,
            "completion_ktok_per_decision": self.completion_ktok_per_decision,
        }


def effective_lag(mode: str, sel_latency_s: float, dec_latency_s: float,
                  horizon_s: float) -> float:
    """Effective residual lag: raw decision latency for the reactive direct
    driver, mean call cost minus the reuse horizon for buffered modes.

    Negative values mean the committed forecast covers more future time than
    the measured call cost.
    """
    if sel_latency_s < 0.0 or dec_latency_s < 0.0:
        raise ValueError("latencies must be >= 0")
    if mode == "reactive":
        return dec_latency_s
    if mode in ("dual", "deterministic"):
        return sel_latency_s + dec_latency_s - horizon_s
    raise ValueError(f"unknown mode {mode!r}")


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion, in percent."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    p_hat = successes / n
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2.0 * n)) / denom
    margin = (z / denom) * math.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n))
    low = max(center - margin, 0.0)
    high = min(center + margin, 1.0)
    return low * 100.0, high * 100.0


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _flap_pct(tokens: list[str], pair: tuple[str, ...]) -> float:
    if len(tokens) < 2:
        return 0.0
    reversals = sum(
        1 for a, b in zip(tokens, tokens[1:])
        if a in pair and b in pair and a != b
    )
    return 100.0 * reversals / (len(tokens) - 1)


def summarize(records: list[EpisodeRecord], *, mode: str, horizon_s: float,
              episode_steps: int) -> MetricsSummary:
    """Aggregate one sweep cell. Episode-level values first, then seed means."""
    if not records:
        raise ValueError("no records to summarize")

    completions: list[float] = []
    speeds: list[float] = []
    flaps: list[float] = []
    lane_flaps: list[float] = []
    dangers: list[float] = []
    low_scores: list[float] = []
    parse_rates: list[float] = []
    sel_means: list[float] = []
    dec_means: list[float] = []
    prompt_tokens = 0
    completion_tokens = 0
    any_tokens = False
    decisions_total = 0
    survivors = 0

    for rec in records:
        steps = rec.steps
        if not rec.collided:
            survivors += 1
        completions.append(100.0 * len(steps) / episode_steps)
        if steps:
            speeds.append(sum(s["speed_kmh"] for s in steps) / len(steps))
            dangers.append(100.0 * sum(1 for s in steps if s["min_ttc_s"] < TTC_DANGER_S)
                           / len(steps))
            tokens = [s["action"] for s in steps]
            flaps.append(_flap_pct(tokens, (ACCEL_TOKEN, DECEL_TOKEN)))
            lane_flaps.append(_flap_pct(tokens, LANE_TOKENS))
        decisions_total += len(steps)

        calls = rec.strategic_calls
        commits = [c for c in calls if c.get("selected_branch_id")]
        if commits:
            low = sum(1 for c in commits
                      if c["selected_s_agg"] < c["shortlist_max_s_agg"])
            low_scores.append(100.0 * low / len(commits))

        e3 = rec.e3
        sel = e3.get("sel_latencies_s", [])
        dec = e3.get("dec_latencies_s", [])
        if sel:
            sel_means.append(sum(sel) / len(sel))
        if dec:
            dec_means.append(sum(dec) / len(dec))
        parse_total = e3.get("strategic_calls", 0) + e3.get("runtime_parse_calls", 0)
        strict_total = e3.get("strict_parses", 0) + e3.get("runtime_strict", 0)
        if parse_total:
            parse_rates.append(100.0 * strict_total / parse_total)
        if e3.get("prompt_tokens") is not None:
            any_tokens = True
            prompt_tokens += e3["prompt_tokens"]
            completion_tokens += e3.get("completion_tokens") or 0

    n = len(records)
    mean_sel = _mean(sel_means)
    mean_dec = _mean(dec_means)
    lag = effective_lag(mode, mean_sel or 0.0, mean_dec or 0.0, horizon_s)
    low, high = wilson_interval(survivors, n)

    return MetricsSummary(
        n_episodes=n,
        no_collision_rate=100.0 * survivors / n,
        wilson_low=low,
        wilson_high=high,
        completion=_mean(completions) or 0.0,
        mean_speed_kmh=_mean(speeds) or 0.0,
        flap_rate=_mean(flaps) or 0.0,
        lane_flap_rate=_mean(lane_flaps) or 0.0,
        ttc_danger=_mean(dangers) or 0.0,
        strict_parse=_mean(parse_rates),
        low_score_sel=_mean(low_scores),
        mean_sel_latency_s=mean_sel,
        mean_dec_latency_s=mean_dec,
        effective_lag_s=lag,
        prompt_ktok_per_decision=(prompt_tokens / decisions_total / 1000.0
                                  if any_tokens and decisions_total else None),
        completion_ktok_per_decision=(completion_tokens / decisions_total / 1000.0
                                      if any_tokens and decisions_total else None),
    )


TABLE_COLUMNS = ("cell", "mode", "no_coll_pct", "wilson_95", "comp_pct",
                 "speed_kmh", "flap_pct", "ttc_pct", "eff_lag_s", "tok_k_pc",
                 "low_pct")


def _fmt_pct(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def _row_cells(cell_id: str, mode: str, ms: MetricsSummary) -> list[str]:
    tok = ("n/a" if ms.prompt_ktok_per_decision is None
           else f"{ms.prompt_ktok_per_decision:.2f}/{ms.completion_ktok_per_decision:.2f}")
    return [
        cell_id,
        mode,
        _fmt_pct(ms.no_collision_rate),
        f"[{ms.wilson_low:.1f},{ms.wilson_high:.1f}]",
        _fmt_pct(ms.completion),
        f"{ms.mean_speed_kmh:.1f}",
        _fmt_pct(ms.flap_rate),
        _fmt_pct(ms.ttc_danger),
        f"{ms.effective_lag_s:.2f}",
        tok,
        _fmt_pct(ms.low_score_sel),
    ]


def emit_table(summaries: list[tuple[str, str, MetricsSummary]],
               fmt: str = "markdown") -> str:
    """Render cell summaries as markdown or CSV with identical numbers.

    ``summaries`` is a list of (cell id, mode, summary) triples; the column
    order is fixed and percentages carry one decimal.
    """
    if not summaries:
        raise ValueError("nothing to tabulate")
    rows = [_row_cells(cell_id, mode, ms) for cell_id, mode, ms in summaries]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(TABLE_COLUMNS) + " |",
                 "|" + "|".join(["---"] * len(TABLE_COLUMNS)) + "|"]
        lines.extend("| " + " | ".join(row) + " |" for row in rows)
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")
