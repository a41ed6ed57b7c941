"""Latency-decoupled planner-runtime for highway driving.

A slow strategic selector commits one role-typed world-line branch as a
typed, revocable forecast; a fast runtime reuses that forecast only while its
machine-checkable contract holds. The package bundles the seeded simulator,
the compact state encoder, branch generation and scoring, the forecast
contract, the runtime arbiter, selector implementations, and the matched-seed
measurement harness.
"""

from .actions import ACTION_IDS, ACTION_TOKENS, COMMIT_FAMILIES
from .arbiter import (DriftConfig, TacticalDecision, WorldlineExecutionState,
                      arbitrate, authority_threshold, check_invalid,
                      commit_execution, drift_score, idle_execution_state)
from .config import RunConfig, load_run_config, run_config_to_dict
from .contract import (ConditionAtom, ParserFallback, RuntimeObservables,
                       StrategicForecast, eval_atom, parse_atom, render_atom,
                       validate_forecast)
from .encoder import (CandidateAction, CompactState, NeighborVehicle,
                      encode_state, feasible_actions)
from .harness import run_cell, run_episode, run_sweep, verify_cell, verify_tree
from .metrics import (EpisodeRecord, MetricsSummary, effective_lag, emit_table,
                      summarize, wilson_interval)
from .scoring import (PrunedBranch, ScoringConfig, order_branches, score_all,
                      score_branch, shortlist)
from .selectors import (BALANCED_MODE_BLOCK, DefaultContract, EndpointConfig,
                        LatencyModel, PromptBundle, SelectionContext,
                        SelectorResult, build_strategic_prompt, pick_branch,
                        runtime_decide, select_analytical_top, select_scripted,
                        select_via_endpoint)
from .sim import (EnvConfig, SimState, StepOutcome, init_episode,
                  measure_observables, step_decision)
from .worldlines import (BranchSet, HAZARD_POOL, RiskConfig, WorldLineBranch,
                         collision_risk, generate_all, generate_beta,
                         generate_gamma, per_action_rng, rank_critical_actors,
                         rollout_alpha)

__version__ = "0.1.0"
