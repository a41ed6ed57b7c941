"""Command-line entry points: episode, sweep, table, verify, init-config."""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from .config import (ROLE_CELLS, RunConfig, SWEEP_AXES, apply_axis,
                     load_run_config, write_default_config)
from .harness import run_cell, run_sweep, verify_tree
from .metrics import MetricsSummary, emit_table


def _base_config(config_path: str | None) -> RunConfig:
    return load_run_config(config_path) if config_path else RunConfig()


def _with_overrides(cfg: RunConfig, mode, selector, runtime, horizon, roles,
                    budget, drift, balance) -> RunConfig:
    if mode:
        cfg = replace(cfg, mode=mode)
    if selector:
        cfg = replace(cfg, selector=selector)
    if runtime:
        cfg = replace(cfg, runtime_source=runtime)
    if mode == "deterministic":
        cfg = replace(cfg, selector="analytical_top", runtime_source="rule_based")
    if horizon is not None:
        cfg = replace(cfg, horizon_s=float(horizon))
    if roles:
        _, cfg = apply_axis(cfg, "roles", roles)
    if balance:
        cfg = replace(cfg, balance=balance)
    if budget is not None:
        cfg = replace(cfg, scoring=replace(cfg.scoring, shortlist_k=int(budget)))
    if drift is not None:
        tau = float(drift)
        cfg = replace(cfg, drift=replace(cfg.drift, tau_low=tau, tau_med=tau,
                                         tau_high=tau))
    return cfg


@click.group()
def main() -> None:
    """Forecast-buffered highway planner-runtime harness."""


@main.command()
@click.option("--mode", type=click.Choice(["reactive", "dual", "deterministic"]))
@click.option("--selector", type=str, default=None)
@click.option("--runtime", "runtime_source",
              type=click.Choice(["rule_based", "endpoint"]), default=None)
@click.option("--seed", type=int, default=None, help="single seed; default runs the bank")
@click.option("--horizon", type=float, default=None)
@click.option("--roles", type=click.Choice(sorted(ROLE_CELLS)), default=None)
@click.option("--budget", type=int, default=None)
@click.option("--drift", type=float, default=None)
@click.option("--balance", type=click.Choice(["natural", "balanced"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def episode(mode, selector, runtime_source, seed, horizon, roles, budget, drift,
            balance, config_path, out_dir):
    """Run the episode protocol for one configuration and print its summary row."""
    cfg = _with_overrides(_base_config(config_path), mode, selector,
                          runtime_source, horizon, roles, budget, drift, balance)
    if seed is not None:
        cfg = replace(cfg, seeds=(seed,))
    summary, _ = run_cell(cfg, Path(out_dir) if out_dir else None, "episode")
    click.echo(emit_table([("episode", cfg.mode, summary)], "markdown"))


@main.command()
@click.option("--axis", type=click.Choice(sorted(SWEEP_AXES)), required=True)
@click.option("--values", type=str, default=None,
              help="comma-separated cell values; defaults to the full axis grid")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--mode", type=click.Choice(["reactive", "dual", "deterministic"]))
@click.option("--selector", type=str, default=None)
def sweep(axis, values, config_path, out_dir, mode, selector):
    """Run one mechanism sweep over the matched seed bank."""
    cfg = _with_overrides(_base_config(config_path), mode, selector, None, None,
                          None, None, None, None)
    if values is None:
        cell_values = list(SWEEP_AXES[axis])
    elif axis == "roles":
        cell_values = values.split(",")
    elif axis == "budget":
        cell_values = [int(v) for v in values.split(",")]
    else:
        cell_values = [float(v) for v in values.split(",")]
    results = run_sweep(cfg, axis, cell_values,
                        Path(out_dir) if out_dir else None)
    rows = [(cell_id, cfg.mode, ms) for cell_id, ms in results if ms is not None]
    failed = [cell_id for cell_id, ms in results if ms is None]
    if rows:
        click.echo(emit_table(rows, "markdown"))
    for cell_id in failed:
        click.echo(f"cell {cell_id}: FAILED", err=True)


@main.command()
@click.option("--in", "in_dir", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv"]),
              default="markdown")
def table(in_dir, fmt):
    """Re-emit the result table from persisted cell summaries."""
    root = Path(in_dir)
    candidates = [root] if (root / "summary.json").exists() else sorted(root.iterdir())
    rows = []
    for cell_dir in candidates:
        summary_path = Path(cell_dir) / "summary.json"
        if not summary_path.exists():
            continue
        meta = json.loads(summary_path.read_text())
        rows.append((meta["cell_id"], meta["mode"],
                     MetricsSummary(**meta["summary"])))
    if not rows:
        raise click.ClickException(f"no summary.json found under {in_dir}")
    click.echo(emit_table(rows, fmt))


@main.command()
@click.option("--in", "in_dir", type=click.Path(exists=True), required=True)
def verify(in_dir):
    """Recompute every summary from its ledgers and schema-check all lines."""
    reports = verify_tree(in_dir)
    failed = False
    for report in reports:
        status = "ok" if report["ok"] else "MISMATCH"
        click.echo(f"{report['cell_id']}: {status}")
        if not report["ok"]:
            failed = True
            for key, diff in report["mismatches"].items():
                click.echo(f"  {key}: stored={diff['stored']} "
                           f"recomputed={diff['recomputed']}")
            for err in report["schema_errors"]:
                click.echo(f"  schema: {err}")
    if failed:
        sys.exit(1)


@main.command("init-config")
@click.option("--out", "out_path", type=click.Path(), default="wldrive.yaml")
def init_config(out_path):
    """Write the full default configuration (every tunable constant) to YAML."""
    write_default_config(out_path)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
