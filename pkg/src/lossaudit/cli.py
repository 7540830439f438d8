"""Command-line pipeline: synth -> estimate-loss / simulate / tolerance-grid / scorecard.

Every subcommand reads and writes files, echoes its parameters into the
output for provenance, and is deterministic given its inputs and seed.
Exit codes: 0 success, 1 input error, 2 statistical guard tripped.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import loss as loss_mod
from . import plots
from .errors import InputError, StatGuardError
from .events import join_sessions, parse_event_log, split_by_source, write_event_log
from .scorecard import (
    MetricDefinition,
    ScorecardConfig,
    build_scorecard,
    write_scorecard,
)
from .simulate import (
    DEFAULT_GRID_ALPHA,
    DEFAULT_MAX_LOSS,
    PlatformProfile,
    arms_from_config,
    default_lost_scenario,
    parse_flat_config,
    simulate_treatment_effect,
    tolerance_grid,
    write_tolerance_grid,
)
from .synth import apply_loss, generate_population, spec_from_dict, write_ground_truth


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except StatGuardError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (InputError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
def main() -> None:
    """Telemetry-loss measurement and loss-aware experiment analysis."""


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="Synth spec JSON.")
@click.option("--output-dir", required=True, type=click.Path(), help="Directory for the emitted files.")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--seed", type=int, default=None, help="Override the config's seed.")
@_guarded
def synth(config_path: str, output_dir: str, fmt: str, seed: int | None) -> None:
    """Generate a synthetic population, apply loss, and write logs plus ground truth."""
    with open(config_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if seed is not None:
        doc["seed"] = seed
    spec, mechanisms = spec_from_dict(doc)
    full_log, base_truth = generate_population(spec)
    observed_log, truth = apply_loss(full_log, mechanisms, spec.seed, truth=base_truth)

    os.makedirs(output_dir, exist_ok=True)
    ext = "jsonl" if fmt == "jsonl" else "csv"
    full_path = os.path.join(output_dir, f"events_full.{ext}")
    observed_path = os.path.join(output_dir, f"events_observed.{ext}")
    truth_path = os.path.join(output_dir, "ground_truth.json")
    write_event_log(full_log, full_path, fmt)
    write_event_log(observed_log, observed_path, fmt)
    write_ground_truth(truth, truth_path, params={"config": config_path, "format": fmt, "seed": spec.seed})
    click.echo(f"wrote {full_path}, {observed_path}, {truth_path}")


# ---------------------------------------------------------------------------
# estimate-loss
# ---------------------------------------------------------------------------


@main.command("estimate-loss")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True), help="Observed event log.")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--method", type=click.Choice(["anchor", "sequence"]), default="anchor", show_default=True)
@click.option("--server-input", type=click.Path(exists=True), default=None,
              help="Separate server log for the anchor method (defaults to the input's server events).")
@click.option("--min-sequence-size", type=int, default=loss_mod.DEFAULT_MIN_SEQUENCE_SIZE, show_default=True)
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--plot", "plot_path", type=click.Path(), default=None, help="Optional PNG of the report.")
@_guarded
def estimate_loss(
    input_path: str,
    fmt: str,
    method: str,
    server_input: str | None,
    min_sequence_size: int,
    output_path: str,
    plot_path: str | None,
) -> None:
    """Estimate absolute telemetry loss per event type (anchor or sequence method)."""
    log = parse_event_log(input_path, fmt)  # type: ignore[arg-type]
    if method == "anchor":
        server_log = parse_event_log(server_input, fmt) if server_input else None  # type: ignore[arg-type]
        rows = loss_mod.anchor_report(log, server_log)
    else:
        rows = loss_mod.sequence_report(log, min_sequence_size)
    params = {
        "input": input_path,
        "method": method,
        "min_sequence_size": min_sequence_size if method == "sequence" else "",
        "server_input": server_input or "",
    }
    loss_mod.write_loss_report(rows, output_path, params)
    if plot_path:
        plots.plot_loss_report(rows, plot_path)
    click.echo(f"wrote {output_path}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="Flat key=value summary-statistics config.")
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--plot", "plot_path", type=click.Path(), default=None)
@_guarded
def simulate(config_path: str, output_path: str, plot_path: str | None) -> None:
    """Reconstruct the no-loss treatment effect for one or more scenarios."""
    cfg = parse_flat_config(config_path)
    beta_raw = cfg.pop("beta_int", None)
    ctrl, trt, scenario, alpha = arms_from_config(cfg)
    if beta_raw is not None:
        betas = [float(x) for x in beta_raw.split(",")]
        cfg["beta_int"] = beta_raw
    else:
        # no domain knowledge: sweep (0, 2 * metric sd)
        betas = [float(b) for b in np.linspace(0.0, 2.0 * float(np.sqrt(ctrl.variance)), 9)]
    results = [(b, simulate_treatment_effect(ctrl, trt, replace(scenario, beta_int=b))) for b in betas]
    with open(output_path, "w", encoding="utf-8", newline="") as fh:
        for k in sorted(cfg):
            fh.write(f"# {k}={cfg[k]}\n")
        fh.write(f"# config={config_path}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["beta_int", "delta", "se", "z", "p", "lost_mean_trt", "full_variance_ctrl", "full_variance_trt", "significant"]
        )
        for b, r in results:
            writer.writerow(
                [repr(b), repr(r.delta), repr(r.se), repr(r.z), repr(r.p_value),
                 repr(r.lost_mean_trt), repr(r.full_variance_ctrl), repr(r.full_variance_trt),
                 str(r.p_value < alpha).lower()]
            )
    if plot_path:
        plots.plot_simulation(results, plot_path, alpha)
    click.echo(f"wrote {output_path}")


# ---------------------------------------------------------------------------
# tolerance-grid
# ---------------------------------------------------------------------------


@main.command("tolerance-grid")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="Flat key=value platform profile (mean_ctrl, var_ctrl, n_ctrl, lost_mean_ctrl, lost_sd_ctrl, ...).")
@click.option("--sample-input", type=click.Path(exists=True), default=None,
              help="Metric sample (one value per line) to derive the lost stratum from its bottom decile.")
@click.option("--l-max", type=float, default=DEFAULT_MAX_LOSS, show_default=True)
@click.option("--l-steps", type=int, default=21, show_default=True)
@click.option("--delta2-max", type=float, default=None,
              help="Top of the lost-delta axis [default: min(30% of mean, 50% of sd)].")
@click.option("--delta2-steps", type=int, default=21, show_default=True)
@click.option("--alpha", type=float, default=None, help="Significance level [default: config alpha or 0.01].")
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--plot", "plot_path", type=click.Path(), default=None)
@_guarded
def tolerance_grid_cmd(
    config_path: str,
    sample_input: str | None,
    l_max: float,
    l_steps: int,
    delta2_max: float | None,
    delta2_steps: int,
    alpha: float | None,
    output_path: str,
    plot_path: str | None,
) -> None:
    """Sweep loss rates against lost-delta scenarios and flag the safe zone."""
    cfg = parse_flat_config(config_path)
    if not (0.0 <= l_max < 1.0) or l_steps < 1 or delta2_steps < 1:
        raise ValueError("invalid grid ranges: need 0 <= l-max < 1 and positive step counts")
    if sample_input:
        with open(sample_input, "r", encoding="utf-8") as fh:
            sample = [float(line) for line in fh if line.strip()]
        scen = default_lost_scenario(sample)
        cfg.setdefault("lost_mean_ctrl", repr(scen.lost_mean_ctrl))
        cfg.setdefault("lost_sd_ctrl", repr(scen.lost_sd_ctrl))
    profile = PlatformProfile(
        mean=float(cfg["mean_ctrl"]),
        var_ctrl=float(cfg["var_ctrl"]),
        n_ctrl=int(float(cfg["n_ctrl"])),
        lost_mean=float(cfg["lost_mean_ctrl"]),
        lost_sd=float(cfg["lost_sd_ctrl"]),
        var_trt=float(cfg["var_trt"]) if "var_trt" in cfg else None,
        n_trt=int(float(cfg["n_trt"])) if "n_trt" in cfg else None,
    )
    if alpha is None:
        alpha = float(cfg.get("alpha", DEFAULT_GRID_ALPHA))
    if delta2_max is None:
        delta2_max = profile.default_delta2_max()
    ls = list(np.linspace(0.0, l_max, l_steps))
    d2s = list(np.linspace(0.0, delta2_max, delta2_steps))
    grid = tolerance_grid(profile, ls, d2s, alpha)
    params = dict(cfg)
    params.update({"config": config_path, "l_max": l_max, "l_steps": l_steps,
                   "delta2_max": delta2_max, "delta2_steps": delta2_steps, "alpha": alpha})
    write_tolerance_grid(grid, output_path, params)
    if plot_path:
        plots.plot_tolerance_grid(grid, plot_path)
    click.echo(f"wrote {output_path}")


# ---------------------------------------------------------------------------
# scorecard
# ---------------------------------------------------------------------------


def _metrics_from_json(path: str) -> list[MetricDefinition]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [
        MetricDefinition(
            name=m["name"],
            event_type=m["event_type"],
            aggregation=m.get("aggregation", "mean"),
            direction=m.get("direction", "two_sided"),
            measure=m.get("measure"),
        )
        for m in doc
    ]


@main.command("scorecard")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True), help="Observed event log.")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl", show_default=True)
@click.option("--metrics", "metrics_path", required=True, type=click.Path(exists=True),
              help="Metric definitions JSON.")
@click.option("--loss-report", type=click.Path(exists=True), default=None,
              help="Loss report CSV from estimate-loss; computed with the anchor method when omitted.")
@click.option("--scenario-bound", type=float, default=0.05, show_default=True,
              help="Interaction magnitude for best/worst cases.")
@click.option("--absolute-bound", is_flag=True, default=False,
              help="Treat --scenario-bound as absolute instead of a fraction of each metric's baseline.")
@click.option("--alpha", type=float, default=0.01, show_default=True)
@click.option("--loss-threshold", type=float, default=0.05, show_default=True)
@click.option("--expected-ratio", type=float, default=1.0, show_default=True)
@click.option("--control-label", default="control", show_default=True)
@click.option("--treatment-label", default="treatment", show_default=True)
@click.option("--experiment-id", default="experiment", show_default=True)
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--report-format", type=click.Choice(["text_table", "csv", "json"]), default="csv", show_default=True)
@click.option("--plot", "plot_path", type=click.Path(), default=None)
@_guarded
def scorecard_cmd(
    input_path: str,
    fmt: str,
    metrics_path: str,
    loss_report: str | None,
    scenario_bound: float,
    absolute_bound: bool,
    alpha: float,
    loss_threshold: float,
    expected_ratio: float,
    control_label: str,
    treatment_label: str,
    experiment_id: str,
    output_path: str,
    report_format: str,
    plot_path: str | None,
) -> None:
    """Build the loss-aware experiment scorecard from an observed log."""
    log = parse_event_log(input_path, fmt)  # type: ignore[arg-type]
    metrics = _metrics_from_json(metrics_path)
    client_log, server_log = split_by_source(log)
    records = join_sessions(client_log, server_log).records
    if loss_report:
        rows = loss_mod.read_loss_report(loss_report)
    else:
        rows = loss_mod.anchor_report(log)
    loss_map = {(r.event_type, r.variant): r.estimate for r in rows if r.variant is not None}
    config = ScorecardConfig(
        experiment_id=experiment_id,
        control_label=control_label,
        treatment_label=treatment_label,
        alpha=alpha,
        loss_threshold=loss_threshold,
        expected_ratio=expected_ratio,
        bound_is_relative=not absolute_bound,
    )
    card = build_scorecard(records, metrics, loss_map, scenario_bound, config)
    write_scorecard(card, output_path, report_format)  # type: ignore[arg-type]
    if plot_path:
        plots.plot_scorecard(card, plot_path)
    click.echo(f"wrote {output_path}")


if __name__ == "__main__":
    main()
