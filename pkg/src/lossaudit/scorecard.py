"""Per-metric experiment scorecards with loss rates and trust flags.

A scorecard row compares one metric across the two arms three ways: as
observed, and under the best-case and worst-case loss scenarios (the
interaction term swept to plus/minus the scenario bound). Metrics fed
by lossless events show identical columns; metrics fed by lossy events
can flip sign between best and worst case, which is exactly the
situation the flags exist to surface:

* HIGH_LOSS     - the source event loses more than the threshold
                  (default 5%) in either arm; the metric is not trusted.
* CORR_BIAS     - per-arm loss rates differ significantly; the treatment
                  itself changed what arrives, so arms are incomparable.
* SRM           - variant counts deviate from the configured split.
* INCONCLUSIVE  - best-case and worst-case simulations straddle the
                  decision boundary (opposite significant signs, or one
                  side significant and the other not).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Literal, Mapping

import numpy as np

from .bias import DEFAULT_ALPHA, TestResult, loss_rate_imbalance_test, srm_test, welch_z_test
from .errors import DegenerateSample, InsufficientData, MissingLossEstimate, UnknownVariant
from .events import SessionRecord
from .loss import LossEstimate
from .simulate import LossScenario, ObservedArm, default_lost_scenario, simulate_treatment_effect

DEFAULT_LOSS_THRESHOLD = 0.05

Aggregation = Literal["mean", "rate"]
Direction = Literal["higher_is_better", "lower_is_better", "two_sided"]

FLAG_SRM = "SRM"
FLAG_CORR_BIAS = "CORR_BIAS"
FLAG_HIGH_LOSS = "HIGH_LOSS"
FLAG_INCONCLUSIVE = "INCONCLUSIVE"

CSV_COLUMNS = (
    "metric",
    "observed_delta",
    "observed_rel",
    "observed_p",
    "best_delta",
    "best_p",
    "worst_delta",
    "worst_p",
    "loss_ctrl",
    "loss_trt",
    "flags",
)


@dataclass(slots=True, frozen=True)
class MetricDefinition:
    """One scorecard metric: where its values come from and how to read them.

    ``measure`` names the event payload field; it defaults to the metric
    name. ``rate`` metrics read the measure as a binary indicator and
    compare proportions; ``mean`` metrics compare averages.
    """

    name: str
    event_type: str
    aggregation: Aggregation = "mean"
    direction: Direction = "two_sided"
    measure: str | None = None

    @property
    def measure_key(self) -> str:
        return self.measure if self.measure is not None else self.name


@dataclass(slots=True, frozen=True)
class MetricResult:
    """One scorecard row: observed, best-case, and worst-case columns."""

    name: str
    event_type: str
    observed_delta: float
    observed_rel: float
    observed_p: float
    best_delta: float
    best_rel: float
    best_p: float
    worst_delta: float
    worst_rel: float
    worst_p: float
    loss_ctrl: float
    loss_trt: float
    flags: frozenset[str] = frozenset()


@dataclass(slots=True)
class Scorecard:
    """Everything the experimenter sees for one variant pair."""

    experiment_id: str
    control_label: str
    treatment_label: str
    metrics: list[MetricResult]
    loss_estimates: dict[tuple[str, str], LossEstimate]
    srm: TestResult
    alpha: float
    loss_threshold: float
    scenario_bound: float
    expected_ratio: float = 1.0


@dataclass(slots=True, frozen=True)
class ScorecardConfig:
    """Knobs for scorecard assembly, echoed into every rendering.

    ``bound_is_relative`` scales the scenario bound by each metric's
    observed control mean, matching the way bounds are quoted in
    practice ("plus or minus five percent of baseline").
    """

    experiment_id: str = "experiment"
    control_label: str = "control"
    treatment_label: str = "treatment"
    alpha: float = DEFAULT_ALPHA
    loss_threshold: float = DEFAULT_LOSS_THRESHOLD
    expected_ratio: float = 1.0
    bound_is_relative: bool = True


def metric_values(records: Iterable[SessionRecord], metric: MetricDefinition, variant: str) -> list[float]:
    """Numeric values of one metric for one arm.

    A record contributes when it belongs to the arm, its source event
    joined, and the measure is present and numeric. Rate metrics map the
    measure to a 0/1 indicator by truthiness.
    """
    out: list[float] = []
    for r in records:
        if r.variant != variant or metric.event_type not in r.present:
            continue
        v = r.measures.get(metric.measure_key)
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            continue
        if metric.aggregation == "rate":
            out.append(1.0 if v else 0.0)
        else:
            out.append(float(v))
    return out


def _arm_from_values(values: list[float], loss_rate: float, metric: str, variant: str) -> ObservedArm:
    if not values:
        raise DegenerateSample(f"metric {metric!r} has no observations in arm {variant!r}")
    arr = np.asarray(values)
    return ObservedArm(len(values), float(arr.mean()), float(arr.var()), loss_rate)


def _rate_of(estimate: LossEstimate, event_type: str, variant: str) -> float:
    if estimate.expected_events == 0:
        raise MissingLossEstimate(f"estimate for ({event_type!r}, {variant!r}) has no expected events")
    return estimate.rate


def flag_metrics(
    result: MetricResult,
    loss_ctrl: LossEstimate,
    loss_trt: LossEstimate,
    threshold: float = DEFAULT_LOSS_THRESHOLD,
    alpha: float = DEFAULT_ALPHA,
) -> frozenset[str]:
    """Compute the per-metric trust flags from the row and its loss estimates."""
    flags = set()
    if max(result.loss_ctrl, result.loss_trt) > threshold:
        flags.add(FLAG_HIGH_LOSS)
    imbalance = loss_rate_imbalance_test(
        loss_ctrl.events_lost,
        loss_ctrl.expected_events,
        loss_trt.events_lost,
        loss_trt.expected_events,
        alpha=alpha,
    )
    if imbalance.significant:
        flags.add(FLAG_CORR_BIAS)
    best_sig = result.best_p < alpha
    worst_sig = result.worst_p < alpha
    if best_sig != worst_sig or (best_sig and worst_sig and result.best_delta * result.worst_delta < 0):
        flags.add(FLAG_INCONCLUSIVE)
    return frozenset(flags)


def build_metric_result(
    metric: MetricDefinition,
    ctrl: ObservedArm,
    trt: ObservedArm,
    loss_ctrl: LossEstimate,
    loss_trt: LossEstimate,
    scenario: LossScenario,
    bound: float,
    alpha: float = DEFAULT_ALPHA,
    threshold: float = DEFAULT_LOSS_THRESHOLD,
) -> MetricResult:
    """Assemble one row from per-arm summaries (no raw records needed).

    ``bound`` is the absolute interaction magnitude; the metric's
    direction decides which sign is the best case. Relative deltas
    divide by the (simulated full) control mean.
    """
    observed = welch_z_test(ctrl.mean, ctrl.variance, ctrl.n_observed, trt.mean, trt.variance, trt.n_observed, alpha)
    observed_delta = trt.mean - ctrl.mean
    best_sign = -1.0 if metric.direction == "lower_is_better" else 1.0
    best = simulate_treatment_effect(ctrl, trt, replace(scenario, beta_int=best_sign * bound))
    worst = simulate_treatment_effect(ctrl, trt, replace(scenario, beta_int=-best_sign * bound))

    def rel(delta: float, denom: float) -> float:
        return delta / denom if denom != 0 else float("nan")

    row = MetricResult(
        name=metric.name,
        event_type=metric.event_type,
        observed_delta=observed_delta,
        observed_rel=rel(observed_delta, ctrl.mean),
        observed_p=observed.p_value,
        best_delta=best.delta,
        best_rel=rel(best.delta, best.full_mean_ctrl),
        best_p=best.p_value,
        worst_delta=worst.delta,
        worst_rel=rel(worst.delta, worst.full_mean_ctrl),
        worst_p=worst.p_value,
        loss_ctrl=ctrl.loss_rate,
        loss_trt=trt.loss_rate,
    )
    return replace(row, flags=flag_metrics(row, loss_ctrl, loss_trt, threshold, alpha))


def build_scorecard(
    records: Iterable[SessionRecord],
    metrics: Iterable[MetricDefinition],
    loss: Mapping[tuple[str, str], LossEstimate],
    scenario_bound: float,
    config: ScorecardConfig = ScorecardConfig(),
) -> Scorecard:
    """Aggregate records into a scorecard for one control/treatment pair.

    ``loss`` maps (event_type, variant_label) to its loss estimate;
    every metric's source event needs estimates for both arms. Records
    outside the configured pair are ignored (comparisons are pairwise).
    The SRM check runs on record counts; when endpoints contribute many
    legs each, leg counts are clustered and the check is anti-conservative.
    The lost-stratum scenario defaults to the bottom decile of each
    metric's control values, falling back to the observed statistics
    when there is too little data to cut a decile.
    """
    records = list(records)
    metrics = list(metrics)
    names = [m.name for m in metrics]
    if len(set(names)) != len(names):
        raise ValueError("metric names must be unique within a scorecard")
    n_ctrl = sum(1 for r in records if r.variant == config.control_label)
    n_trt = sum(1 for r in records if r.variant == config.treatment_label)
    if n_ctrl == 0 or n_trt == 0:
        raise UnknownVariant(
            f"records contain no {config.control_label!r} or no {config.treatment_label!r} legs"
        )
    srm = srm_test(n_ctrl, n_trt, config.expected_ratio, config.alpha)

    results: list[MetricResult] = []
    for metric in metrics:
        key_c = (metric.event_type, config.control_label)
        key_t = (metric.event_type, config.treatment_label)
        if key_c not in loss or key_t not in loss:
            raise MissingLossEstimate(f"no loss estimate for {metric.event_type!r} in both arms")
        loss_c, loss_t = loss[key_c], loss[key_t]
        vals_c = metric_values(records, metric, config.control_label)
        vals_t = metric_values(records, metric, config.treatment_label)
        ctrl = _arm_from_values(vals_c, _rate_of(loss_c, *key_c), metric.name, config.control_label)
        trt = _arm_from_values(vals_t, _rate_of(loss_t, *key_t), metric.name, config.treatment_label)
        try:
            scenario = default_lost_scenario(vals_c)
        except InsufficientData:
            scenario = LossScenario(ctrl.mean, float(np.sqrt(ctrl.variance)))
        bound = scenario_bound * abs(ctrl.mean) if config.bound_is_relative else scenario_bound
        row = build_metric_result(
            metric, ctrl, trt, loss_c, loss_t, scenario, bound, config.alpha, config.loss_threshold
        )
        if srm.significant:
            row = replace(row, flags=row.flags | {FLAG_SRM})
        results.append(row)

    return Scorecard(
        experiment_id=config.experiment_id,
        control_label=config.control_label,
        treatment_label=config.treatment_label,
        metrics=results,
        loss_estimates=dict(loss),
        srm=srm,
        alpha=config.alpha,
        loss_threshold=config.loss_threshold,
        scenario_bound=scenario_bound,
        expected_ratio=config.expected_ratio,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _flags_str(flags: frozenset[str]) -> str:
    return "|".join(sorted(flags))


def _render_text(card: Scorecard) -> str:
    out = io.StringIO()
    out.write(f"Experiment {card.experiment_id}: {card.treatment_label} vs {card.control_label}\n")
    out.write(
        f"alpha={card.alpha} loss_threshold={card.loss_threshold} "
        f"scenario_bound={card.scenario_bound} expected_ratio={card.expected_ratio}\n"
    )
    srm_note = " SRM" if card.srm.significant else ""
    out.write(f"Sample ratio: chi2={card.srm.statistic:.2f} p={card.srm.p_value:.3f}{srm_note}\n\n")

    headers = ("Metric", "Observed", "Best-case", "Worst-case", "Flags")
    rows = [headers]
    for m in card.metrics:
        rows.append(
            (
                m.name,
                f"{m.observed_rel * 100:.2f}% ({m.observed_p:.2f})",
                f"{m.best_rel * 100:.2f}% ({m.best_p:.2f})",
                f"{m.worst_rel * 100:.2f}% ({m.worst_p:.2f})",
                _flags_str(m.flags),
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    banner = "Relative Delta (P.Value)"
    value_span = widths[1] + widths[2] + widths[3] + 4
    out.write(" " * (widths[0] + 2) + banner.center(value_span).rstrip() + "\n")
    for idx, r in enumerate(rows):
        out.write("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")
        if idx == 0:
            out.write("  ".join("-" * w for w in widths) + "\n")

    out.write("\nEvent loss rates:\n")
    for (et, variant), est in sorted(card.loss_estimates.items()):
        rate = est.events_lost / est.expected_events if est.expected_events else float("nan")
        out.write(f"  {et} [{variant}]: {rate * 100:.2f}% ({est.events_lost}/{est.expected_events})\n")
    return out.getvalue()


def _render_csv(card: Scorecard) -> str:
    out = io.StringIO()
    for k, v in sorted(
        {
            "experiment_id": card.experiment_id,
            "control": card.control_label,
            "treatment": card.treatment_label,
            "alpha": card.alpha,
            "loss_threshold": card.loss_threshold,
            "scenario_bound": card.scenario_bound,
            "expected_ratio": card.expected_ratio,
        }.items()
    ):
        out.write(f"# {k}={v}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for m in card.metrics:
        writer.writerow(
            [
                m.name,
                repr(m.observed_delta),
                repr(m.observed_rel),
                repr(m.observed_p),
                repr(m.best_delta),
                repr(m.best_p),
                repr(m.worst_delta),
                repr(m.worst_p),
                repr(m.loss_ctrl),
                repr(m.loss_trt),
                _flags_str(m.flags),
            ]
        )
    return out.getvalue()


def _metric_to_obj(m: MetricResult) -> dict:
    return {
        "name": m.name,
        "event_type": m.event_type,
        "observed_delta": m.observed_delta,
        "observed_rel": m.observed_rel,
        "observed_p": m.observed_p,
        "best_delta": m.best_delta,
        "best_rel": m.best_rel,
        "best_p": m.best_p,
        "worst_delta": m.worst_delta,
        "worst_rel": m.worst_rel,
        "worst_p": m.worst_p,
        "loss_ctrl": m.loss_ctrl,
        "loss_trt": m.loss_trt,
        "flags": sorted(m.flags),
    }


def _render_json(card: Scorecard) -> str:
    doc = {
        "experiment_id": card.experiment_id,
        "control_label": card.control_label,
        "treatment_label": card.treatment_label,
        "alpha": card.alpha,
        "loss_threshold": card.loss_threshold,
        "scenario_bound": card.scenario_bound,
        "expected_ratio": card.expected_ratio,
        "srm": {
            "statistic": card.srm.statistic,
            "p_value": card.srm.p_value,
            "significant": card.srm.significant,
            "test": card.srm.test,
            "alpha": card.srm.alpha,
        },
        "metrics": [_metric_to_obj(m) for m in card.metrics],
        "loss_estimates": [
            {
                "event_type": et,
                "variant": variant,
                "events_lost": est.events_lost,
                "expected_events": est.expected_events,
                "method": est.method,
                "units_contributing": est.units_contributing,
                "units_total": est.units_total,
            }
            for (et, variant), est in sorted(card.loss_estimates.items())
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render_scorecard(card: Scorecard, format: Literal["text_table", "csv", "json"] = "text_table") -> bytes:
    """Serialize a scorecard deterministically in the requested format."""
    if format == "text_table":
        return _render_text(card).encode("utf-8")
    if format == "csv":
        return _render_csv(card).encode("utf-8")
    if format == "json":
        return _render_json(card).encode("utf-8")
    raise ValueError(f"unknown format {format!r}")


def parse_scorecard(data: bytes | str, format: Literal["csv", "json"] = "json") -> Scorecard | list[MetricResult]:
    """Parse a rendered scorecard back: json yields a Scorecard, csv its metric rows."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    if format == "json":
        doc = json.loads(text)
        metrics = [
            MetricResult(
                name=m["name"],
                event_type=m["event_type"],
                observed_delta=m["observed_delta"],
                observed_rel=m["observed_rel"],
                observed_p=m["observed_p"],
                best_delta=m["best_delta"],
                best_rel=m["best_rel"],
                best_p=m["best_p"],
                worst_delta=m["worst_delta"],
                worst_rel=m["worst_rel"],
                worst_p=m["worst_p"],
                loss_ctrl=m["loss_ctrl"],
                loss_trt=m["loss_trt"],
                flags=frozenset(m["flags"]),
            )
            for m in doc["metrics"]
        ]
        loss = {
            (row["event_type"], row["variant"]): LossEstimate(
                row["events_lost"],
                row["expected_events"],
                row["method"],
                row["units_contributing"],
                row["units_total"],
            )
            for row in doc["loss_estimates"]
        }
        srm = TestResult(
            doc["srm"]["statistic"],
            doc["srm"]["p_value"],
            doc["srm"]["significant"],
            doc["srm"]["test"],
            doc["srm"]["alpha"],
        )
        return Scorecard(
            experiment_id=doc["experiment_id"],
            control_label=doc["control_label"],
            treatment_label=doc["treatment_label"],
            metrics=metrics,
            loss_estimates=loss,
            srm=srm,
            alpha=doc["alpha"],
            loss_threshold=doc["loss_threshold"],
            scenario_bound=doc["scenario_bound"],
            expected_ratio=doc["expected_ratio"],
        )
    if format == "csv":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = []
        for row in csv.DictReader(lines):
            rows.append(
                MetricResult(
                    name=row["metric"],
                    event_type="",
                    observed_delta=float(row["observed_delta"]),
                    observed_rel=float(row["observed_rel"]),
                    observed_p=float(row["observed_p"]),
                    best_delta=float(row["best_delta"]),
                    best_rel=float("nan"),
                    best_p=float(row["best_p"]),
                    worst_delta=float(row["worst_delta"]),
                    worst_rel=float("nan"),
                    worst_p=float(row["worst_p"]),
                    loss_ctrl=float(row["loss_ctrl"]),
                    loss_trt=float(row["loss_trt"]),
                    flags=frozenset(row["flags"].split("|")) if row["flags"] else frozenset(),
                )
            )
        return rows
    raise ValueError(f"unknown format {format!r}")


def write_scorecard(card: Scorecard, stream: IO | str, format: Literal["text_table", "csv", "json"] = "csv") -> None:
    """Write a rendered scorecard to a path or binary/text stream."""
    payload = render_scorecard(card, format)
    if isinstance(stream, str):
        with open(stream, "wb") as fh:
            fh.write(payload)
        return
    if hasattr(stream, "buffer"):
        stream.buffer.write(payload)
    else:
        try:
            stream.write(payload)
        except TypeError:
            stream.write(payload.decode("utf-8"))


__all__ = [
    "CSV_COLUMNS",
    "DEFAULT_LOSS_THRESHOLD",
    "FLAG_CORR_BIAS",
    "FLAG_HIGH_LOSS",
    "FLAG_INCONCLUSIVE",
    "FLAG_SRM",
    "MetricDefinition",
    "MetricResult",
    "Scorecard",
    "ScorecardConfig",
    "build_metric_result",
    "build_scorecard",
    "flag_metrics",
    "metric_values",
    "parse_scorecard",
    "render_scorecard",
    "write_scorecard",
]
