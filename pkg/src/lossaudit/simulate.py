"""Reconstruct no-loss experiment outcomes and map loss tolerance.

Given observed per-arm summary statistics, measured loss rates, and a
*scenario* (a hypothesis about the lost data points: their control-arm
mean and sd plus an interaction term for how differently the treatment
acted on them), the full-sample mean and variance decompose exactly:

    mean = (1 - l) * mean_obs + l * mean_lost
    var  = (1 - l) * var_obs + l * var_lost
           + l * (1 - l) * (mean_obs - mean_lost)^2

with population-convention variances (divisor n), which is what makes
the variance recombination an identity rather than an approximation.
The treatment arm's lost mean is imputed from the scenario as
``lost_mean_ctrl + observed_delta + beta_int``.

Standard errors use the full expected sample sizes
``n_observed / (1 - l)``: the simulation answers "what if nothing had
been lost", and the hypothetical complete sample is the full one. Under
a missing-at-random scenario (lost stats equal observed stats,
beta_int = 0) the reconstructed delta and variances equal the observed
ones exactly and the z-score changes only by the power factor
``1 / sqrt(1 - l)``.

Sweeping scenarios over a grid of loss rates and lost-delta values maps
the *safe zone*: the region where the no-loss p-value stays above the
significance level, so a ship/no-ship decision would not reverse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence as Seq

import numpy as np

from .bias import normal_two_sided_p
from .errors import DegenerateVariance, InsufficientData

DEFAULT_GRID_ALPHA = 0.01
DEFAULT_MAX_LOSS = 0.20
LOST_STRATUM_PERCENTILE = 10.0
MIN_STRATUM_OBSERVATIONS = 100


@dataclass(slots=True, frozen=True)
class ObservedArm:
    """Observed summary of one variant: size, mean, variance, loss rate.

    ``variance`` uses the population convention (divisor n);
    ``loss_rate`` must leave some data observed (< 1).
    """

    n_observed: int
    mean: float
    variance: float
    loss_rate: float = 0.0

    def __post_init__(self):
        if self.n_observed < 1:
            raise ValueError("n_observed must be positive")
        if self.variance < 0:
            raise ValueError("variance must be non-negative")
        if not (0.0 <= self.loss_rate < 1.0):
            raise ValueError("loss_rate must lie in [0, 1)")

    @property
    def n_full(self) -> float:
        """Expected complete-sample size had nothing been lost."""
        return self.n_observed / (1.0 - self.loss_rate)


@dataclass(slots=True, frozen=True)
class LossScenario:
    """Hypothesis about the lost data points.

    ``lost_sd_trt`` defaults to the control value (the treatment is
    assumed to move the metric baseline, not its spread); pass it
    explicitly to relax the equal-variance assumption.
    """

    lost_mean_ctrl: float
    lost_sd_ctrl: float
    beta_int: float = 0.0
    lost_sd_trt: float | None = None

    def __post_init__(self):
        if self.lost_sd_ctrl < 0 or (self.lost_sd_trt is not None and self.lost_sd_trt < 0):
            raise ValueError("standard deviations must be non-negative")

    @property
    def sd_trt(self) -> float:
        return self.lost_sd_ctrl if self.lost_sd_trt is None else self.lost_sd_trt


@dataclass(slots=True, frozen=True)
class SimulatedResult:
    """Reconstructed no-loss treatment effect and its test statistics."""

    delta: float
    se: float
    z: float
    p_value: float
    lost_mean_trt: float
    full_mean_ctrl: float
    full_mean_trt: float
    full_variance_ctrl: float
    full_variance_trt: float


def combine_mean(l: float, mean_obs: float, mean_lost: float) -> float:
    """Full-sample mean from observed and lost part means at loss rate l."""
    if not (0.0 <= l <= 1.0):
        raise ValueError("loss rate must lie in [0, 1]")
    return (1.0 - l) * mean_obs + l * mean_lost


def combine_variance(l: float, var_obs: float, var_lost: float, mean_obs: float, mean_lost: float) -> float:
    """Full-sample population variance from part statistics at loss rate l."""
    if not (0.0 <= l <= 1.0):
        raise ValueError("loss rate must lie in [0, 1]")
    if var_obs < 0 or var_lost < 0:
        raise ValueError("variances must be non-negative")
    return (1.0 - l) * var_obs + l * var_lost + l * (1.0 - l) * (mean_obs - mean_lost) ** 2


def impute_lost_mean(lost_mean_ctrl: float, observed_delta: float, beta_int: float) -> float:
    """Treatment-arm lost mean implied by the scenario and the observed delta."""
    return lost_mean_ctrl + observed_delta + beta_int


def simulate_treatment_effect(ctrl: ObservedArm, trt: ObservedArm, scenario: LossScenario) -> SimulatedResult:
    """Reconstruct the complete-sample treatment effect under a scenario.

    Imputes the treatment arm's lost mean, recombines per-arm means and
    variances, and tests the recombined delta with an unpooled z at the
    full expected sample sizes. Raises :class:`DegenerateVariance` when
    both full variances are zero (constant metric, z undefined).
    """
    observed_delta = trt.mean - ctrl.mean
    lost_mean_trt = impute_lost_mean(scenario.lost_mean_ctrl, observed_delta, scenario.beta_int)

    full_mean_ctrl = combine_mean(ctrl.loss_rate, ctrl.mean, scenario.lost_mean_ctrl)
    full_mean_trt = combine_mean(trt.loss_rate, trt.mean, lost_mean_trt)
    delta = full_mean_trt - full_mean_ctrl

    full_var_ctrl = combine_variance(
        ctrl.loss_rate, ctrl.variance, scenario.lost_sd_ctrl**2, ctrl.mean, scenario.lost_mean_ctrl
    )
    full_var_trt = combine_variance(
        trt.loss_rate, trt.variance, scenario.sd_trt**2, trt.mean, lost_mean_trt
    )

    se = math.sqrt(full_var_trt / trt.n_full + full_var_ctrl / ctrl.n_full)
    if se == 0.0:
        raise DegenerateVariance("constant metric in both arms; z undefined")
    z = delta / se
    return SimulatedResult(
        delta=delta,
        se=se,
        z=z,
        p_value=normal_two_sided_p(z),
        lost_mean_trt=lost_mean_trt,
        full_mean_ctrl=full_mean_ctrl,
        full_mean_trt=full_mean_trt,
        full_variance_ctrl=full_var_ctrl,
        full_variance_trt=full_var_trt,
    )


def default_lost_scenario(sample: Iterable[float], beta_int: float = 0.0) -> LossScenario:
    """Scenario seeded from the bottom decile of a metric sample.

    Most telemetry loss clusters on poor experiences, so the lost
    stratum defaults to the observations at or below the metric's 10th
    percentile. Requires at least 100 observations.
    """
    values = np.asarray(list(sample), dtype=float)
    if values.size < MIN_STRATUM_OBSERVATIONS:
        raise InsufficientData(
            f"need >= {MIN_STRATUM_OBSERVATIONS} observations to estimate the lost stratum, got {values.size}"
        )
    cut = np.percentile(values, LOST_STRATUM_PERCENTILE)
    stratum = values[values <= cut]
    return LossScenario(float(stratum.mean()), float(stratum.std()), beta_int)


# ---------------------------------------------------------------------------
# Loss tolerance grid
# ---------------------------------------------------------------------------


@dataclass(slots=True, frozen=True)
class PlatformProfile:
    """Fixed inputs for the tolerance sweep: one platform's typical metric.

    The sweep forces the observed delta to zero, so only the control
    mean, the per-arm variances and sizes, and the lost-stratum
    statistics matter.
    """

    mean: float
    var_ctrl: float
    n_ctrl: int
    lost_mean: float
    lost_sd: float
    var_trt: float | None = None
    n_trt: int | None = None

    @property
    def variance_trt(self) -> float:
        return self.var_ctrl if self.var_trt is None else self.var_trt

    @property
    def size_trt(self) -> int:
        return self.n_ctrl if self.n_trt is None else self.n_trt

    def default_delta2_max(self) -> float:
        """Default top of the lost-delta axis: min(30% of mean, 50% of sd)."""
        return min(0.30 * abs(self.mean), 0.50 * math.sqrt(self.var_ctrl))


@dataclass(slots=True)
class ToleranceGrid:
    """p-values and safe flags over the (loss rate, lost delta) plane.

    ``p[i][j]`` corresponds to ``l_values[i]`` and ``delta2_values[j]``;
    a cell is safe iff its p-value exceeds ``alpha``. Cells where the
    simulation degenerated carry NaN p, are never safe, and are listed
    in ``degenerate_cells``.
    """

    l_values: tuple[float, ...]
    delta2_values: tuple[float, ...]
    p: list[list[float]]
    safe: list[list[bool]]
    alpha: float
    degenerate_cells: list[tuple[int, int]]


def tolerance_grid(
    profile: PlatformProfile,
    l_values: Seq[float],
    delta2_values: Seq[float],
    alpha: float = DEFAULT_GRID_ALPHA,
) -> ToleranceGrid:
    """Sweep equal-arm loss rates against lost-delta scenarios.

    Each cell simulates with the observed delta forced to zero and equal
    loss in both arms, so the lost delta coincides with the interaction
    term and the simulated p-value alone decides whether the decision
    could flip. Degenerate cells are recorded as unsafe with NaN p.
    """
    ls = [float(v) for v in l_values]
    d2s = [float(v) for v in delta2_values]
    if any(not (0.0 <= v < 1.0) for v in ls):
        raise ValueError("loss rates must lie in [0, 1)")
    if sorted(ls) != ls or sorted(d2s) != d2s:
        raise ValueError("grid axes must be ascending")

    p: list[list[float]] = []
    safe: list[list[bool]] = []
    degenerate: list[tuple[int, int]] = []
    for i, l in enumerate(ls):
        ctrl = ObservedArm(profile.n_ctrl, profile.mean, profile.var_ctrl, l)
        trt = ObservedArm(profile.size_trt, profile.mean, profile.variance_trt, l)
        p_row: list[float] = []
        safe_row: list[bool] = []
        for j, d2 in enumerate(d2s):
            scenario = LossScenario(profile.lost_mean, profile.lost_sd, beta_int=d2)
            try:
                cell = simulate_treatment_effect(ctrl, trt, scenario)
                p_row.append(cell.p_value)
                safe_row.append(cell.p_value > alpha)
            except DegenerateVariance:
                p_row.append(math.nan)
                safe_row.append(False)
                degenerate.append((i, j))
        p.append(p_row)
        safe.append(safe_row)
    return ToleranceGrid(tuple(ls), tuple(d2s), p, safe, alpha, degenerate)


def write_tolerance_grid(grid: ToleranceGrid, stream: IO | str, params: Mapping | None = None) -> None:
    """Write the full cross product as CSV rows l,delta2,p,safe."""
    if isinstance(stream, str):
        with open(stream, "w", encoding="utf-8", newline="") as fh:
            write_tolerance_grid(grid, fh, params)
        return
    for k in sorted(params or {}):
        stream.write(f"# {k}={params[k]}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["l", "delta2", "p", "safe"])
    for i, l in enumerate(grid.l_values):
        for j, d2 in enumerate(grid.delta2_values):
            writer.writerow([repr(l), repr(d2), repr(grid.p[i][j]), str(grid.safe[i][j]).lower()])


# ---------------------------------------------------------------------------
# Flat key-value profile configs
# ---------------------------------------------------------------------------

PROFILE_KEYS = (
    "mean_ctrl",
    "var_ctrl",
    "n_ctrl",
    "mean_trt",
    "var_trt",
    "n_trt",
    "loss_ctrl",
    "loss_trt",
    "lost_mean_ctrl",
    "lost_sd_ctrl",
    "lost_sd_trt",
    "beta_int",
    "alpha",
)


def parse_flat_config(stream: IO | str) -> dict[str, str]:
    """Parse a flat ``key = value`` config file; '#' starts a comment."""
    if isinstance(stream, str):
        with open(stream, "r", encoding="utf-8") as fh:
            return parse_flat_config(fh)
    out: dict[str, str] = {}
    for lineno, line in enumerate(stream, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def arms_from_config(cfg: Mapping[str, str]) -> tuple[ObservedArm, ObservedArm, LossScenario, float]:
    """Build (ctrl, trt, scenario, alpha) from flat-config keys.

    Treatment-side keys default to their control counterparts; loss
    rates default to zero; ``beta_int`` defaults to zero.
    """
    def fget(key: str, default: float | None = None) -> float:
        if key in cfg:
            return float(cfg[key])
        if default is None:
            raise KeyError(f"missing required config key {key!r}")
        return default

    mean_ctrl = fget("mean_ctrl")
    var_ctrl = fget("var_ctrl")
    n_ctrl = int(fget("n_ctrl"))
    mean_trt = fget("mean_trt", mean_ctrl)
    var_trt = fget("var_trt", var_ctrl)
    n_trt = int(fget("n_trt", n_ctrl))
    ctrl = ObservedArm(n_ctrl, mean_ctrl, var_ctrl, fget("loss_ctrl", 0.0))
    trt = ObservedArm(n_trt, mean_trt, var_trt, fget("loss_trt", 0.0))
    scenario = LossScenario(
        fget("lost_mean_ctrl"),
        fget("lost_sd_ctrl"),
        fget("beta_int", 0.0),
        float(cfg["lost_sd_trt"]) if "lost_sd_trt" in cfg else None,
    )
    return ctrl, trt, scenario, fget("alpha", DEFAULT_GRID_ALPHA)


__all__ = [
    "DEFAULT_GRID_ALPHA",
    "DEFAULT_MAX_LOSS",
    "LOST_STRATUM_PERCENTILE",
    "LossScenario",
    "MIN_STRATUM_OBSERVATIONS",
    "ObservedArm",
    "PROFILE_KEYS",
    "PlatformProfile",
    "SimulatedResult",
    "ToleranceGrid",
    "arms_from_config",
    "combine_mean",
    "combine_variance",
    "default_lost_scenario",
    "impute_lost_mean",
    "parse_flat_config",
    "simulate_treatment_effect",
    "tolerance_grid",
    "write_tolerance_grid",
]
