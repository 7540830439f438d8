"""Loss-induced bias model and the detectors for its observable symptoms.

Extending the two-variant linear model with a loss indicator splits the
bias of the measured delta into two additive terms:

* correlation bias - the loss baseline effect times the loss-rate gap
  between arms; the treatment changed how much telemetry arrives, and
  it shows up as statistically different loss rates.
* interaction bias - the differential treatment effect on lost sessions
  times the treatment arm's loss rate; invisible in loss rates, which
  is what makes it dangerous.

Under missing-at-random both terms vanish and loss costs only power.

The detectors are deliberately standard large-sample tests: a pooled
two-proportion z for loss-rate imbalance and a one-degree-of-freedom
chi-square goodness-of-fit for sample ratio mismatch. p-values come
from ``math.erfc`` directly, keeping this module dependency-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

from .errors import DegenerateSample

DEFAULT_ALPHA = 0.01

TestKind = Literal["two_proportion_z", "chi_square_srm", "welch_z"]


def normal_two_sided_p(z: float) -> float:
    """Two-sided tail probability of the standard normal at |z|.

    Clamped to the smallest positive float: erfc underflows to zero for
    |z| beyond ~38 and downstream consumers rely on p > 0.
    """
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return p if p > 0.0 else 5e-324


def chi_square_1df_sf(stat: float) -> float:
    """Survival function of the chi-square distribution with one df."""
    if stat < 0:
        raise ValueError("chi-square statistic must be non-negative")
    return math.erfc(math.sqrt(stat / 2.0))


@dataclass(slots=True, frozen=True)
class TestResult:
    """Outcome of one hypothesis test at a given significance level."""

    statistic: float
    p_value: float
    significant: bool
    test: TestKind
    alpha: float

    def __post_init__(self):
        if self.significant != (self.p_value < self.alpha):
            raise ValueError("significant flag inconsistent with p and alpha")


def _result(stat: float, p: float, test: TestKind, alpha: float) -> TestResult:
    return TestResult(stat, p, p < alpha, test, alpha)


@dataclass(slots=True, frozen=True)
class BiasDecomposition:
    """Parameters of the loss-extended linear model for one comparison.

    ``beta_l`` is the lost-vs-observed baseline difference in the control
    arm. It is a scenario input (derived as lost mean minus observed
    mean), never estimated from data: the outcome is unobserved exactly
    where the loss indicator is 1, so the data alone cannot identify it.
    """

    beta_0: float
    beta_t: float
    beta_l: float
    beta_int: float
    l_ctrl: float
    l_trt: float

    def __post_init__(self):
        if not (0.0 <= self.l_ctrl <= 1.0 and 0.0 <= self.l_trt <= 1.0):
            raise ValueError("loss rates must lie in [0, 1]")

    @property
    def correlation_bias(self) -> float:
        return self.beta_l * (self.l_trt - self.l_ctrl)

    @property
    def interaction_bias(self) -> float:
        return self.beta_int * self.l_trt


def bias_delta(decomp: BiasDecomposition) -> float:
    """Total bias of the measured delta: correlation plus interaction terms."""
    return decomp.correlation_bias + decomp.interaction_bias


def loss_rate_imbalance_test(
    lost_ctrl: float,
    n_ctrl: float,
    lost_trt: float,
    n_trt: float,
    alpha: float = DEFAULT_ALPHA,
) -> TestResult:
    """Pooled two-proportion z-test on per-arm loss rates.

    A significant result flags correlation bias: the treatment changed
    how much telemetry arrives. Lost counts may be fractional (rates
    scaled by n). The statistic is signed treatment minus control.
    """
    if n_ctrl <= 0 or n_trt <= 0:
        raise DegenerateSample("both arms need a positive event count")
    if not (0 <= lost_ctrl <= n_ctrl and 0 <= lost_trt <= n_trt):
        raise ValueError("lost counts must lie in [0, n]")
    p_ctrl = lost_ctrl / n_ctrl
    p_trt = lost_trt / n_trt
    pooled = (lost_ctrl + lost_trt) / (n_ctrl + n_trt)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n_ctrl + 1.0 / n_trt))
    if se == 0.0:
        return _result(0.0, 1.0, "two_proportion_z", alpha)
    z = (p_trt - p_ctrl) / se
    return _result(z, normal_two_sided_p(z), "two_proportion_z", alpha)


def srm_test(
    n_ctrl: float,
    n_trt: float,
    expected_ratio: float = 1.0,
    alpha: float = DEFAULT_ALPHA,
) -> TestResult:
    """Chi-square goodness-of-fit of arm counts against the configured split.

    ``expected_ratio`` is control over treatment (1.0 for a 50/50
    experiment, 2.0 for 2:1). One degree of freedom: two cells, fixed
    total.
    """
    if expected_ratio <= 0:
        raise ValueError("expected_ratio must be positive")
    if n_ctrl < 0 or n_trt < 0:
        raise ValueError("counts must be non-negative")
    total = n_ctrl + n_trt
    if total <= 0:
        raise DegenerateSample("no observations in either arm")
    exp_ctrl = total * expected_ratio / (1.0 + expected_ratio)
    exp_trt = total - exp_ctrl
    stat = (n_ctrl - exp_ctrl) ** 2 / exp_ctrl + (n_trt - exp_trt) ** 2 / exp_trt
    return _result(stat, chi_square_1df_sf(stat), "chi_square_srm", alpha)


def welch_z_test(
    mean_ctrl: float,
    var_ctrl: float,
    n_ctrl: float,
    mean_trt: float,
    var_trt: float,
    n_trt: float,
    alpha: float = DEFAULT_ALPHA,
) -> TestResult:
    """Unpooled (Welch) z-test on two summarized samples.

    Variances are population-convention (divisor n). Raises
    :class:`DegenerateSample` on empty arms; a zero standard error with
    equal means yields statistic 0 / p 1 rather than 0/0.
    """
    if n_ctrl <= 0 or n_trt <= 0:
        raise DegenerateSample("both arms need a positive sample size")
    if var_ctrl < 0 or var_trt < 0:
        raise ValueError("variances must be non-negative")
    se = math.sqrt(var_ctrl / n_ctrl + var_trt / n_trt)
    delta = mean_trt - mean_ctrl
    if se == 0.0:
        if delta == 0.0:
            return _result(0.0, 1.0, "welch_z", alpha)
        z = math.inf if delta > 0 else -math.inf
        return _result(z, 0.0, "welch_z", alpha)
    z = delta / se
    return _result(z, normal_two_sided_p(z), "welch_z", alpha)


__all__ = [
    "DEFAULT_ALPHA",
    "BiasDecomposition",
    "TestResult",
    "TestKind",
    "bias_delta",
    "chi_square_1df_sf",
    "loss_rate_imbalance_test",
    "normal_two_sided_p",
    "srm_test",
    "welch_z_test",
]
