"""Mean/variance recombination, no-loss reconstruction, tolerance grid."""

import io
import math

import numpy as np
import pytest
from scipy import stats

from lossaudit.errors import DegenerateVariance, InsufficientData
from lossaudit.simulate import (
    LossScenario,
    ObservedArm,
    PlatformProfile,
    arms_from_config,
    combine_mean,
    combine_variance,
    default_lost_scenario,
    impute_lost_mean,
    parse_flat_config,
    simulate_treatment_effect,
    tolerance_grid,
    write_tolerance_grid,
)


class TestCombine:
    def test_mean_no_loss(self):
        assert combine_mean(0.0, 3.7, 99.0) == 3.7

    def test_mean_total_loss(self):
        assert combine_mean(1.0, 3.7, 99.0) == 99.0

    def test_mean_half_split(self):
        # {1,2,3,4} split into observed {1,2} and lost {3,4}
        assert combine_mean(0.5, 1.5, 3.5) == pytest.approx(2.5)

    def test_variance_no_loss(self):
        assert combine_variance(0.0, 0.31, 88.0, 1.0, 2.0) == pytest.approx(0.31)

    def test_variance_homogeneous_parts(self):
        for l in (0.0, 0.2, 0.5, 0.9):
            assert combine_variance(l, 0.7, 0.7, 4.2, 4.2) == pytest.approx(0.7)

    def test_variance_half_split(self):
        # population variance of {1,2,3,4} is 1.25
        v = combine_variance(0.5, 0.25, 0.25, 1.5, 3.5)
        assert v == pytest.approx(np.var([1, 2, 3, 4]))
        assert v == pytest.approx(1.25)

    def test_decomposition_identity_randomized(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            n = rng.integers(2, 500)
            values = rng.uniform(0.5, 2.5, n)
            n_lost = int(rng.integers(1, n))  # both parts non-empty
            lost, obs = values[:n_lost], values[n_lost:]
            l = n_lost / n
            mean = combine_mean(l, obs.mean(), lost.mean())
            var = combine_variance(l, obs.var(), lost.var(), obs.mean(), lost.mean())
            assert abs(mean - values.mean()) <= 1e-10 * abs(values.mean())
            assert abs(var - values.var()) <= 1e-10 * abs(values.var())


class TestImpute:
    def test_no_effect_anywhere(self):
        assert impute_lost_mean(2.0, 0.0, 0.0) == 2.0

    def test_substitution(self):
        assert impute_lost_mean(2.0, 0.1, 0.05) == pytest.approx(2.15)

    def test_interaction_cancels_observed_delta(self):
        assert impute_lost_mean(2.0, 0.3, -0.3) == pytest.approx(2.0)


def arm(n=1000, mean=10.0, var=4.0, loss=0.0):
    return ObservedArm(n, mean, var, loss)


class TestSimulate:
    def test_zero_loss_fixpoint(self):
        ctrl, trt = arm(mean=10.0), arm(mean=10.3, var=5.0, n=800)
        scenario = LossScenario(-123.0, 9.0, beta_int=4.0)  # irrelevant at zero loss
        r = simulate_treatment_effect(ctrl, trt, scenario)
        assert r.delta == pytest.approx(0.3, abs=1e-12)
        assert r.full_variance_ctrl == ctrl.variance
        assert r.full_variance_trt == trt.variance
        welch_se = math.sqrt(ctrl.variance / ctrl.n_observed + trt.variance / trt.n_observed)
        assert r.se == pytest.approx(welch_se, rel=1e-12)

    def test_null_scenario(self):
        ctrl = arm(loss=0.15)
        trt = arm(loss=0.15)
        r = simulate_treatment_effect(ctrl, trt, LossScenario(6.5, 0.7, beta_int=0.0))
        assert r.delta == pytest.approx(0.0, abs=1e-12)
        assert r.p_value == 1.0

    def test_equal_loss_identity(self):
        ctrl = arm(mean=10.0, loss=0.1)
        trt = arm(mean=10.2, loss=0.1)
        r = simulate_treatment_effect(ctrl, trt, LossScenario(6.5, 0.7, beta_int=0.5))
        assert r.delta == pytest.approx(0.2 + 0.1 * 0.5, abs=1e-12)

    def test_brute_force_reconstruction(self):
        # materialize explicit samples matching every summary statistic,
        # then compare the pooled delta and variances computed directly
        def two_point(mean, sd, n):
            half = n // 2
            return np.array([mean - sd] * half + [mean + sd] * half)

        n_obs, l = 600, 0.25
        n_lost = int(n_obs / (1 - l) - n_obs)  # 200
        obs_c = two_point(10.0, 2.0, n_obs)
        obs_t = two_point(10.4, 2.5, n_obs)
        scenario = LossScenario(lost_mean_ctrl=6.0, lost_sd_ctrl=1.0, beta_int=0.3)
        delta_obs = obs_t.mean() - obs_c.mean()
        lost_c = two_point(6.0, 1.0, n_lost)
        lost_t = two_point(6.0 + delta_obs + 0.3, 1.0, n_lost)
        full_c = np.concatenate([obs_c, lost_c])
        full_t = np.concatenate([obs_t, lost_t])

        ctrl = ObservedArm(n_obs, obs_c.mean(), obs_c.var(), l)
        trt = ObservedArm(n_obs, obs_t.mean(), obs_t.var(), l)
        r = simulate_treatment_effect(ctrl, trt, scenario)

        assert r.delta == pytest.approx(full_t.mean() - full_c.mean(), rel=1e-12)
        assert r.full_variance_ctrl == pytest.approx(full_c.var(), rel=1e-12)
        assert r.full_variance_trt == pytest.approx(full_t.var(), rel=1e-12)
        se = math.sqrt(full_t.var() / len(full_t) + full_c.var() / len(full_c))
        assert r.se == pytest.approx(se, rel=1e-12)

    def test_mar_reproduces_observed_effect(self):
        # lost stats equal observed stats, beta_int 0: the reconstruction
        # returns the observed delta and variances exactly; the z moves
        # only by the power factor sqrt(1 / (1 - l)) of the full sample
        ctrl = ObservedArm(1000, 10.0, 4.0, 0.1)
        trt = ObservedArm(1200, 10.3, 5.0, 0.1)
        scenario = LossScenario(10.0, 2.0, beta_int=0.0, lost_sd_trt=math.sqrt(5.0))
        r = simulate_treatment_effect(ctrl, trt, scenario)
        assert r.delta == pytest.approx(0.3, abs=1e-12)
        assert r.full_variance_ctrl == pytest.approx(4.0, rel=1e-12)
        assert r.full_variance_trt == pytest.approx(5.0, rel=1e-12)
        from lossaudit.bias import welch_z_test

        observed_z = welch_z_test(10.0, 4.0, 1000, 10.3, 5.0, 1200).statistic
        assert r.z * math.sqrt(1 - 0.1) == pytest.approx(observed_z, rel=1e-12)

    def test_degenerate_variance(self):
        ctrl = ObservedArm(100, 5.0, 0.0, 0.1)
        trt = ObservedArm(100, 5.0, 0.0, 0.1)
        with pytest.raises(DegenerateVariance):
            simulate_treatment_effect(ctrl, trt, LossScenario(5.0, 0.0))

    def test_loss_rate_one_rejected(self):
        with pytest.raises(ValueError):
            ObservedArm(100, 5.0, 1.0, 1.0)


class TestDefaultScenario:
    def test_uniform_bottom_decile(self):
        rng = np.random.default_rng(7)
        sample = rng.uniform(0, 1, 10_000)
        scenario = default_lost_scenario(sample)
        # sort-and-slice oracle: bottom decile of U(0,1) is ~U(0, 0.1)
        cut = np.sort(sample)[999]
        stratum = np.sort(sample)[: int((sample <= cut).sum())]
        assert scenario.lost_mean_ctrl == pytest.approx(stratum.mean(), abs=2e-3)
        assert scenario.lost_mean_ctrl == pytest.approx(0.05, abs=5e-3)
        assert scenario.lost_sd_ctrl == pytest.approx(0.1 / math.sqrt(12), abs=3e-3)

    def test_constant_metric(self):
        scenario = default_lost_scenario([3.0] * 200)
        assert scenario.lost_mean_ctrl == 3.0
        assert scenario.lost_sd_ctrl == 0.0

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            default_lost_scenario(range(50))


class TestToleranceGrid:
    profile = PlatformProfile(mean=10.0, var_ctrl=4.0, n_ctrl=100_000, lost_mean=6.5, lost_sd=0.7)

    def test_axes_are_safe(self):
        ls = list(np.linspace(0, 0.2, 9))
        d2s = list(np.linspace(0, 1.0, 9))
        grid = tolerance_grid(self.profile, ls, d2s, alpha=0.01)
        assert all(grid.safe[i][0] for i in range(len(ls)))  # delta2 = 0 row
        assert all(grid.safe[0][j] for j in range(len(d2s)))  # l = 0 column
        assert all(p == 1.0 for p in grid.p[0])

    def test_safe_iff_p_above_alpha(self):
        grid = tolerance_grid(self.profile, [0.0, 0.1, 0.19], [0.0, 0.5, 1.0], alpha=0.01)
        for i in range(3):
            for j in range(3):
                assert grid.safe[i][j] == (grid.p[i][j] > 0.01)

    def test_p_non_increasing_in_loss(self):
        ls = list(np.linspace(0, 0.2, 15))
        grid = tolerance_grid(self.profile, ls, [0.0, 0.25, 0.5, 1.0], alpha=0.01)
        for j in range(4):
            col = [grid.p[i][j] for i in range(len(ls))]
            assert all(col[i + 1] <= col[i] + 1e-15 for i in range(len(col) - 1))

    def test_degenerate_cells_marked_unsafe(self):
        flat = PlatformProfile(mean=5.0, var_ctrl=0.0, n_ctrl=100, lost_mean=5.0, lost_sd=0.0)
        grid = tolerance_grid(flat, [0.0, 0.1], [0.0], alpha=0.01)
        assert grid.degenerate_cells == [(0, 0), (1, 0)]
        assert not grid.safe[0][0] and not grid.safe[1][0]
        assert math.isnan(grid.p[0][0])

    def test_matrix_dimensions(self):
        grid = tolerance_grid(self.profile, [0.0, 0.1], [0.0, 0.2, 0.4], alpha=0.05)
        assert len(grid.p) == 2 and all(len(row) == 3 for row in grid.p)

    def test_axis_validation(self):
        with pytest.raises(ValueError):
            tolerance_grid(self.profile, [0.1, 0.0], [0.0])
        with pytest.raises(ValueError):
            tolerance_grid(self.profile, [0.5, 1.0], [0.0])

    def test_csv_export(self):
        grid = tolerance_grid(self.profile, [0.0, 0.1], [0.0, 0.5], alpha=0.01)
        buf = io.StringIO()
        write_tolerance_grid(grid, buf, params={"alpha": 0.01})
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# alpha=0.01"
        assert lines[1] == "l,delta2,p,safe"
        assert len(lines) == 2 + 4  # full cross product
        first = lines[2].split(",")
        assert float(first[0]) == 0.0 and float(first[2]) == 1.0 and first[3] == "true"

    def test_default_delta2_max_rule(self):
        assert self.profile.default_delta2_max() == pytest.approx(min(0.3 * 10.0, 0.5 * 2.0))

    def test_grid_p_matches_scipy_normal(self):
        grid = tolerance_grid(self.profile, [0.1], [0.5], alpha=0.01)
        ctrl = ObservedArm(100_000, 10.0, 4.0, 0.1)
        trt = ObservedArm(100_000, 10.0, 4.0, 0.1)
        r = simulate_treatment_effect(ctrl, trt, LossScenario(6.5, 0.7, beta_int=0.5))
        assert grid.p[0][0] == pytest.approx(2 * stats.norm.sf(abs(r.z)), rel=1e-9)


class TestFlatConfig:
    def test_parse_and_build(self):
        text = """
        # platform profile
        mean_ctrl = 10.0
        var_ctrl = 4.0
        n_ctrl = 1000
        loss_ctrl = 0.1
        loss_trt = 0.1
        lost_mean_ctrl = 6.5
        lost_sd_ctrl = 0.7
        beta_int = 0.5
        """
        cfg = parse_flat_config(io.StringIO(text))
        ctrl, trt, scenario, alpha = arms_from_config(cfg)
        assert ctrl.mean == trt.mean == 10.0  # treatment defaults to control
        assert ctrl.loss_rate == 0.1
        assert scenario.beta_int == 0.5
        assert alpha == 0.01

    def test_missing_required_key(self):
        with pytest.raises(KeyError):
            arms_from_config({"mean_ctrl": "1.0"})

    def test_bad_line(self):
        with pytest.raises(ValueError):
            parse_flat_config(io.StringIO("mean_ctrl 10"))
