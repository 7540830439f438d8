"""Scorecard assembly, trust flags, and deterministic rendering."""

import pytest

from lossaudit.errors import MissingLossEstimate, UnknownVariant
from lossaudit.events import SessionRecord, join_sessions, split_by_source
from lossaudit.loss import LossEstimate, anchor_report
from lossaudit.scorecard import (
    FLAG_CORR_BIAS,
    FLAG_HIGH_LOSS,
    FLAG_INCONCLUSIVE,
    FLAG_SRM,
    MetricDefinition,
    MetricResult,
    ScorecardConfig,
    build_metric_result,
    build_scorecard,
    flag_metrics,
    metric_values,
    parse_scorecard,
    render_scorecard,
)
from lossaudit.simulate import LossScenario, ObservedArm
from lossaudit.synth import (
    LossMechanism,
    OutcomeModel,
    SessionCountModel,
    SynthSpec,
    apply_loss,
    generate_population,
)


def make_records(n_per_arm=600, effect=0.0, value=lambda i: float(i % 7)):
    records = []
    for variant, base in (("control", 0.0), ("treatment", effect)):
        for i in range(n_per_arm):
            records.append(
                SessionRecord(
                    (f"s{variant[0]}{i}", "e1"),
                    variant,
                    frozenset({"CST"}),
                    frozenset({"SCR"}),
                    {"duration": value(i) + base},
                )
            )
    return records


def estimate(lost, expected):
    return LossEstimate(lost, expected, "anchor", expected, expected)


def loss_map(lost_c=0, n_c=600, lost_t=0, n_t=600, event_type="CST"):
    return {
        (event_type, "control"): estimate(lost_c, n_c),
        (event_type, "treatment"): estimate(lost_t, n_t),
    }


DURATION = MetricDefinition("duration", "CST", "mean", "higher_is_better")


class TestFlags:
    def row(self, loss_ctrl=0.0, loss_trt=0.0, best_p=1.0, worst_p=1.0, best_delta=0.0, worst_delta=0.0):
        return MetricResult(
            "m", "CST", 0.0, 0.0, 1.0, best_delta, 0.0, best_p, worst_delta, 0.0, worst_p, loss_ctrl, loss_trt
        )

    def test_high_loss_above_threshold(self):
        flags = flag_metrics(self.row(0.06, 0.06), estimate(60, 1000), estimate(60, 1000))
        assert FLAG_HIGH_LOSS in flags

    def test_exactly_at_threshold_not_flagged(self):
        flags = flag_metrics(self.row(0.05, 0.05), estimate(50, 1000), estimate(50, 1000))
        assert FLAG_HIGH_LOSS not in flags

    def test_corr_bias_small_gap_at_scale(self):
        flags = flag_metrics(
            self.row(0.100, 0.107), estimate(10000, 100000), estimate(10700, 100000)
        )
        assert FLAG_CORR_BIAS in flags
        assert FLAG_HIGH_LOSS in flags  # 10% loss also exceeds the 5% rule

    def test_quiet_metric_unflagged(self):
        flags = flag_metrics(self.row(0.01, 0.01), estimate(10, 1000), estimate(10, 1000))
        assert flags == frozenset()

    def test_inconclusive_opposite_significant_signs(self):
        row = self.row(best_p=0.001, worst_p=0.001, best_delta=-1.0, worst_delta=1.0)
        flags = flag_metrics(row, estimate(0, 100), estimate(0, 100))
        assert FLAG_INCONCLUSIVE in flags

    def test_inconclusive_significance_disagreement(self):
        row = self.row(best_p=0.001, worst_p=0.8, best_delta=1.0, worst_delta=0.5)
        flags = flag_metrics(row, estimate(0, 100), estimate(0, 100))
        assert FLAG_INCONCLUSIVE in flags

    def test_consistent_significant_columns_are_conclusive(self):
        row = self.row(best_p=0.001, worst_p=0.002, best_delta=1.0, worst_delta=0.5)
        flags = flag_metrics(row, estimate(0, 100), estimate(0, 100))
        assert FLAG_INCONCLUSIVE not in flags

    def test_flags_monotone_in_loss(self):
        base = self.row(0.051, 0.0)
        flagged = flag_metrics(base, estimate(51, 1000), estimate(0, 1000))
        assert FLAG_HIGH_LOSS in flagged
        for bump in (0.06, 0.2, 0.8):
            worse = flag_metrics(self.row(bump, 0.0), estimate(int(bump * 1000), 1000), estimate(0, 1000))
            assert FLAG_HIGH_LOSS in worse


class TestBuildScorecard:
    def test_quiet_experiment_no_flags_and_columns_agree(self):
        records = make_records()
        card = build_scorecard(records, [DURATION], loss_map(6, 600, 6, 600), 0.05)
        (m,) = card.metrics
        assert m.flags == frozenset()
        assert m.best_delta == pytest.approx(m.observed_delta, abs=0.05)
        assert m.worst_delta == pytest.approx(m.observed_delta, abs=0.05)
        assert not card.srm.significant

    def test_zero_loss_columns_identical(self):
        records = make_records(effect=0.05)
        card = build_scorecard(records, [DURATION], loss_map(0, 600, 0, 600), 0.05)
        (m,) = card.metrics
        assert m.best_delta == m.worst_delta == m.observed_delta
        assert m.best_p == m.worst_p == m.observed_p
        assert m.best_rel == m.worst_rel == m.observed_rel

    def test_srm_flag_on_imbalanced_counts(self):
        # a 4% count imbalance against a 1:1 split
        records = []
        for variant, n in (("control", 50000), ("treatment", 52000)):
            records += [
                SessionRecord((f"s{variant[0]}{i}", "e"), variant, frozenset({"CST"}), frozenset(), {"duration": 1.0 + (i % 3)})
                for i in range(n)
            ]
        card = build_scorecard(records, [DURATION], loss_map(0, 50000, 0, 52000), 0.05)
        assert card.srm.significant
        assert card.srm.p_value < 1e-6
        assert FLAG_SRM in card.metrics[0].flags

    def test_unknown_variant(self):
        records = make_records()
        with pytest.raises(UnknownVariant):
            build_scorecard(records, [DURATION], loss_map(), 0.05, ScorecardConfig(treatment_label="t9"))

    def test_missing_loss_estimate(self):
        records = make_records()
        with pytest.raises(MissingLossEstimate):
            build_scorecard(records, [DURATION], {}, 0.05)

    def test_duplicate_metric_names_rejected(self):
        records = make_records()
        with pytest.raises(ValueError):
            build_scorecard(records, [DURATION, DURATION], loss_map(), 0.05)

    def test_other_variants_ignored(self):
        records = make_records()
        records.append(SessionRecord(("sx", "e"), "treatment-2", frozenset({"CST"}), frozenset(), {"duration": 1.0}))
        card = build_scorecard(records, [DURATION], loss_map(), 0.05)
        assert card.srm.statistic == 0.0

    def test_rate_metric(self):
        value = lambda i: 1.0 if i % 10 else 0.0
        records = make_records(value=value)
        metric = MetricDefinition("established", "CST", "rate", "higher_is_better", measure="duration")
        card = build_scorecard(records, [metric], loss_map(), 0.05)
        (m,) = card.metrics
        assert m.observed_delta == pytest.approx(0.0, abs=1e-12)

    def test_on_synthetic_pipeline(self):
        from lossaudit.synth import EventTypeSpec

        spec = SynthSpec(
            n_endpoints=3000,
            sessions=SessionCountModel("fixed", 1),
            event_types=(EventTypeSpec("CST", 0), EventTypeSpec("Video", 2)),
            outcomes=(
                OutcomeModel("duration", "CST", 10.0, 2.0, 0.0),
                OutcomeModel("freeze", "Video", 50.0, 10.0, 0.0),
            ),
            seed=5,
        )
        full, _ = generate_population(spec)
        observed, truth = apply_loss(full, [LossMechanism("mar", "Video", p=0.10)], seed=5)
        client, server = split_by_source(observed)
        records = join_sessions(client, server).records
        rows = anchor_report(observed)
        loss = {(r.event_type, r.variant): r.estimate for r in rows if r.variant is not None}
        metrics = [
            DURATION,
            MetricDefinition("freeze", "Video", "mean", "lower_is_better"),
        ]
        card = build_scorecard(records, metrics, loss, 0.05)
        by_name = {m.name: m for m in card.metrics}
        assert FLAG_HIGH_LOSS in by_name["freeze"].flags
        assert by_name["duration"].flags == frozenset() or by_name["duration"].flags == {FLAG_SRM}
        # lossless metric: the three columns coincide
        d = by_name["duration"]
        assert d.best_delta == d.worst_delta == d.observed_delta


class TestBuildMetricResult:
    def test_direction_orients_best_case(self):
        ctrl = ObservedArm(100_000, 10.0, 4.0, 0.1)
        trt = ObservedArm(100_000, 10.0, 4.0, 0.1)
        scenario = LossScenario(6.5, 0.7)
        higher = build_metric_result(
            MetricDefinition("m", "CST", "mean", "higher_is_better"),
            ctrl, trt, estimate(10000, 100000), estimate(10000, 100000), scenario, 0.5,
        )
        assert higher.best_delta > 0 > higher.worst_delta
        lower = build_metric_result(
            MetricDefinition("m", "CST", "mean", "lower_is_better"),
            ctrl, trt, estimate(10000, 100000), estimate(10000, 100000), scenario, 0.5,
        )
        assert lower.best_delta < 0 < lower.worst_delta


class TestRender:
    def card(self, **kw):
        records = make_records(**kw)
        return build_scorecard(records, [DURATION], loss_map(6, 600, 6, 600), 0.05)

    def test_empty_metric_list_headers_only(self):
        records = make_records()
        card = build_scorecard(records, [], {}, 0.05)
        text = render_scorecard(card, "csv").decode()
        data_lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        assert data_lines == [
            "metric,observed_delta,observed_rel,observed_p,best_delta,best_p,worst_delta,worst_p,loss_ctrl,loss_trt,flags"
        ]

    def test_json_roundtrip_equal(self):
        card = self.card()
        back = parse_scorecard(render_scorecard(card, "json"), "json")
        assert back == card

    def test_csv_roundtrip_covered_fields(self):
        card = self.card()
        rows = parse_scorecard(render_scorecard(card, "csv"), "csv")
        assert len(rows) == len(card.metrics)
        for got, want in zip(rows, card.metrics):
            assert got.name == want.name
            assert got.observed_delta == want.observed_delta
            assert got.observed_rel == want.observed_rel
            assert got.observed_p == want.observed_p
            assert got.best_delta == want.best_delta and got.best_p == want.best_p
            assert got.worst_delta == want.worst_delta and got.worst_p == want.worst_p
            assert got.loss_ctrl == want.loss_ctrl and got.loss_trt == want.loss_trt
            assert got.flags == want.flags

    def test_rendering_deterministic(self):
        for fmt in ("text_table", "csv", "json"):
            assert render_scorecard(self.card(), fmt) == render_scorecard(self.card(), fmt)

    def test_text_table_layout(self):
        text = render_scorecard(self.card(), "text_table").decode()
        assert "Relative Delta (P.Value)" in text
        assert "Metric" in text and "Observed" in text and "Best-case" in text and "Worst-case" in text
        assert "duration" in text


class TestMetricValues:
    def test_skips_missing_and_nonnumeric(self):
        records = [
            SessionRecord(("a", "e"), "control", frozenset({"CST"}), frozenset(), {"duration": 3.0}),
            SessionRecord(("b", "e"), "control", frozenset({"CST"}), frozenset(), {"duration": "bad"}),
            SessionRecord(("c", "e"), "control", frozenset({"CST"}), frozenset(), {}),
            SessionRecord(("d", "e"), "control", frozenset(), frozenset(), {"duration": 9.0}),
            SessionRecord(("f", "e"), "treatment", frozenset({"CST"}), frozenset(), {"duration": 9.0}),
        ]
        assert metric_values(records, DURATION, "control") == [3.0]
