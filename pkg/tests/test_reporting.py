"""
Unit tests for gaps, best-epoch selection and the comparison report.
"""

import pytest

from gatlab.models import METRIC_NAMES, EpochResult, MetricsReport, TrialResult
from gatlab.reporting import (
    SummaryRow, compute_gap, format_cell, render_report, report_table, sample_std,
    select_best_epoch, summarize_trials,
)


def metrics(att, reward=-10.0, throughput=100):
    return MetricsReport(att=att, queue=1.0, delay=0.5, throughput=throughput, reward=reward)


def trial_with(real_atts, trial=0):
    result = TrialResult(trial=trial, seed=trial)
    for epoch, att in enumerate(real_atts):
        result.epochs.append(EpochResult(epoch=epoch, sim=metrics(100.0), real=metrics(att)))
    return result


class TestComputeGap:
    """Test compute_gap."""

    def test_direct_transfer_row_arithmetic(self):
        gap = compute_gap(metrics(309.90, reward=-202.85), metrics(121.26, reward=-61.64))
        assert round(gap.delta("att"), 2) == 188.64
        assert round(gap.delta("reward"), 2) == -141.21

    def test_identical_reports(self):
        report = metrics(150.0)
        gap = compute_gap(report, report)
        assert all(gap.delta(name) == 0.0 for name in METRIC_NAMES)

    def test_sign_convention(self):
        gap = compute_gap(metrics(200.0, throughput=80), metrics(150.0, throughput=100))
        assert gap.delta("att") == 50.0
        assert gap.delta("throughput") == -20.0
        assert gap.to_dict()["att"] == {"real": 200.0, "sim": 150.0, "delta": 50.0}


class TestBestEpoch:
    """Test select_best_epoch."""

    def test_lowest_real_att(self):
        assert select_best_epoch(trial_with([90.0, 300.0, 250.0, 280.0]).epochs) == 2

    def test_epoch_zero_excluded(self):
        assert select_best_epoch(trial_with([10.0, 300.0, 250.0]).epochs) == 2

    def test_ties_go_to_earliest(self):
        assert select_best_epoch(trial_with([0.0, 200.0, 150.0, 150.0]).epochs) == 2

    def test_pretraining_only(self):
        assert select_best_epoch(trial_with([120.0]).epochs) == 0

    def test_empty(self):
        with pytest.raises(ValueError):
            select_best_epoch([])


class TestSummaries:
    """Test across-trial aggregation."""

    def test_sample_std(self):
        assert sample_std([1.0]) is None
        assert sample_std([1.0, 3.0]) == pytest.approx(2 ** 0.5)

    def test_summarize_uses_best_epochs(self):
        trials = [trial_with([0.0, 300.0, 200.0], trial=0), trial_with([0.0, 240.0, 260.0], trial=1)]
        rows = summarize_trials("jl-pattern", trials)
        assert [r.metric for r in rows] == list(METRIC_NAMES)
        att = rows[0]
        assert att.mean_real == 220.0
        assert att.mean_gap == 120.0
        assert att.std_real == pytest.approx(28.284271247461902)
        assert att.best_epoch_mean == 1.5

    def test_single_trial_has_no_std(self):
        rows = summarize_trials("direct", [trial_with([0.0, 300.0])])
        assert rows[0].std_real is None
        assert format_cell(rows[0].mean_real, rows[0].mean_gap, rows[0].std_real) == "300.00(200.00)"

    def test_row_round_trip(self):
        row = SummaryRow("direct", "att", 1.5, None, 0.25, 0.1, 2.0)
        header = ["method", "metric", "mean_real", "std_real", "mean_gap", "std_gap", "best_epoch_mean"]
        assert SummaryRow.from_row(dict(zip(header, row.to_row()))) == row


class TestRenderReport:
    """Test the report template."""

    def test_cell_format(self):
        assert format_cell(309.9, 188.64, 1.234) == "309.90(188.64)±1.23"

    def test_render_contains_every_method(self):
        table = report_table({
            "direct": summarize_trials("direct", [trial_with([0.0, 300.0])]),
            "jl-pattern": summarize_trials("jl-pattern", [trial_with([0.0, 250.0])]),
        })
        text = render_report(table)
        lines = text.splitlines()
        assert lines[0] == "Sim-to-real comparison"
        assert lines[2].split() == ["method", *METRIC_NAMES]
        assert lines[3].startswith("direct")
        assert "300.00(200.00)" in lines[3]
        assert lines[4].startswith("jl-pattern")
        assert text.endswith("\n")
