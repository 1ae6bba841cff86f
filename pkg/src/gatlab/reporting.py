"""
Gap arithmetic, best-epoch selection, across-trial summaries and the
comparison report.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, TemplateError

from .models import METRIC_NAMES, EpochResult, GapReport, MetricGap, MetricsReport, TrialResult

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"
SUMMARY_COLUMNS = ["method", "metric", "mean_real", "std_real", "mean_gap", "std_gap", "best_epoch_mean"]


def compute_gap(real: MetricsReport, sim: MetricsReport) -> GapReport:
    """psi_delta = psi_real - psi_sim for all five metrics."""
    gaps = {}
    for name in METRIC_NAMES:
        r = real.get(name)
        s = sim.get(name)
        gaps[name] = MetricGap(real=r, sim=s, delta=r - s)
    return GapReport(gaps=gaps)


def select_best_epoch(epochs: Sequence[EpochResult]) -> int:
    """
    Lowest E_real ATT over the GAT epochs (1..I), ties to the earliest.
    Falls back to epoch 0 when no GAT epoch exists.
    """
    candidates = [e for e in epochs if e.epoch >= 1] or list(epochs)
    if not candidates:
        raise ValueError("No epochs to choose from")
    best = candidates[0]
    for result in candidates[1:]:
        if result.real.att < best.real.att:
            best = result
    return best.epoch


def sample_std(values: Sequence[float]) -> Optional[float]:
    """Sample standard deviation (ddof=1); None for fewer than two values."""
    if len(values) < 2:
        return None
    return float(np.std(np.asarray(values, dtype=float), ddof=1))


@dataclass(frozen=True)
class SummaryRow:
    method: str
    metric: str
    mean_real: float
    std_real: Optional[float]
    mean_gap: float
    std_gap: Optional[float]
    best_epoch_mean: float

    def to_row(self) -> List[str]:
        return [
            self.method,
            self.metric,
            _cell(self.mean_real),
            _cell(self.std_real),
            _cell(self.mean_gap),
            _cell(self.std_gap),
            _cell(self.best_epoch_mean),
        ]

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> 'SummaryRow':
        return cls(
            method=row["method"],
            metric=row["metric"],
            mean_real=float(row["mean_real"]),
            std_real=float(row["std_real"]) if row["std_real"] else None,
            mean_gap=float(row["mean_gap"]),
            std_gap=float(row["std_gap"]) if row["std_gap"] else None,
            best_epoch_mean=float(row["best_epoch_mean"]),
        )


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def summarize_trials(method: str, trials: Sequence[TrialResult]) -> List[SummaryRow]:
    """One row per metric over the trials' best epochs."""
    if not trials:
        raise ValueError("No trials to summarize")
    best = []
    for trial in trials:
        index = trial.best_epoch if trial.best_epoch is not None else select_best_epoch(trial.epochs)
        best.append((index, trial.epoch(index)))
    best_epoch_mean = float(np.mean([index for index, _ in best]))

    rows = []
    for name in METRIC_NAMES:
        reals = [e.real.get(name) for _, e in best]
        gaps = [compute_gap(e.real, e.sim).delta(name) for _, e in best]
        rows.append(SummaryRow(
            method=method,
            metric=name,
            mean_real=float(np.mean(reals)),
            std_real=sample_std(reals),
            mean_gap=float(np.mean(gaps)),
            std_gap=sample_std(gaps),
            best_epoch_mean=best_epoch_mean,
        ))
    return rows


def format_cell(mean: float, gap: float, std: Optional[float]) -> str:
    """`mean(gap)±std` with two decimals; the std part is dropped for a single trial."""
    text = f"{mean:.2f}({gap:.2f})"
    if std is not None:
        text += f"±{std:.2f}"
    return text


def report_table(rows_by_method: Dict[str, List[SummaryRow]]) -> List[Dict[str, str]]:
    table = []
    for method, rows in rows_by_method.items():
        by_metric = {r.metric: r for r in rows}
        entry = {"method": method}
        for name in METRIC_NAMES:
            r = by_metric[name]
            entry[name] = format_cell(r.mean_real, r.mean_gap, r.std_real)
        table.append(entry)
    return table


def render_report(table: List[Dict[str, str]], title: str = "Sim-to-real comparison") -> str:
    """
    Render the comparison table with the report template.

    Raises:
        TemplateError: if rendering fails
    """
    widths = {name: max([len(name)] + [len(row[name]) for row in table]) for name in ("method",) + METRIC_NAMES}
    try:
        env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), keep_trailing_newline=True)
        template = env.get_template("report.txt.j2")
        return template.render(title=title, metrics=METRIC_NAMES, rows=table, widths=widths)
    except TemplateError as e:
        logger.error(f"Report rendering failed: {e}")
        raise
