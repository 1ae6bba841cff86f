"""
Result archives.

Layout under an output directory:

    <out>/manifest.json
    <out>/<method>/archive.json
    <out>/<method>/summary.csv
    <out>/<method>/trial-<k>/epochs.csv
    <out>/<method>/trial-<k>/grounding_log.csv      (grounding methods only)
    <out>/<method>/trial-<k>/checkpoints/...

Nothing time- or entropy-dependent is written, so identical runs produce
byte-identical archives.
"""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence

from .config import ExperimentConfig, config_from_dict, config_hash, config_to_dict
from .models import (
    ArchiveIncompleteError, EpochResult, GroundingDecision, IncompatibleArchivesError,
    MetricsReport, REAL, SIM, TrialResult,
)
from .reporting import SUMMARY_COLUMNS, SummaryRow, select_best_epoch

logger = logging.getLogger(__name__)

EPOCH_COLUMNS = ["trial", "epoch", "env", "att", "queue", "delay", "throughput", "reward"]
GROUNDING_COLUMNS = ["epoch", "t", "agent", "gated", "grounded_action", "original_action", "uncertainty"]


def _num(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _checksum_file(path: Path) -> str:
    sha = hashlib.sha256()
    sha.update(path.read_bytes())
    return sha.hexdigest()


def trial_dir(method_dir: Path, trial: int) -> Path:
    return method_dir / f"trial-{trial}"


# ============================================================
# WRITERS
# ============================================================

def write_epochs_csv(path: Path, result: TrialResult) -> None:
    rows = []
    for epoch in result.epochs:
        for env, report in ((SIM, epoch.sim), (REAL, epoch.real)):
            rows.append([
                result.trial, epoch.epoch, env,
                _num(report.att), _num(report.queue), _num(report.delay),
                report.throughput, _num(report.reward),
            ])
    _write_csv(path, EPOCH_COLUMNS, rows)


def write_grounding_log(path: Path, decisions: Sequence[GroundingDecision]) -> None:
    _write_csv(path, GROUNDING_COLUMNS, [d.to_row() for d in decisions])


def write_summary_csv(path: Path, rows: Sequence[SummaryRow]) -> None:
    _write_csv(path, SUMMARY_COLUMNS, [r.to_row() for r in rows])


def write_archive_json(method_dir: Path, config: ExperimentConfig, complete: bool) -> Path:
    method_dir.mkdir(parents=True, exist_ok=True)
    path = method_dir / "archive.json"
    payload = {
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "complete": complete,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def update_manifest(out_dir: Path, code_version: str) -> Path:
    """
    Rebuild `<out>/manifest.json` from every method archive below `out_dir`,
    with sha256 checksums of each archive file.
    """
    entries: Dict[str, Any] = {}
    for archive_json in sorted(out_dir.glob("*/archive.json")):
        method_dir = archive_json.parent
        meta = json.loads(archive_json.read_text(encoding="utf-8"))
        files = sorted(p for p in method_dir.rglob("*") if p.is_file())
        entries[method_dir.name] = {
            "config_hash": meta["config_hash"],
            "complete": meta["complete"],
            "checksums": {p.relative_to(out_dir).as_posix(): _checksum_file(p) for p in files},
        }
    manifest = {"code_version": code_version, "archives": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ============================================================
# READERS
# ============================================================

@dataclass
class ArchiveInfo:
    path: Path
    config: ExperimentConfig
    config_hash: str
    complete: bool

    @property
    def method(self) -> str:
        return self.config.method


def read_archive(method_dir: Path) -> ArchiveInfo:
    path = Path(method_dir) / "archive.json"
    if not path.exists():
        raise IncompatibleArchivesError(f"Not an archive (no archive.json): {method_dir}")
    meta = json.loads(path.read_text(encoding="utf-8"))
    return ArchiveInfo(
        path=Path(method_dir),
        config=config_from_dict(meta["config"]),
        config_hash=meta["config_hash"],
        complete=bool(meta["complete"]),
    )


def read_trials(info: ArchiveInfo) -> List[TrialResult]:
    """Rebuild trial results from the per-epoch CSVs."""
    trials = []
    for k in range(info.config.trials):
        path = trial_dir(info.path, k) / "epochs.csv"
        if not path.exists():
            raise ArchiveIncompleteError(f"Missing {path}")
        by_epoch: Dict[int, Dict[str, MetricsReport]] = {}
        with open(path, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                by_epoch.setdefault(int(row["epoch"]), {})[row["env"]] = MetricsReport.from_dict(row)
        result = TrialResult(trial=k, seed=info.config.base_seed + k, complete=info.complete)
        for epoch in sorted(by_epoch):
            envs = by_epoch[epoch]
            result.epochs.append(EpochResult(epoch=epoch, sim=envs[SIM], real=envs[REAL]))
        result.best_epoch = select_best_epoch(result.epochs)
        trials.append(result)
    return trials


def check_compatible(infos: Sequence[ArchiveInfo]) -> None:
    """
    Raises:
        ArchiveIncompleteError: if any archive is flagged incomplete
        IncompatibleArchivesError: if archives differ in grid or flow
    """
    for info in infos:
        if not info.complete:
            raise ArchiveIncompleteError(f"Archive is incomplete: {info.path}")
    if not infos:
        return
    first = infos[0].config
    for info in infos[1:]:
        if info.config.grid != first.grid or info.config.flow != first.flow:
            raise IncompatibleArchivesError(
                f"Archives {infos[0].path} and {info.path} use different grids or flows"
            )
