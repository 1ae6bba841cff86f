"""
Transition datasets D_sim and D_real.

Records are routed strictly by their source tag; each source is capped with
oldest-first eviction. Optional persistence writes newline-delimited JSON
with 17-significant-digit numbers.
"""

import json
import logging
from collections import OrderedDict, deque
from pathlib import Path
from typing import Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .models import REAL, SIM, GlobalSample, RoutingError, TransitionRecord

logger = logging.getLogger(__name__)

SOURCES = (SIM, REAL)


class DatasetStore:
    """Append-only D_sim / D_real with per-source caps."""

    def __init__(self, cap: int = 20000):
        if cap < 1:
            raise ValueError("Dataset cap must be positive")
        self.cap = cap
        self._data: Dict[str, Deque[TransitionRecord]] = {s: deque(maxlen=cap) for s in SOURCES}
        self.appended: Dict[str, int] = {s: 0 for s in SOURCES}

    def add(self, record: TransitionRecord, expected_source: Optional[str] = None) -> None:
        """
        Raises:
            RoutingError: for an unknown tag or a tag differing from `expected_source`
        """
        if record.source not in self._data:
            raise RoutingError(f"Unknown source tag: {record.source!r}")
        if expected_source is not None and record.source != expected_source:
            raise RoutingError(
                f"Record tagged {record.source!r} offered to D_{expected_source}"
            )
        self._data[record.source].append(record)
        self.appended[record.source] += 1

    def extend(self, records: Iterable[TransitionRecord], expected_source: Optional[str] = None) -> None:
        for record in records:
            self.add(record, expected_source)

    def size(self, source: str) -> int:
        return len(self._data[source])

    def records(self, source: str, agent: Optional[int] = None) -> List[TransitionRecord]:
        items = self._data[source]
        if agent is None:
            return list(items)
        return [r for r in items if r.agent == agent]

    def save(self, directory: Path) -> List[Path]:
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for source in SOURCES:
            path = directory / f"D_{source}.ndjson"
            write_records(self._data[source], path)
            paths.append(path)
        return paths


def build_global_samples(records: Iterable[TransitionRecord], n_agents: int) -> List[GlobalSample]:
    """
    Group per-agent records by (source, episode, t); only groups holding all
    n agents become samples, concatenated in agent order.
    """
    groups: "OrderedDict[Tuple[str, int, float], Dict[int, TransitionRecord]]" = OrderedDict()
    for record in records:
        groups.setdefault((record.source, record.episode, record.t), {})[record.agent] = record
    samples = []
    for (source, episode, t), members in groups.items():
        if len(members) != n_agents or set(members) != set(range(n_agents)):
            continue
        ordered = [members[i] for i in range(n_agents)]
        samples.append(GlobalSample(
            episode=episode,
            t=t,
            obs_local=np.concatenate([r.self_obs for r in ordered]),
            act_local=np.concatenate([
                r.act_local[:r.act_local.shape[0] // r.mask.shape[0]] for r in ordered
            ]),
            mask=np.ones(n_agents),
            actions=tuple(r.action for r in ordered),
            next_obs=np.concatenate([r.next_obs for r in ordered]),
            source=source,
        ))
    return samples


# ============================================================
# NDJSON
# ============================================================

def _num(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return format(value, ".17g")


def _vec(values) -> str:
    return "[" + ",".join(_num(v) for v in np.asarray(values, dtype=float)) + "]"


def record_to_line(record: TransitionRecord) -> str:
    return (
        "{"
        f"\"agent\":{record.agent},"
        f"\"episode\":{record.episode},"
        f"\"t\":{_num(record.t)},"
        f"\"obs_local\":{_vec(record.obs_local)},"
        f"\"act_local\":{_vec(record.act_local)},"
        f"\"mask\":{_vec(record.mask)},"
        f"\"action\":{record.action},"
        f"\"next_obs\":{_vec(record.next_obs)},"
        f"\"source\":{json.dumps(record.source)}"
        "}"
    )


def write_records(records: Iterable[TransitionRecord], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record_to_line(record) + "\n")


def read_records(path: Path) -> List[TransitionRecord]:
    with open(path, "r", encoding="utf-8") as f:
        return [TransitionRecord.from_dict(json.loads(line)) for line in f if line.strip()]
