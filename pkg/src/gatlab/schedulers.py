"""
Grounding schedulers: decide, per agent and decision step, whether the
agent's action is grounded.

- PatternScheduler: alternate independent agent sets by epoch
- ProbabilisticScheduler: ground with fixed probability p
- UncertaintyGatedScheduler: a base scheduler vetoed when the forward
  ensemble is more uncertain than its recent average
"""

import logging
import math
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig, GridSpec
from .models import ConfigError, InvariantViolation
from .neighborhood import Neighborhood, manhattan

logger = logging.getLogger(__name__)


def pattern_sets(grid: GridSpec, r: int) -> Tuple[FrozenSet[int], ...]:
    """
    Agent sets that are each independent under distance <= r and jointly
    cover the grid.

    r = 1 splits by (x + y) parity; larger radii peel greedy independent sets
    in index order, which may need more than two sets.
    """
    if r < 1:
        raise ConfigError("Pattern grounding requires a sensing radius r >= 1", offending_keys=["radius"])
    hood = Neighborhood(grid, r)
    if r == 1:
        even = frozenset(a.index for a in hood.agents if (a.x + a.y) % 2 == 0)
        odd = frozenset(a.index for a in hood.agents if (a.x + a.y) % 2 == 1)
        return (even, odd)

    remaining = [a.index for a in hood.agents]
    sets: List[FrozenSet[int]] = []
    while remaining:
        chosen: List[int] = []
        for index in remaining:
            if all(index not in hood.members[c] for c in chosen):
                chosen.append(index)
        sets.append(frozenset(chosen))
        remaining = [i for i in remaining if i not in chosen]
    while len(sets) < 2:
        sets.append(frozenset())
    return tuple(sets)


def check_pattern_safety(grounded: Sequence[int], hood: Neighborhood) -> None:
    """
    Raises:
        InvariantViolation: if two grounded agents sit within the sensing radius
    """
    for pos, a in enumerate(grounded):
        for b in grounded[pos + 1:]:
            if manhattan(hood.agents[a], hood.agents[b]) <= hood.radius:
                raise InvariantViolation(
                    f"Pattern safety breached: agents {a} and {b} grounded together "
                    f"within radius {hood.radius}"
                )


def probabilistic_gate(p: float, rng: np.random.Generator) -> bool:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Grounding probability must be in [0, 1], got {p}")
    return bool(rng.random() < p)


def uncertainty_threshold(history: Sequence[float], override: Optional[float] = None) -> float:
    if override is not None:
        return override
    if len(history) < 2:
        return math.inf
    return (history[-1] + history[-2]) / 2.0


def uncertainty_gate(history: Sequence[float], current: float, override: Optional[float] = None) -> bool:
    """False (do not ground) iff `current` exceeds the threshold from the last two epoch averages."""
    return not current > uncertainty_threshold(history, override)


class PatternScheduler:
    name = "pattern"
    needs_uncertainty = False

    def __init__(self, hood: Neighborhood):
        self.hood = hood
        self.sets = pattern_sets(hood.grid, hood.radius)
        self.isolated = frozenset(i for i, members in enumerate(hood.members) if not members)

    def active_set(self, epoch: int) -> FrozenSet[int]:
        return self.sets[(epoch - 1) % len(self.sets)] | self.isolated

    def should_ground(self, agent: int, epoch: int, rng: np.random.Generator,
                      uncertainty: Optional[float] = None) -> bool:
        return agent in self.active_set(epoch)

    def end_epoch(self, epoch: int) -> None:
        pass


class ProbabilisticScheduler:
    name = "prob"
    needs_uncertainty = False

    def __init__(self, p: float):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"p_ground must be in [0, 1], got {p}", offending_keys=["p_ground"])
        self.p = p

    def should_ground(self, agent: int, epoch: int, rng: np.random.Generator,
                      uncertainty: Optional[float] = None) -> bool:
        return probabilistic_gate(self.p, rng)

    def end_epoch(self, epoch: int) -> None:
        pass


class UncertaintyGatedScheduler:
    """
    Wraps a base scheduler. The base decision is always taken first so that
    random draws match the base scheduler's draws exactly.
    """
    name = "uq"
    needs_uncertainty = True

    def __init__(self, base, override: Optional[float] = None):
        self.base = base
        self.override = override
        self.history: Dict[int, List[float]] = {}
        self._sums: Dict[int, float] = {}
        self._counts: Dict[int, int] = {}

    def threshold(self, agent: int) -> float:
        return uncertainty_threshold(self.history.get(agent, []), self.override)

    def should_ground(self, agent: int, epoch: int, rng: np.random.Generator,
                      uncertainty: Optional[float] = None) -> bool:
        if uncertainty is None:
            raise ValueError("Uncertainty-gated grounding needs an uncertainty estimate")
        wanted = self.base.should_ground(agent, epoch, rng, uncertainty)
        self._sums[agent] = self._sums.get(agent, 0.0) + uncertainty
        self._counts[agent] = self._counts.get(agent, 0) + 1
        return wanted and uncertainty_gate(self.history.get(agent, []), uncertainty, self.override)

    def end_epoch(self, epoch: int) -> None:
        for agent, count in self._counts.items():
            self.history.setdefault(agent, []).append(self._sums[agent] / count)
        self._sums.clear()
        self._counts.clear()
        self.base.end_epoch(epoch)


def build_scheduler(config: ExperimentConfig, hood: Neighborhood):
    """Scheduler for a grounding method; None for direct and centralized."""
    method = config.method
    if method in ("direct", "centralized"):
        return None
    if method == "decentralized":
        return ProbabilisticScheduler(1.0)
    if method == "jl-pattern":
        return PatternScheduler(hood)
    if method == "jl-prob":
        return ProbabilisticScheduler(config.effective_p_ground)
    if method == "jl-uq":
        if config.uq_base == "pattern":
            base = PatternScheduler(hood)
        else:
            base = ProbabilisticScheduler(config.effective_p_ground)
        return UncertaintyGatedScheduler(base, config.uq_threshold_override)
    raise ConfigError(f"Unknown method: {method}", offending_keys=["method"])
