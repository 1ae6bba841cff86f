"""
Data Models for the grounding laboratory

Records exchanged between the simulator, the agents, the grounding engine
and the experiment harness, plus the exception hierarchy.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

METRIC_NAMES = ("att", "queue", "delay", "throughput", "reward")

SIM = "sim"
REAL = "real"


@dataclass(frozen=True)
class MetricsReport:
    """
    Episode-level traffic metrics.

    att: seconds; queue: waiting vehicles per intersection per step;
    delay: in [0, 1]; throughput: completed trips; reward: episode mean of
    the per-step sum of negative pressures.
    """
    att: float
    queue: float
    delay: float
    throughput: int
    reward: float

    def get(self, metric: str) -> float:
        return float(getattr(self, metric))

    def to_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricsReport':
        return cls(
            att=float(data["att"]),
            queue=float(data["queue"]),
            delay=float(data["delay"]),
            throughput=int(data["throughput"]),
            reward=float(data["reward"]),
        )


@dataclass(frozen=True)
class MetricGap:
    real: float
    sim: float
    delta: float


@dataclass(frozen=True)
class GapReport:
    """psi_delta = psi_real - psi_sim for each metric."""
    gaps: Dict[str, MetricGap]

    def delta(self, metric: str) -> float:
        return self.gaps[metric].delta

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {
            name: {"real": g.real, "sim": g.sim, "delta": g.delta}
            for name, g in self.gaps.items()
        }


@dataclass
class TransitionRecord:
    """
    One per-agent transition.

    obs_local / act_local / mask follow the local joint layout of the radius
    in use; action is the self action executed in the tagged environment.
    """
    agent: int
    episode: int
    t: float
    obs_local: np.ndarray
    act_local: np.ndarray
    mask: np.ndarray
    action: int
    next_obs: np.ndarray
    source: str

    @property
    def self_obs(self) -> np.ndarray:
        return self.obs_local[:self.next_obs.shape[0]]

    @property
    def labels(self) -> Tuple[int, ...]:
        return (self.action,)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "agent": self.agent,
            "episode": self.episode,
            "t": self.t,
            "obs_local": self.obs_local.tolist(),
            "act_local": self.act_local.tolist(),
            "mask": self.mask.tolist(),
            "action": self.action,
            "next_obs": self.next_obs.tolist(),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TransitionRecord':
        return cls(
            agent=int(data["agent"]),
            episode=int(data["episode"]),
            t=float(data["t"]),
            obs_local=np.asarray(data["obs_local"], dtype=float),
            act_local=np.asarray(data["act_local"], dtype=float),
            mask=np.asarray(data["mask"], dtype=float),
            action=int(data["action"]),
            next_obs=np.asarray(data["next_obs"], dtype=float),
            source=str(data["source"]),
        )


@dataclass
class GlobalSample:
    """All agents' records for one (source, episode, t), concatenated in agent order."""
    episode: int
    t: float
    obs_local: np.ndarray
    act_local: np.ndarray
    mask: np.ndarray
    actions: Tuple[int, ...]
    next_obs: np.ndarray
    source: str

    @property
    def labels(self) -> Tuple[int, ...]:
        return self.actions


@dataclass(frozen=True)
class GroundingDecision:
    epoch: int
    t: float
    agent: int
    gated: bool
    grounded_action: int
    original_action: int
    uncertainty: Optional[float] = None

    def to_row(self) -> List[Any]:
        return [
            self.epoch,
            _num(self.t),
            self.agent,
            int(self.gated),
            self.grounded_action,
            self.original_action,
            "" if self.uncertainty is None else repr(float(self.uncertainty)),
        ]


@dataclass
class EpochResult:
    epoch: int
    sim: MetricsReport
    real: MetricsReport


@dataclass
class TrialResult:
    trial: int
    seed: int
    epochs: List[EpochResult] = field(default_factory=list)
    best_epoch: Optional[int] = None
    complete: bool = False

    def epoch(self, index: int) -> EpochResult:
        for result in self.epochs:
            if result.epoch == index:
                return result
        raise KeyError(index)

    def __repr__(self) -> str:
        return f"TrialResult(trial={self.trial}, best_epoch={self.best_epoch}, complete={self.complete})"


def _num(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


# ============================================================
# CUSTOM EXCEPTIONS
# ============================================================

class GatLabError(Exception):
    """Base exception for grounding laboratory errors"""

    def to_dict(self) -> Dict[str, Any]:
        return {"type": type(self).__name__, "message": str(self)}


class ConfigError(GatLabError):
    """Raised when a configuration or CLI override is invalid"""

    def __init__(self, message: str, offending_keys: Optional[List[str]] = None):
        self.offending_keys = list(offending_keys or [])
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["offending_keys"] = self.offending_keys
        return data


class DimensionError(GatLabError, ValueError):
    """Raised when a vector length does not match a network or layout"""

    def __init__(self, what: str, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class LayoutError(GatLabError, ValueError):
    """Raised when model inputs do not match the model's layout descriptor"""
    pass


class RoutingError(GatLabError):
    """Raised when a transition record reaches the wrong dataset or model"""
    pass


class InvariantViolation(GatLabError):
    """Raised when a runtime invariant (e.g. pattern safety) is breached"""
    pass


class IncompatibleArchivesError(GatLabError):
    """Raised when archives with different grids or flows are compared"""
    pass


class ArchiveIncompleteError(IncompatibleArchivesError):
    """Raised when a report is asked to read an archive flagged incomplete"""
    pass
