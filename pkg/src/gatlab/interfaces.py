"""
Minimal interfaces for the grounding components.

Trained networks and exact oracles (used by the toy-system checks) both
satisfy these.
"""

from typing import Optional, Protocol

import numpy as np

from .neighborhood import LocalJoint


class ForwardPredictor(Protocol):
    def predict(self, joint: LocalJoint) -> np.ndarray:
        ...


class InversePredictor(Protocol):
    def ground(self, joint: LocalJoint, predicted_next: np.ndarray) -> np.ndarray:
        """Grounded action index per self slot."""
        ...


class UncertaintySource(Protocol):
    def uncertainty(self, joint: LocalJoint) -> float:
        ...


class GroundingScheduler(Protocol):
    name: str
    needs_uncertainty: bool

    def should_ground(
        self,
        agent: int,
        epoch: int,
        rng: np.random.Generator,
        uncertainty: Optional[float] = None,
    ) -> bool:
        ...

    def end_epoch(self, epoch: int) -> None:
        ...
