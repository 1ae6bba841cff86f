"""
Sensing neighborhoods and the fixed-size local joint layout.

An agent's local joint observation is its own observation followed by the
observations of every agent within Manhattan distance r, in (dx, dy) order,
zero-padded up to the layout capacity K_max = 2r(r+1). The local joint
action uses the same slots with one-hot actions.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .agents import NUM_ACTIONS, AgentId, one_hot
from .config import GridSpec
from .models import DimensionError
from .simcore import OBS_SIZE


def manhattan(a: AgentId, b: AgentId) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


def neighbors(agent: AgentId, r: int, grid: GridSpec) -> List[AgentId]:
    """All other agents within distance r, sorted by (dx, dy) relative to `agent`."""
    if r < 0:
        raise ValueError(f"Sensing radius must be nonnegative, got {r}")
    found = []
    for y in range(grid.rows):
        for x in range(grid.cols):
            other = AgentId.from_coords(grid, x, y)
            if other != agent and manhattan(agent, other) <= r:
                found.append(other)
    return sorted(found, key=lambda o: (o.x - agent.x, o.y - agent.y))


def layout_capacity(r: int) -> int:
    return 2 * r * (r + 1)


@dataclass(frozen=True)
class LocalLayout:
    """
    Slot layout of a joint vector. A local layout has one self slot followed
    by K_max neighbor slots; a global layout (centralized grounding) treats
    every slot as a self slot, one per agent in index order.
    """
    slots: int
    obs_size: int = OBS_SIZE
    num_actions: int = NUM_ACTIONS
    global_view: bool = False

    @classmethod
    def for_radius(cls, r: int, obs_size: int = OBS_SIZE, num_actions: int = NUM_ACTIONS) -> 'LocalLayout':
        return cls(layout_capacity(r) + 1, obs_size, num_actions)

    @classmethod
    def for_network(cls, n: int, obs_size: int = OBS_SIZE, num_actions: int = NUM_ACTIONS) -> 'LocalLayout':
        return cls(n, obs_size, num_actions, global_view=True)

    @property
    def k_max(self) -> int:
        return 0 if self.global_view else self.slots - 1

    @property
    def self_slots(self) -> int:
        return self.slots if self.global_view else 1

    @property
    def obs_length(self) -> int:
        return self.slots * self.obs_size

    @property
    def act_length(self) -> int:
        return self.slots * self.num_actions


@dataclass(frozen=True)
class LocalJoint:
    """o^L, a^L and the shared presence mask for one agent at one step."""
    layout: LocalLayout
    obs: np.ndarray
    act: np.ndarray
    mask: np.ndarray

    def obs_slot(self, k: int) -> np.ndarray:
        size = self.layout.obs_size
        return self.obs[k * size:(k + 1) * size]

    def act_slot(self, k: int) -> np.ndarray:
        size = self.layout.num_actions
        return self.act[k * size:(k + 1) * size]

    @property
    def self_obs(self) -> np.ndarray:
        return self.obs_slot(0)

    def self_action(self) -> int:
        return int(np.argmax(self.act_slot(0)))


class Neighborhood:
    """Precomputed neighbor lists for one (grid, r)."""

    def __init__(self, grid: GridSpec, radius: int, obs_size: int = OBS_SIZE, num_actions: int = NUM_ACTIONS):
        self.grid = grid
        self.radius = radius
        self.layout = LocalLayout.for_radius(radius, obs_size, num_actions)
        self.agents = [AgentId.from_index(grid, i) for i in range(grid.num_intersections)]
        self.members: List[List[int]] = [
            [n.index for n in neighbors(agent, radius, grid)] for agent in self.agents
        ]

    def assemble(self, agent: int, observations: Sequence[np.ndarray], actions: Sequence[int]) -> LocalJoint:
        layout = self.layout
        n = self.grid.num_intersections
        if len(observations) != n:
            raise DimensionError("observations", n, len(observations))
        if len(actions) != n:
            raise DimensionError("actions", n, len(actions))
        obs = np.zeros(layout.obs_length)
        act = np.zeros(layout.act_length)
        mask = np.zeros(layout.slots)
        for slot, index in enumerate([agent] + self.members[agent]):
            o = np.asarray(observations[index], dtype=float)
            if o.shape[0] != layout.obs_size:
                raise DimensionError("agent observation", layout.obs_size, o.shape[0])
            obs[slot * layout.obs_size:(slot + 1) * layout.obs_size] = o
            act[slot * layout.num_actions:(slot + 1) * layout.num_actions] = one_hot(int(actions[index]), layout.num_actions)
            mask[slot] = 1.0
        return LocalJoint(layout=layout, obs=obs, act=act, mask=mask)


def assemble_local_joint(
    observations: Sequence[np.ndarray],
    actions: Sequence[int],
    agent: AgentId,
    r: int,
    grid: GridSpec,
) -> LocalJoint:
    return Neighborhood(grid, r).assemble(agent.index, observations, actions)


def global_joint(observations: Sequence[np.ndarray], actions: Sequence[int], layout: LocalLayout) -> LocalJoint:
    """Global state and joint action (centralized grounding), agents in index order."""
    if len(observations) != layout.slots:
        raise DimensionError("observations", layout.slots, len(observations))
    if len(actions) != layout.slots:
        raise DimensionError("actions", layout.slots, len(actions))
    obs = np.concatenate([np.asarray(o, dtype=float) for o in observations])
    if obs.shape[0] != layout.obs_length:
        raise DimensionError("global state", layout.obs_length, obs.shape[0])
    act = np.concatenate([one_hot(int(a), layout.num_actions) for a in actions])
    return LocalJoint(layout=layout, obs=obs, act=act, mask=np.ones(layout.slots))
