"""
Per-intersection agents: observation/action/reward wiring and independent
DQN learners with experience replay and a target network.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from .config import DqnConfig, GridSpec
from .nncore import MSE, DenseNet, OptimizerState, dump_net, load_net, train_step
from .simcore import NUM_PHASES, OBS_SIZE, TrafficSim

logger = logging.getLogger(__name__)

NUM_ACTIONS = NUM_PHASES
POLICY_HEADER = "# gatlab policy v1"


@dataclass(frozen=True)
class AgentId:
    index: int
    x: int
    y: int

    @classmethod
    def from_index(cls, grid: GridSpec, index: int) -> 'AgentId':
        if not 0 <= index < grid.num_intersections:
            raise ValueError(f"Agent index {index} outside a {grid.rows}x{grid.cols} grid")
        return cls(index=index, x=index % grid.cols, y=index // grid.cols)

    @classmethod
    def from_coords(cls, grid: GridSpec, x: int, y: int) -> 'AgentId':
        if not (0 <= x < grid.cols and 0 <= y < grid.rows):
            raise ValueError(f"Coordinates ({x}, {y}) outside a {grid.rows}x{grid.cols} grid")
        return cls(index=y * grid.cols + x, x=x, y=y)


def agent_ids(grid: GridSpec) -> List[AgentId]:
    return [AgentId.from_index(grid, i) for i in range(grid.num_intersections)]


def one_hot(action: int, size: int = NUM_ACTIONS) -> np.ndarray:
    if not 0 <= action < size:
        raise ValueError(f"Action {action} outside 0..{size - 1}")
    vec = np.zeros(size)
    vec[action] = 1.0
    return vec


def decode_one_hot(vec: Sequence[float]) -> int:
    arr = np.asarray(vec, dtype=float)
    if np.count_nonzero(arr == 1.0) != 1 or np.count_nonzero(arr) != 1:
        raise ValueError(f"Not a one-hot vector: {arr.tolist()}")
    return int(np.argmax(arr))


def observe(sim: TrafficSim, agent: AgentId) -> np.ndarray:
    return sim.lane_counts(agent.index)


def reward(sim: TrafficSim, agent: AgentId) -> float:
    return -sim.pressure(agent.index)


# ============================================================
# REPLAY
# ============================================================

Transition = Tuple[np.ndarray, int, float, np.ndarray]


class ReplayBuffer:
    """Bounded FIFO of (o, a, r, o') tuples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("Replay capacity must be positive")
        self.capacity = capacity
        self._items: Deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, obs: np.ndarray, action: int, reward: float, next_obs: np.ndarray) -> None:
        self._items.append((np.asarray(obs, dtype=float), int(action), float(reward),
                            np.asarray(next_obs, dtype=float)))

    def items(self) -> List[Transition]:
        return list(self._items)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        """Uniform sample without replacement within the batch."""
        size = min(batch_size, len(self._items))
        picks = rng.choice(len(self._items), size=size, replace=False)
        return [self._items[int(i)] for i in picks]


# ============================================================
# POLICY
# ============================================================

class DqnPolicy:
    """
    Q-network (obs -> hidden -> 8 actions) plus a periodically synced target.
    """

    def __init__(
        self,
        config: Optional[DqnConfig] = None,
        rng: Optional[np.random.Generator] = None,
        obs_size: int = OBS_SIZE,
        num_actions: int = NUM_ACTIONS,
    ):
        self.config = config or DqnConfig()
        sizes = [obs_size, *self.config.hidden, num_actions]
        self.q_net = DenseNet(sizes, rng=rng)
        self.target_net = self.q_net.clone()
        self.optimizer = OptimizerState.for_net(self.q_net, self.config.learning_rate)
        self.gamma = self.config.gamma
        self.epsilon = self.config.epsilon_start
        self.updates = 0

    @property
    def num_actions(self) -> int:
        return self.q_net.output_size

    def scale(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=float) * self.config.observation_scale

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.q_net.forward(self.scale(obs))

    def sync_target(self) -> None:
        self.target_net.copy_from(self.q_net)

    def learn(self, buffer: ReplayBuffer, rng: np.random.Generator) -> Optional[float]:
        """One update once the buffer holds a full batch; None otherwise."""
        if len(buffer) < self.config.batch_size:
            return None
        return dqn_update(self, buffer.sample(self.config.batch_size, rng))


def epsilon_for_episode(episode: int, total: int, start: float = 1.0, end: float = 0.05) -> float:
    """Linear decay from `start` to `end` across `total` pretraining episodes."""
    if total <= 1:
        return end if episode >= total else start
    frac = min(1.0, max(0.0, episode / (total - 1)))
    return start + frac * (end - start)


def select_action(
    policy: DqnPolicy,
    obs: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
) -> int:
    """
    Epsilon-greedy action; greedy ties go to the lowest index.

    A random draw is consumed only when epsilon > 0.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0:
        if rng is None:
            raise ValueError("rng is required when epsilon > 0")
        if rng.random() < epsilon:
            return int(rng.integers(policy.num_actions))
    return int(np.argmax(policy.q_values(obs)))


def dqn_update(policy: DqnPolicy, batch: Sequence[Transition]) -> Optional[float]:
    """
    Regress Q(o)[a] toward r + gamma * max Q_target(o').

    Returns:
        TD loss before the update, or None when the batch is empty (no-op)
    """
    if not batch:
        logger.debug("Empty replay batch, update skipped")
        return None
    obs = policy.scale(np.stack([t[0] for t in batch]))
    next_obs = policy.scale(np.stack([t[3] for t in batch]))
    actions = np.array([t[1] for t in batch], dtype=int)
    rewards = np.array([t[2] for t in batch], dtype=float)

    targets = policy.q_net.forward(obs).copy()
    bootstrap = policy.target_net.forward(next_obs).max(axis=1)
    targets[np.arange(len(batch)), actions] = rewards + policy.gamma * bootstrap

    loss = train_step(policy.q_net, policy.optimizer, obs, targets, MSE)
    policy.updates += 1
    if policy.updates % policy.config.sync_every == 0:
        policy.sync_target()
    return loss


# ============================================================
# CHECKPOINTS
# ============================================================

def dump_policy(policy: DqnPolicy) -> str:
    return "\n".join([
        POLICY_HEADER,
        f"epsilon {format(policy.epsilon, '.17g')}",
        f"updates {policy.updates}",
        "[q_net]",
        dump_net(policy.q_net).rstrip("\n"),
        "[target_net]",
        dump_net(policy.target_net).rstrip("\n"),
    ]) + "\n"


def load_policy(text: str, config: Optional[DqnConfig] = None) -> DqnPolicy:
    lines = text.splitlines()
    if not lines or lines[0] != POLICY_HEADER:
        raise ValueError("Not a gatlab policy checkpoint")
    q_start = lines.index("[q_net]")
    t_start = lines.index("[target_net]")
    q_net = load_net("\n".join(lines[q_start + 1:t_start]))
    target_net = load_net("\n".join(lines[t_start + 1:]))

    policy = DqnPolicy(config, obs_size=q_net.input_size, num_actions=q_net.output_size)
    policy.q_net = q_net
    policy.target_net = target_net
    policy.optimizer = OptimizerState.for_net(q_net, policy.config.learning_rate)
    for line in lines[1:q_start]:
        key, value = line.split()
        if key == "epsilon":
            policy.epsilon = float(value)
        elif key == "updates":
            policy.updates = int(value)
    return policy
