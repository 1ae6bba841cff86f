"""
Grounding Engine

Forward models predict the real environment's next observation; inverse
models pick the simulator action that reproduces that prediction. The engine
owns one model pair per agent (decentralized / joint-local modes) or one
global pair (centralized mode), trains them from the dataset store and
grounds the policies' actions during simulator training.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ExperimentConfig, InformationChannels
from .datasets import DatasetStore, build_global_samples
from .interfaces import ForwardPredictor, GroundingScheduler, InversePredictor
from .models import (
    REAL, SIM, ConfigError, DimensionError, GroundingDecision, LayoutError, RoutingError
)
from .neighborhood import LocalJoint, LocalLayout, Neighborhood, global_joint
from .nncore import CCE, MSE, SIMPLEX, DenseNet, OptimizerState, save_net, train_step
from .schedulers import (
    PatternScheduler, UncertaintyGatedScheduler, build_scheduler, check_pattern_safety
)
from .seeding import derive_rng

logger = logging.getLogger(__name__)


def _check_layout(expected: LocalLayout, joint: LocalJoint) -> None:
    if joint.layout != expected:
        raise LayoutError(f"Joint layout {joint.layout} does not match model layout {expected}")
    if joint.obs.shape[0] != expected.obs_length or joint.act.shape[0] != expected.act_length:
        raise LayoutError(
            f"Joint vectors have lengths ({joint.obs.shape[0]}, {joint.act.shape[0]}), "
            f"layout needs ({expected.obs_length}, {expected.act_length})"
        )


def joint_from_record(record, layout: LocalLayout) -> LocalJoint:
    joint = LocalJoint(layout=layout, obs=record.obs_local, act=record.act_local, mask=record.mask)
    _check_layout(layout, joint)
    return joint


# ============================================================
# MODELS
# ============================================================

class ForwardModel:
    """f: [o^L; a^L; mask] -> next self observation (one per self slot).

    Observations are multiplied by `obs_scale` on the way in and predictions
    divided by it on the way out.
    """

    def __init__(
        self,
        layout: LocalLayout,
        channels: Optional[InformationChannels] = None,
        hidden: Sequence[int] = (64, 64),
        learning_rate: float = 1e-3,
        rng: Optional[np.random.Generator] = None,
        obs_scale: float = 1.0,
    ):
        self.layout = layout
        self.channels = channels or InformationChannels()
        self.obs_scale = obs_scale
        self.input_size = layout.obs_length + layout.act_length + layout.slots
        self.output_size = layout.obs_size * layout.self_slots
        self.net = DenseNet([self.input_size, *hidden, self.output_size], rng=rng)
        self.optimizer = OptimizerState.for_net(self.net, learning_rate)

    def encode(self, joint: LocalJoint) -> np.ndarray:
        _check_layout(self.layout, joint)
        obs = np.array(joint.obs, dtype=float) * self.obs_scale
        act = np.array(joint.act, dtype=float)
        if not self.layout.global_view:
            if not self.channels.forward_neighbor_states:
                obs[self.layout.obs_size:] = 0.0
            if not self.channels.forward_neighbor_actions:
                act[self.layout.num_actions:] = 0.0
        return np.concatenate([obs, act, joint.mask])

    def predict(self, joint: LocalJoint) -> np.ndarray:
        return self.net.forward(self.encode(joint)) / self.obs_scale


class InverseModel:
    """h: [o^L; a^L; predicted next obs; mask] -> action simplex per self slot."""

    def __init__(
        self,
        layout: LocalLayout,
        channels: Optional[InformationChannels] = None,
        hidden: Sequence[int] = (64, 64),
        learning_rate: float = 1e-3,
        rng: Optional[np.random.Generator] = None,
        obs_scale: float = 1.0,
    ):
        self.layout = layout
        self.channels = channels or InformationChannels()
        self.obs_scale = obs_scale
        self.groups = layout.self_slots
        self.input_size = (
            layout.obs_length + layout.act_length + layout.obs_size * self.groups + layout.slots
        )
        self.net = DenseNet(
            [self.input_size, *hidden, layout.num_actions * self.groups],
            head=SIMPLEX,
            simplex_groups=self.groups,
            rng=rng,
        )
        self.optimizer = OptimizerState.for_net(self.net, learning_rate)

    def encode(self, joint: LocalJoint, predicted_next: np.ndarray) -> np.ndarray:
        _check_layout(self.layout, joint)
        predicted = np.asarray(predicted_next, dtype=float)
        expected = self.layout.obs_size * self.groups
        if predicted.shape[0] != expected:
            raise DimensionError("predicted next observation", expected, predicted.shape[0])
        predicted = predicted * self.obs_scale
        obs = np.array(joint.obs, dtype=float) * self.obs_scale
        act = np.array(joint.act, dtype=float)
        k = self.layout.num_actions
        if self.layout.global_view:
            if not self.channels.inverse_self_action:
                act[:] = 0.0
        else:
            if not self.channels.inverse_neighbor_states:
                obs[self.layout.obs_size:] = 0.0
            if not self.channels.inverse_neighbor_actions:
                act[k:] = 0.0
            if not self.channels.inverse_self_action:
                # the executed self action is the training label
                act[:k] = 0.0
        return np.concatenate([obs, act, predicted, joint.mask])

    def probabilities(self, joint: LocalJoint, predicted_next: np.ndarray) -> np.ndarray:
        return self.net.forward(self.encode(joint, predicted_next))

    def ground(self, joint: LocalJoint, predicted_next: np.ndarray) -> np.ndarray:
        probs = self.probabilities(joint, predicted_next).reshape(self.groups, self.layout.num_actions)
        return np.argmax(probs, axis=1)


class ForwardEnsemble:
    """Forward models trained on identical minibatches; member 0 drives grounding."""

    def __init__(self, members: Sequence[ForwardModel]):
        if len(members) < 2:
            raise ValueError(f"An uncertainty ensemble needs at least 2 members, got {len(members)}")
        self.members = list(members)

    @property
    def layout(self) -> LocalLayout:
        return self.members[0].layout

    def predict(self, joint: LocalJoint) -> np.ndarray:
        return self.members[0].predict(joint)

    def uncertainty(self, joint: LocalJoint) -> float:
        return estimate_uncertainty(self, joint)


Forward = Union[ForwardModel, ForwardEnsemble]


# ============================================================
# OPERATIONS
# ============================================================

def forward_predict(f: ForwardPredictor, joint: LocalJoint) -> np.ndarray:
    return np.asarray(f.predict(joint), dtype=float)


def inverse_ground(h: InversePredictor, joint: LocalJoint, predicted_next: np.ndarray) -> int:
    return int(h.ground(joint, predicted_next)[0])


def estimate_uncertainty(ensemble, joint: LocalJoint) -> float:
    """Mean over output dimensions of the across-member (population) variance."""
    members = getattr(ensemble, "members", ensemble)
    if len(members) < 2:
        raise ValueError(f"Uncertainty needs at least 2 ensemble members, got {len(members)}")
    predictions = np.stack([m.predict(joint) for m in members])
    if np.all(predictions == predictions[0]):
        return 0.0
    return float(np.var(predictions, axis=0).mean())


def _check_source(batch: Sequence, source: str, what: str) -> None:
    if not batch:
        raise ValueError(f"Empty batch: cannot train the {what} model")
    for record in batch:
        if record.source != source:
            raise RoutingError(
                f"{record.source}-tagged record offered to the {what} model, "
                f"which trains on {source} data only"
            )


def train_forward(f: Forward, batch: Sequence) -> float:
    """
    One MSE step toward the observed real next observations.

    An ensemble trains every member on the same batch and reports member 0's loss.

    Raises:
        RoutingError: if any record is not tagged real
        ValueError: on an empty batch
    """
    _check_source(batch, REAL, "forward")
    members = f.members if isinstance(f, ForwardEnsemble) else [f]
    targets = np.stack([np.asarray(r.next_obs, dtype=float) for r in batch])
    losses = []
    for model in members:
        scaled = targets * model.obs_scale
        inputs = np.stack([model.encode(joint_from_record(r, model.layout)) for r in batch])
        losses.append(train_step(model.net, model.optimizer, inputs, scaled, MSE))
    return losses[0]


def train_inverse(h: InverseModel, batch: Sequence) -> float:
    """
    One CCE step toward the executed simulator actions.

    Raises:
        RoutingError: if any record is not tagged sim
        ValueError: on an empty batch
    """
    _check_source(batch, SIM, "inverse")
    k = h.layout.num_actions
    inputs = np.stack([
        h.encode(joint_from_record(r, h.layout), np.asarray(r.next_obs, dtype=float)) for r in batch
    ])
    targets = np.stack([
        np.concatenate([np.eye(k)[a] for a in r.labels]) for r in batch
    ])
    return train_step(h.net, h.optimizer, inputs, targets, CCE)


def ground_action(
    agent: int,
    observations: Sequence[np.ndarray],
    actions: Sequence[int],
    hood: Neighborhood,
    forward: Optional[ForwardPredictor],
    inverse: Optional[InversePredictor],
    scheduler: GroundingScheduler,
    epoch: int,
    rng: np.random.Generator,
    t: float = 0.0,
) -> Tuple[int, GroundingDecision]:
    """
    Grounded action for one agent, from the snapshot of all policy actions
    chosen this step.
    """
    joint = hood.assemble(agent, observations, actions)
    uncertainty = None
    if scheduler.needs_uncertainty:
        uncertainty = forward.uncertainty(joint)  # type: ignore[union-attr]
    gated = scheduler.should_ground(agent, epoch, rng, uncertainty)
    original = int(actions[agent])
    if gated:
        if forward is None or inverse is None:
            raise ConfigError(f"Agent {agent} is gated but has no grounding models", offending_keys=["method"])
        grounded = inverse_ground(inverse, joint, forward_predict(forward, joint))
    else:
        grounded = original
    decision = GroundingDecision(
        epoch=epoch, t=t, agent=agent, gated=gated,
        grounded_action=grounded, original_action=original, uncertainty=uncertainty,
    )
    return grounded, decision


def centralized_ground(
    observations: Sequence[np.ndarray],
    actions: Sequence[int],
    forward: ForwardPredictor,
    inverse: InversePredictor,
    layout: LocalLayout,
) -> List[int]:
    """
    Ground all agents at once: predict the next global state, then take the
    per-agent argmax of the inverse model's N action heads.
    """
    if len(observations) != layout.slots or len(actions) != layout.slots:
        raise DimensionError("agent count", layout.slots, len(observations))
    joint = global_joint(observations, actions, layout)
    predicted = forward_predict(forward, joint)
    return [int(a) for a in inverse.ground(joint, predicted)]


# ============================================================
# ENGINE
# ============================================================

def _sample(pool: Sequence, size: int, rng: np.random.Generator) -> List:
    picks = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
    return [pool[int(i)] for i in picks]


class GroundingEngine:
    """
    Model pairs, scheduler and decision log for one trial.

    Model initialization and minibatch streams are keyed by agent index, so
    a centralized engine on a 1x1 grid and a decentralized one draw alike.
    """

    def __init__(self, config: ExperimentConfig, seed: int):
        self.config = config
        self.seed = seed
        self.method = config.method
        self.n = config.grid.num_intersections
        self.hood = Neighborhood(config.grid, config.effective_radius)
        self.scheduler = build_scheduler(config, self.hood)
        self.decisions: List[GroundingDecision] = []
        self.forwards: List[Forward] = []
        self.inverses: List[InverseModel] = []
        self.layout = self.hood.layout
        self._pattern_guard = isinstance(self.scheduler, PatternScheduler) or (
            isinstance(self.scheduler, UncertaintyGatedScheduler)
            and isinstance(self.scheduler.base, PatternScheduler)
        )

        m = config.models
        if self.method == "direct":
            return
        if self.method == "centralized":
            self.layout = LocalLayout.for_network(self.n)
            count = 1
        else:
            count = self.n
        for i in range(count):
            forward = ForwardModel(self.layout, config.channels, m.hidden, m.learning_rate,
                                   rng=derive_rng(seed, "forward-init", i), obs_scale=m.observation_scale)
            if self.method == "jl-uq":
                extra = [
                    ForwardModel(self.layout, config.channels, m.hidden, m.learning_rate,
                                 rng=derive_rng(seed, "forward-init", i, k), obs_scale=m.observation_scale)
                    for k in range(1, m.ensemble_size)
                ]
                self.forwards.append(ForwardEnsemble([forward] + extra))
            else:
                self.forwards.append(forward)
            self.inverses.append(InverseModel(self.layout, config.channels, m.hidden, m.learning_rate,
                                              rng=derive_rng(seed, "inverse-init", i),
                                              obs_scale=m.observation_scale))
        self.validate()

    @property
    def active(self) -> bool:
        return self.method != "direct"

    def validate(self) -> None:
        """
        Raises:
            ConfigError: when a grounding method lacks models or a scheduler
        """
        expected = 1 if self.method == "centralized" else self.n
        if len(self.forwards) != expected or len(self.inverses) != expected:
            raise ConfigError(f"Method {self.method} needs {expected} model pairs", offending_keys=["method"])
        if self.method != "centralized" and self.scheduler is None:
            raise ConfigError(f"Method {self.method} needs a grounding scheduler", offending_keys=["method"])
        if self.scheduler is not None and self.scheduler.needs_uncertainty:
            if not all(isinstance(f, ForwardEnsemble) for f in self.forwards):
                raise ConfigError("Uncertainty gating needs forward ensembles", offending_keys=["models.ensemble_size"])

    # ------------------------------------------------------------
    # training
    # ------------------------------------------------------------

    def train(self, store: DatasetStore, epoch: int) -> Tuple[float, float]:
        """Train every model pair for `models.train_steps` minibatches; mean losses."""
        steps = self.config.models.train_steps
        batch_size = self.config.models.batch_size
        f_losses: List[float] = []
        h_losses: List[float] = []
        for i in range(len(self.forwards)):
            if self.method == "centralized":
                real = build_global_samples(store.records(REAL), self.n)
                sim = build_global_samples(store.records(SIM), self.n)
            else:
                real = store.records(REAL, agent=i)
                sim = store.records(SIM, agent=i)
            rng_f = derive_rng(self.seed, "models", epoch, i, "forward-batch")
            rng_h = derive_rng(self.seed, "models", epoch, i, "inverse-batch")
            for _ in range(steps):
                if real:
                    f_losses.append(train_forward(self.forwards[i], _sample(real, batch_size, rng_f)))
                if sim:
                    h_losses.append(train_inverse(self.inverses[i], _sample(sim, batch_size, rng_h)))
        f_mean = float(np.mean(f_losses)) if f_losses else 0.0
        h_mean = float(np.mean(h_losses)) if h_losses else 0.0
        logger.info(f"Epoch {epoch}: forward loss {f_mean:.4f}, inverse loss {h_mean:.4f}")
        return f_mean, h_mean

    # ------------------------------------------------------------
    # grounding
    # ------------------------------------------------------------

    def ground_step(
        self,
        observations: Sequence[np.ndarray],
        actions: Sequence[int],
        epoch: int,
        t: float,
        rng: np.random.Generator,
    ) -> List[int]:
        """Executed actions for all agents; appends one decision per agent."""
        if self.method == "centralized":
            grounded = centralized_ground(observations, actions, self.forwards[0], self.inverses[0], self.layout)
            for i, (g, a) in enumerate(zip(grounded, actions)):
                self.decisions.append(GroundingDecision(epoch, t, i, True, g, int(a)))
            return grounded

        executed: List[int] = []
        step_decisions: List[GroundingDecision] = []
        for i in range(self.n):
            action, decision = ground_action(
                i, observations, actions, self.hood, self.forwards[i], self.inverses[i],
                self.scheduler, epoch, rng, t,
            )
            executed.append(action)
            step_decisions.append(decision)
        if self._pattern_guard:
            check_pattern_safety([d.agent for d in step_decisions if d.gated], self.hood)
        self.decisions.extend(step_decisions)
        logger.debug(f"t={t}: grounded {[d.agent for d in step_decisions if d.gated]}")
        return executed

    def end_epoch(self, epoch: int) -> None:
        if self.scheduler is not None:
            self.scheduler.end_epoch(epoch)

    def grounding_rate(self, epoch: Optional[int] = None) -> float:
        chosen = [d for d in self.decisions if epoch is None or d.epoch == epoch]
        return sum(d.gated for d in chosen) / len(chosen) if chosen else 0.0

    # ------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------

    def save(self, directory: Path) -> List[Path]:
        directory.mkdir(parents=True, exist_ok=True)
        written: List[Path] = []
        prefix = "global" if self.method == "centralized" else "agent-{i}"
        for i, (forward, inverse) in enumerate(zip(self.forwards, self.inverses)):
            name = prefix.format(i=i)
            members = forward.members if isinstance(forward, ForwardEnsemble) else [forward]
            for k, member in enumerate(members):
                suffix = "" if k == 0 else f"-{k}"
                path = directory / f"{name}-forward{suffix}.txt"
                save_net(member.net, path)
                written.append(path)
            path = directory / f"{name}-inverse.txt"
            save_net(inverse.net, path)
            written.append(path)
        return written
