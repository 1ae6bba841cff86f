"""
Experiment Harness

Runs the grounded training loop per trial:

1. Pre-train policies in E_sim (pure DQN, no grounding)
2. Evaluate the pretrained policies in both environments (epoch 0)
3. For every GAT epoch:
   a. Roll out policies in E_sim and E_real, filling D_sim / D_real
   b. Update the forward and inverse models
   c. Train policies in E_sim with grounded actions
   d. Evaluate in both environments (greedy, no grounding)

Every episode draws from its own random streams keyed by
(trial seed, phase, epoch, episode, purpose).
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .agents import DqnPolicy, ReplayBuffer, dump_policy, epsilon_for_episode, select_action
from .archive import (
    trial_dir, update_manifest, write_archive_json, write_epochs_csv,
    write_grounding_log, write_summary_csv,
)
from .config import ExperimentConfig, VehicleDynamics, validate_config
from .datasets import DatasetStore
from .grounding import GroundingEngine
from .models import REAL, SIM, EpochResult, GroundingDecision, MetricsReport, TransitionRecord, TrialResult
from .reporting import SummaryRow, compute_gap, select_best_epoch, summarize_trials
from .seeding import derive_rng
from .simcore import TrafficSim

logger = logging.getLogger(__name__)


@dataclass
class TrialOutput:
    result: TrialResult
    decisions: List[GroundingDecision] = field(default_factory=list)
    pretrain_rewards: List[float] = field(default_factory=list)


class TrialRunner:
    """
    One trial of one method.

    Keeps a decision trace (phase, epoch, summary) alongside the grounding
    decision log for replayability.
    """

    def __init__(self, config: ExperimentConfig, trial: int = 0):
        self.config = validate_config(config)
        self.trial = trial
        self.seed = config.base_seed + trial
        self.n = config.grid.num_intersections
        self.policies = [
            DqnPolicy(config.dqn, rng=derive_rng(self.seed, "policy-init", i)) for i in range(self.n)
        ]
        self.buffers = [ReplayBuffer(config.dqn.buffer_capacity) for _ in range(self.n)]
        self.store = DatasetStore(config.dataset_cap)
        self.engine = GroundingEngine(config, self.seed)
        self.hood = self.engine.hood
        self.result = TrialResult(trial=trial, seed=self.seed)
        self.pretrain_rewards: List[float] = []
        self.decision_trace: List[Dict[str, Any]] = []
        self.pretrained_snapshot: List[str] = []
        self.best_snapshot: Optional[List[str]] = None
        self._episode_id = 0

    def _trace(self, step: str, data: Dict[str, Any]) -> None:
        self.decision_trace.append({"step": step, "data": data})

    # ------------------------------------------------------------
    # episodes
    # ------------------------------------------------------------

    def run_episode(
        self,
        dynamics: VehicleDynamics,
        epsilon: float,
        explore_rng: Optional[np.random.Generator] = None,
        replay_rng: Optional[np.random.Generator] = None,
        record_source: Optional[str] = None,
        ground_epoch: Optional[int] = None,
        gate_rng: Optional[np.random.Generator] = None,
        t_offset: float = 0.0,
    ) -> MetricsReport:
        """
        One episode of `timing.horizon` seconds at the action-interval cadence.

        replay_rng given: push (o, a, r, o') and run DQN updates.
        record_source given: append TransitionRecords to that dataset.
        ground_epoch given: ground actions through the engine.
        """
        config = self.config
        timing = config.timing
        sim = TrafficSim(config.grid, config.flow, dynamics, timing)
        episode = self._episode_id
        self._episode_id += 1

        observations = sim.observe_all()
        while sim.clock < timing.horizon - 1e-9:
            t = sim.clock
            actions = [
                select_action(self.policies[i], observations[i], epsilon, explore_rng) for i in range(self.n)
            ]
            executed = actions
            if ground_epoch is not None and self.engine.active:
                executed = self.engine.ground_step(observations, actions, ground_epoch, t_offset + t, gate_rng)

            sim.run_interval(executed, duration=min(timing.action_interval, timing.horizon - t))
            next_observations = sim.observe_all()

            for i in range(self.n):
                if record_source is not None:
                    joint = self.hood.assemble(i, observations, actions)
                    self.store.add(TransitionRecord(
                        agent=i, episode=episode, t=t,
                        obs_local=joint.obs, act_local=joint.act, mask=joint.mask,
                        action=actions[i], next_obs=next_observations[i], source=record_source,
                    ), expected_source=record_source)
                if replay_rng is not None:
                    # the original action pairs with the outcome of the executed one
                    self.buffers[i].push(observations[i], actions[i], -sim.pressure(i), next_observations[i])
                    self.policies[i].learn(self.buffers[i], replay_rng)
            observations = next_observations

        return sim.metrics(timing.horizon)

    # ------------------------------------------------------------
    # phases
    # ------------------------------------------------------------

    def pretrain(self) -> List[DqnPolicy]:
        config = self.config
        total = config.pretrain_episodes
        logger.info(f"=== STEP 1: PRE-TRAIN POLICIES (trial {self.trial}, {total} episodes) ===")
        for m in range(total):
            epsilon = epsilon_for_episode(m, total, config.dqn.epsilon_start, config.dqn.epsilon_end)
            for policy in self.policies:
                policy.epsilon = epsilon
            report = self.run_episode(
                config.sim_dynamics,
                epsilon,
                explore_rng=derive_rng(self.seed, "pretrain", m, "explore"),
                replay_rng=derive_rng(self.seed, "pretrain", m, "replay"),
            )
            self.pretrain_rewards.append(report.reward)
            logger.debug(f"Pretrain episode {m}: eps={epsilon:.3f} reward={report.reward:.2f} att={report.att:.2f}")
        for policy in self.policies:
            policy.epsilon = config.dqn.gat_epsilon
        self._trace("pretrain", {"episodes": total, "rewards": list(self.pretrain_rewards)})
        return self.policies

    def collect_rollout(
        self,
        source: str,
        epoch: int,
        episode: int = 0,
        epsilon: Optional[float] = None,
        stream: str = "rollout",
    ) -> int:
        """One exploratory episode in the tagged environment; returns records appended."""
        if source not in (SIM, REAL):
            raise ValueError(f"Unknown environment tag: {source}")
        dynamics = self.config.sim_dynamics if source == SIM else self.config.real_dynamics
        before = self.store.appended[source]
        self.run_episode(
            dynamics,
            self.config.dqn.gat_epsilon if epsilon is None else epsilon,
            explore_rng=derive_rng(self.seed, stream, epoch, episode, source),
            record_source=source,
        )
        return self.store.appended[source] - before

    def evaluate(self, epoch: int) -> EpochResult:
        sim_report = self.run_episode(self.config.sim_dynamics, 0.0)
        real_report = self.run_episode(self.config.real_dynamics, 0.0)
        gap = compute_gap(real_report, sim_report)
        logger.info(
            f"Epoch {epoch}: ATT sim={sim_report.att:.2f} real={real_report.att:.2f} "
            f"(gap {gap.delta('att'):.2f}), TP gap {gap.delta('throughput'):.0f}"
        )
        result = EpochResult(epoch=epoch, sim=sim_report, real=real_report)
        self.result.epochs.append(result)
        return result

    def gat_epoch(self, epoch: int) -> EpochResult:
        config = self.config
        if self.engine.active:
            logger.info(f"=== STEP 2: ROLLOUT IN E_sim AND E_real (epoch {epoch}) ===")
            self.collect_rollout(SIM, epoch)
            self.collect_rollout(REAL, epoch)
            for k in range(config.models.explore_episodes):
                self.collect_rollout(SIM, epoch, k, epsilon=config.models.explore_epsilon, stream="explore-rollout")

            logger.info(f"=== STEP 3: UPDATE TRANSFORMATION FUNCTIONS (epoch {epoch}) ===")
            f_loss, h_loss = self.engine.train(self.store, epoch)
            self._trace("models", {"epoch": epoch, "forward_loss": f_loss, "inverse_loss": h_loss})

        logger.info(f"=== STEP 4: POLICY TRAINING (epoch {epoch}) ===")
        for e in range(config.policy_episodes):
            self.run_episode(
                config.sim_dynamics,
                config.dqn.gat_epsilon,
                explore_rng=derive_rng(self.seed, "train", epoch, e, "explore"),
                replay_rng=derive_rng(self.seed, "train", epoch, e, "replay"),
                ground_epoch=epoch,
                gate_rng=derive_rng(self.seed, "train", epoch, e, "gate"),
                t_offset=e * config.timing.horizon,
            )
        if self.engine.active:
            rate = self.engine.grounding_rate(epoch)
            self._trace("grounding", {"epoch": epoch, "rate": rate})
            logger.info(f"Epoch {epoch}: grounding rate {rate:.3f}")
        self.engine.end_epoch(epoch)

        logger.info(f"=== STEP 5: EVALUATE (epoch {epoch}) ===")
        result = self.evaluate(epoch)
        earlier = [r.real.att for r in self.result.epochs if 1 <= r.epoch < epoch]
        if not earlier or result.real.att < min(earlier):
            self.best_snapshot = [dump_policy(p) for p in self.policies]
        return result

    def run(self) -> TrialOutput:
        logger.info("=" * 80)
        logger.info(f"TRIAL {self.trial}: method={self.config.method} seed={self.seed}")
        logger.info("=" * 80)
        self.pretrain()
        self.pretrained_snapshot = [dump_policy(p) for p in self.policies]
        self.evaluate(0)
        for epoch in range(1, self.config.gat_epochs + 1):
            self.gat_epoch(epoch)
        if self.best_snapshot is None:
            self.best_snapshot = self.pretrained_snapshot
        self.result.best_epoch = select_best_epoch(self.result.epochs)
        self.result.complete = True
        logger.info(f"Trial {self.trial} finished: best epoch {self.result.best_epoch}")
        return TrialOutput(
            result=self.result,
            decisions=list(self.engine.decisions),
            pretrain_rewards=list(self.pretrain_rewards),
        )

    def save(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        write_epochs_csv(directory / "epochs.csv", self.result)
        if self.engine.active:
            write_grounding_log(directory / "grounding_log.csv", self.engine.decisions)
        for name, snapshot in (("pretrained", self.pretrained_snapshot), ("best", self.best_snapshot)):
            folder = directory / "checkpoints" / name
            folder.mkdir(parents=True, exist_ok=True)
            for i, text in enumerate(snapshot):
                (folder / f"agent-{i}.txt").write_text(text, encoding="utf-8")
        if self.engine.active:
            self.engine.save(directory / "checkpoints" / "models")
        if self.config.persist_datasets:
            self.store.save(directory / "datasets")


# ============================================================
# MODULE-LEVEL OPERATIONS
# ============================================================

def pretrain(config: ExperimentConfig, trial: int = 0) -> List[DqnPolicy]:
    return TrialRunner(config, trial).pretrain()


def run_trial(config: ExperimentConfig, trial: int, method_dir: Optional[str] = None) -> TrialOutput:
    runner = TrialRunner(config, trial)
    output = runner.run()
    if method_dir is not None:
        runner.save(trial_dir(Path(method_dir), trial))
    return output


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: List[TrialOutput]
    summary: List[SummaryRow]
    method_dir: Optional[Path] = None

    @property
    def complete(self) -> bool:
        return all(t.result.complete for t in self.trials)


def run_trials(config: ExperimentConfig, out_dir: Optional[str] = None, jobs: int = 1) -> ExperimentResult:
    """
    Run `config.trials` trials with seeds base_seed + k and summarize their
    best epochs. With `out_dir`, writes `<out>/<method>/...` and refreshes
    the top-level manifest; the archive stays flagged incomplete unless all
    trials finish.
    """
    from . import __version__

    config = validate_config(config)
    method_dir = Path(out_dir) / config.method if out_dir is not None else None
    if method_dir is not None:
        write_archive_json(method_dir, config, complete=False)

    trial_ids = list(range(config.trials))
    target = str(method_dir) if method_dir is not None else None
    if jobs > 1 and len(trial_ids) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_trial, config, k, target) for k in trial_ids]
            outputs = [f.result() for f in futures]
    else:
        outputs = [run_trial(config, k, target) for k in trial_ids]

    summary = summarize_trials(config.method, [o.result for o in outputs])
    result = ExperimentResult(config=config, trials=outputs, summary=summary, method_dir=method_dir)
    if method_dir is not None:
        write_summary_csv(method_dir / "summary.csv", summary)
        write_archive_json(method_dir, config, complete=result.complete)
        update_manifest(Path(out_dir), __version__)
        logger.info(f"Archive written: {method_dir}")
    return result


def evaluate_policies(config: ExperimentConfig, policies: Sequence[DqnPolicy]) -> EpochResult:
    """Greedy evaluation of given policies in both environments."""
    runner = TrialRunner(config, 0)
    runner.policies = list(policies)
    return runner.evaluate(0)
