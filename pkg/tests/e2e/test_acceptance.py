"""
Acceptance checks on the reference scenarios.
"""

import numpy as np
import pytest

from gatlab.config import DYNAMICS_PRESETS, reference_config
from gatlab.harness import TrialRunner, run_trial, run_trials
from gatlab.schedulers import pattern_sets
from gatlab.simcore import run_fixed_cycle


def fixed_cycle_metrics(dynamics_name, rows=1, cols=3):
    config = reference_config(rows=rows, cols=cols)
    sim = run_fixed_cycle(config.grid, config.flow, DYNAMICS_PRESETS[dynamics_name], config.timing)
    assert sim.conservation_holds()
    return sim.metrics(config.timing.horizon)


@pytest.mark.acceptance
@pytest.mark.slow
def test_worse_weather_means_longer_trips():
    default, rainy, snowy = (fixed_cycle_metrics(name) for name in ("default", "rainy", "snowy"))
    assert default.att < rainy.att < snowy.att
    assert default.throughput >= snowy.throughput


@pytest.mark.acceptance
@pytest.mark.slow
def test_direct_transfer_shows_a_gap():
    config = reference_config(real="rainy", gat_epochs=0, trials=3)
    for k in range(config.trials):
        pretrained = run_trial(config, k).result.epoch(0)
        assert pretrained.real.att > pretrained.sim.att, k
        assert pretrained.real.throughput < pretrained.sim.throughput, k


@pytest.mark.acceptance
@pytest.mark.slow
def test_pretraining_improves_episode_reward():
    runner = TrialRunner(reference_config())
    runner.pretrain()
    rewards = runner.pretrain_rewards
    assert len(rewards) == 50
    assert np.mean(rewards[-10:]) > np.mean(rewards[:10])


@pytest.mark.acceptance
@pytest.mark.slow
def test_grounding_narrows_the_real_travel_time():
    att = {}
    for method in ("direct", "decentralized", "jl-prob"):
        result = run_trials(reference_config(method=method), jobs=3)
        att[method] = next(row.mean_real for row in result.summary if row.metric == "att")
    assert att["jl-prob"] <= att["decentralized"] <= att["direct"]
    assert att["jl-prob"] <= 0.98 * att["direct"]


@pytest.mark.acceptance
@pytest.mark.slow
def test_pattern_grounding_on_4x4_stays_independent(tiny_config):
    output = run_trial(tiny_config("jl-pattern", rows=4, cols=4), 0)
    even, odd = pattern_sets(reference_config(rows=4, cols=4).grid, 1)
    by_epoch = {}
    for d in output.decisions:
        if d.gated:
            by_epoch.setdefault(d.epoch, set()).add(d.agent)
    assert by_epoch == {1: set(even), 2: set(odd)}


@pytest.mark.acceptance
@pytest.mark.slow
@pytest.mark.parametrize("method", ["centralized", "decentralized", "jl-uq"])
def test_archives_are_byte_identical_across_runs(tiny_config, tmp_path, method):
    config = tiny_config(method)
    first, second = tmp_path / "first", tmp_path / "second"
    run_trials(config, out_dir=str(first))
    run_trials(config, out_dir=str(second))
    for path in sorted(p for p in first.rglob("*") if p.is_file()):
        twin = second / path.relative_to(first)
        assert twin.read_bytes() == path.read_bytes(), path.relative_to(first)


@pytest.mark.acceptance
@pytest.mark.slow
@pytest.mark.parametrize("method", ["direct", "jl-pattern"])
def test_identical_dynamics_have_no_gap(tiny_config, method):
    output = run_trial(tiny_config(method, real="default"), 0)
    for epoch in output.result.epochs:
        assert epoch.real == epoch.sim, epoch.epoch
