"""
Pytest configuration and shared fixtures for gatlab tests.
"""

from dataclasses import replace

import numpy as np
import pytest

from gatlab.config import (
    DYNAMICS_PRESETS, DqnConfig, FlowEntry, FlowSpec, GridSpec, ModelConfig, TimingConfig,
    reference_config,
)


@pytest.fixture
def grid_1x3():
    return GridSpec(rows=1, cols=3)


@pytest.fixture
def grid_4x4():
    return GridSpec(rows=4, cols=4)


@pytest.fixture
def grid_1x1():
    return GridSpec(rows=1, cols=1)


@pytest.fixture
def default_dynamics():
    return DYNAMICS_PRESETS["default"]


@pytest.fixture
def eastbound_route():
    """West terminal through the single 1x1 intersection to the east terminal."""
    return ((-1, 0), (0, 0), (1, 0))


@pytest.fixture
def single_vehicle_flow(eastbound_route):
    return FlowSpec(entries=(FlowEntry(route=eastbound_route, start=0.0, headway=5.0, count=1),))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_tiny_config(method="direct", rows=1, cols=3, real="rainy", **kwargs):
    """A short-horizon experiment that trains in seconds."""
    config = reference_config(
        rows=rows,
        cols=cols,
        real=real,
        method=method,
        timing=TimingConfig(horizon=60.0),
        pretrain_episodes=2,
        gat_epochs=2,
        trials=1,
        dqn=DqnConfig(hidden=(8,), batch_size=4, buffer_capacity=200, sync_every=5),
        models=ModelConfig(hidden=(8,), train_steps=2, batch_size=8, ensemble_size=2),
    )
    return replace(config, **kwargs) if kwargs else config


@pytest.fixture
def tiny_config():
    return make_tiny_config


@pytest.fixture
def output_dir(tmp_path):
    out = tmp_path / "outputs"
    out.mkdir()
    return out
