"""
Unit tests for the D_sim / D_real store.
"""

import numpy as np
import pytest

from gatlab.datasets import DatasetStore, build_global_samples, read_records, record_to_line
from gatlab.models import REAL, SIM, RoutingError, TransitionRecord


def make_record(agent=0, source=REAL, episode=0, t=0.0, action=1, scale=1.0):
    return TransitionRecord(
        agent=agent, episode=episode, t=t,
        obs_local=np.array([scale, 2.0, 0.0, 0.0]),
        act_local=np.array([0.0, 1.0, 0.0, 0.0]),
        mask=np.array([1.0, 0.0]),
        action=action,
        next_obs=np.array([scale + 0.5, 1.0]),
        source=source,
    )


class TestDatasetStore:
    """Test routing and capacity."""

    def test_routes_by_tag(self):
        store = DatasetStore()
        store.add(make_record(source=REAL))
        store.add(make_record(source=SIM))
        store.add(make_record(source=SIM))
        assert store.size(REAL) == 1
        assert store.size(SIM) == 2
        assert all(r.source == SIM for r in store.records(SIM))

    def test_mismatched_tag_rejected(self):
        store = DatasetStore()
        with pytest.raises(RoutingError):
            store.add(make_record(source=SIM), expected_source=REAL)
        assert store.size(SIM) == 0

    def test_unknown_tag_rejected(self):
        with pytest.raises(RoutingError):
            DatasetStore().add(make_record(source="lab"))

    def test_cap_evicts_oldest(self):
        store = DatasetStore(cap=3)
        store.extend(make_record(source=REAL, t=float(k)) for k in range(5))
        assert [r.t for r in store.records(REAL)] == [2.0, 3.0, 4.0]
        assert store.appended[REAL] == 5

    def test_per_agent_view(self):
        store = DatasetStore()
        store.extend([make_record(agent=0), make_record(agent=1), make_record(agent=0, t=10.0)])
        assert [r.t for r in store.records(REAL, agent=0)] == [0.0, 10.0]

    def test_invalid_cap(self):
        with pytest.raises(ValueError):
            DatasetStore(cap=0)


class TestGlobalSamples:
    """Test grouping per-agent records for centralized grounding."""

    def test_complete_groups_only(self):
        records = [
            make_record(agent=0, t=0.0, action=2),
            make_record(agent=1, t=0.0, action=5, scale=3.0),
            make_record(agent=0, t=10.0),
        ]
        samples = build_global_samples(records, 2)
        assert len(samples) == 1
        sample = samples[0]
        assert sample.actions == (2, 5)
        assert sample.labels == (2, 5)
        assert list(sample.obs_local) == [1.0, 2.0, 3.0, 2.0]
        assert list(sample.next_obs) == [1.5, 1.0, 3.5, 1.0]
        assert list(sample.mask) == [1.0, 1.0]

    def test_sources_do_not_mix(self):
        records = [make_record(agent=0, source=SIM), make_record(agent=1, source=REAL)]
        assert build_global_samples(records, 2) == []


class TestPersistence:
    """Test the NDJSON dump."""

    def test_save_and_read_back(self, tmp_path):
        store = DatasetStore()
        original = make_record(scale=0.1 + 0.2)
        store.add(original)
        store.add(make_record(source=SIM, t=10.0))
        paths = store.save(tmp_path / "datasets")
        assert [p.name for p in paths] == ["D_sim.ndjson", "D_real.ndjson"]

        restored = read_records(tmp_path / "datasets" / "D_real.ndjson")
        assert len(restored) == 1
        assert np.array_equal(restored[0].obs_local, original.obs_local)
        assert restored[0].source == REAL

    def test_line_format(self):
        line = record_to_line(make_record())
        assert line.startswith('{"agent":0,"episode":0,"t":0,')
        assert '"source":"real"' in line
