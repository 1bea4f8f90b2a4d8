"""Tests for phase timing metrics and the metrics.jsonl stream."""

from __future__ import annotations

import json
import threading
from pathlib import Path

import pytest

from fastmcp_server.augpolicy.core import DataFormatError
from fastmcp_server.augpolicy.metrics import (
    MetricsStream,
    PhaseMetrics,
    RunMetricsCollector,
    dump_record,
    get_metrics_collector,
    read_metrics,
    track_phase,
)
from fastmcp_server.augpolicy.schemas import MetricsRecord


@pytest.fixture
def metrics_collector():
    """Provide a fresh RunMetricsCollector instance for each test."""
    return RunMetricsCollector()


class TestPhaseMetrics:
    """PhaseMetrics bookkeeping."""

    def test_record_call_increments_counts(self):
        """Successes and failures are counted separately."""
        metrics = PhaseMetrics(name="pretrain")
        metrics.record_call(duration=0.5, success=True)
        metrics.record_call(duration=1.0, success=False, error="boom")
        assert metrics.call_count == 2
        assert metrics.success_count == 1
        assert metrics.error_count == 1
        assert metrics.errors == ["boom"]

    def test_durations(self):
        metrics = PhaseMetrics(name="probe")
        for duration in (0.5, 1.5, 0.2):
            metrics.record_call(duration=duration, success=True)
        assert metrics.total_duration == pytest.approx(2.2)
        assert metrics.min_duration == pytest.approx(0.2)
        assert metrics.max_duration == pytest.approx(1.5)
        assert metrics.avg_duration == pytest.approx(2.2 / 3)

    def test_error_history_is_bounded(self):
        metrics = PhaseMetrics(name="search")
        for i in range(150):
            metrics.record_call(0.0, False, f"e{i}")
        assert len(metrics.errors) == 100
        assert metrics.errors[0] == "e50"

    def test_to_dict_formats(self):
        metrics = PhaseMetrics(name="x")
        assert metrics.to_dict()["min_duration_ms"] == "0.00"
        metrics.record_call(0.25, True)
        data = metrics.to_dict()
        assert data["success_rate"] == "100.00%"
        assert data["avg_duration_ms"] == "250.00"


class TestRunMetricsCollector:
    """Collector aggregation and thread safety."""

    def test_summary(self, metrics_collector):
        metrics_collector.record_phase("pretrain", 1.0, True)
        metrics_collector.record_phase("pretrain", 1.0, False, "x")
        metrics_collector.increment("snapshots", 3)
        summary = metrics_collector.get_summary()
        assert summary["total_calls"] == 2
        assert summary["error_count"] == 1
        assert summary["error_rate"] == "50.00%"
        assert summary["counters"] == {"snapshots": 3}

    def test_reset(self, metrics_collector):
        metrics_collector.record_phase("probe", 0.1, True)
        metrics_collector.reset()
        assert metrics_collector.get_phase_metrics() == {}
        assert metrics_collector.get_summary()["total_calls"] == 0

    def test_concurrent_records(self, metrics_collector):
        def work():
            for _ in range(200):
                metrics_collector.record_phase("train_epoch", 0.001, True)

        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert metrics_collector.get_phase_metrics()["train_epoch"]["call_count"] == 1600


class TestTrackPhase:
    """The track_phase decorator."""

    def test_records_success(self):
        @track_phase("double")
        def double(x):
            return 2 * x

        assert double(4) == 8
        assert double.__name__ == "double"
        assert get_metrics_collector().get_phase_metrics()["double"]["success_count"] == 1

    def test_records_first_error_line_and_reraises(self):
        @track_phase("explode")
        def explode():
            raise ValueError("first line\nsecond line")

        with pytest.raises(ValueError):
            explode()
        phase = get_metrics_collector().get_phase_metrics()["explode"]
        assert phase["error_count"] == 1
        assert phase["recent_errors"] == ["first line"]


class TestMetricsStream:
    """Deterministic JSON lines."""

    def test_dump_record_sorted_and_sparse(self):
        line = dump_record(MetricsRecord(epoch=3, phase="train", mean_infonce=4.5, policy_id="coviews-e0002"))
        assert line == '{"epoch": 3, "mean_infonce": 4.5, "phase": "train", "policy_id": "coviews-e0002"}'

    def test_write_and_read(self, tmp_path: Path):
        stream = MetricsStream(tmp_path / "metrics.jsonl")
        stream.write(MetricsRecord(epoch=1, phase="warmup", mean_infonce=5.0))
        stream.write(MetricsRecord(epoch=2, phase="search", ppo_epoch=1, mean_reward=0.9))
        stream.write(MetricsRecord(epoch=2, phase="train", mean_infonce=4.8))
        records = read_metrics(stream.path)
        assert [(r.epoch, r.phase) for r in records] == [(1, "warmup"), (2, "search"), (2, "train")]
        lines = stream.path.read_text().splitlines()
        assert all(json.loads(line) for line in lines)

    def test_new_stream_truncates(self, tmp_path: Path):
        path = tmp_path / "metrics.jsonl"
        path.write_text("stale\n")
        MetricsStream(path)
        assert path.read_text() == ""

    def test_epoch_must_not_decrease(self, tmp_path: Path):
        stream = MetricsStream(tmp_path / "m.jsonl")
        stream.write(MetricsRecord(epoch=5, phase="train"))
        with pytest.raises(DataFormatError):
            stream.write(MetricsRecord(epoch=4, phase="train"))

    def test_read_rejects_bad_line(self, tmp_path: Path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"epoch": 1, "phase": "warmup"}\n{"epoch": 2, "phase": "cooldown"}\n')
        with pytest.raises(DataFormatError) as exc:
            read_metrics(path)
        assert ":2 " in str(exc.value)
