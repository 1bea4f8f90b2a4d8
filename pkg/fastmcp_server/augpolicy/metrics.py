"""Run metrics: the deterministic ``metrics.jsonl`` stream and in-process phase timings."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import timedelta
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import ValidationError as PydanticValidationError

from .core import DataFormatError
from .schemas import MetricsRecord


@dataclass
class PhaseMetrics:
    """Timing and outcome counters for one named phase or tool."""

    name: str
    call_count: int = 0
    success_count: int = 0
    error_count: int = 0
    total_duration: float = 0.0
    min_duration: float = float("inf")
    max_duration: float = 0.0
    errors: List[str] = field(default_factory=list)

    def record_call(self, duration: float, success: bool, error: Optional[str] = None) -> None:
        self.call_count += 1
        self.total_duration += duration
        self.min_duration = min(self.min_duration, duration)
        self.max_duration = max(self.max_duration, duration)
        if success:
            self.success_count += 1
        else:
            self.error_count += 1
            if error:
                self.errors.append(error)
                # Keep only last 100 errors
                if len(self.errors) > 100:
                    self.errors = self.errors[-100:]

    @property
    def avg_duration(self) -> float:
        return self.total_duration / self.call_count if self.call_count > 0 else 0.0

    @property
    def success_rate(self) -> float:
        return (self.success_count / self.call_count * 100) if self.call_count > 0 else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "call_count": self.call_count,
            "success_count": self.success_count,
            "error_count": self.error_count,
            "success_rate": f"{self.success_rate:.2f}%",
            "avg_duration_ms": f"{self.avg_duration * 1000:.2f}",
            "min_duration_ms": f"{(self.min_duration if self.call_count else 0.0) * 1000:.2f}",
            "max_duration_ms": f"{self.max_duration * 1000:.2f}",
            "recent_errors": self.errors[-10:],
        }


class RunMetricsCollector:
    """Thread-safe registry of phase timings for the current process."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._start_time = time.time()
        self._phases: Dict[str, PhaseMetrics] = {}
        self._counters: Dict[str, int] = {}

    def record_phase(self, name: str, duration: float, success: bool, error: Optional[str] = None) -> None:
        with self._lock:
            if name not in self._phases:
                self._phases[name] = PhaseMetrics(name=name)
            self._phases[name].record_call(duration, success, error)

    def increment(self, counter: str, amount: int = 1) -> None:
        with self._lock:
            self._counters[counter] = self._counters.get(counter, 0) + amount

    def get_summary(self) -> Dict[str, Any]:
        with self._lock:
            uptime = time.time() - self._start_time
            calls = sum(p.call_count for p in self._phases.values())
            errors = sum(p.error_count for p in self._phases.values())
            return {
                "uptime_seconds": uptime,
                "uptime_formatted": str(timedelta(seconds=int(uptime))),
                "total_calls": calls,
                "error_count": errors,
                "error_rate": f"{(errors / calls * 100) if calls else 0.0:.2f}%",
                "counters": dict(self._counters),
            }

    def get_phase_metrics(self) -> Dict[str, Any]:
        with self._lock:
            return {name: metrics.to_dict() for name, metrics in self._phases.items()}

    def reset(self) -> None:
        with self._lock:
            self._phases.clear()
            self._counters.clear()
            self._start_time = time.time()


_metrics_collector = RunMetricsCollector()


def get_metrics_collector() -> RunMetricsCollector:
    """Get the process-wide collector."""
    return _metrics_collector


def track_phase(name: str):
    """Decorator recording duration and outcome of each call under ``name``."""

    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            error = None
            success = True
            try:
                return func(*args, **kwargs)
            except Exception as e:
                error = str(e).splitlines()[0] if str(e) else type(e).__name__
                success = False
                raise
            finally:
                get_metrics_collector().record_phase(name, time.perf_counter() - start_time, success, error)

        return wrapper

    return decorator


def dump_record(record: MetricsRecord) -> str:
    """One JSON line with sorted keys and no null fields."""
    return json.dumps(record.model_dump(mode="json", exclude_none=True), sort_keys=True)


class MetricsStream:
    """Append-only ``metrics.jsonl`` writer enforcing nondecreasing epochs."""

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._last_epoch = -1
        self._lock = threading.Lock()
        self.path.write_text("", encoding="utf-8")

    def write(self, record: MetricsRecord) -> None:
        with self._lock:
            if record.epoch < self._last_epoch:
                raise DataFormatError(
                    f"Metrics epoch went backwards: {record.epoch} after {self._last_epoch}",
                )
            self._last_epoch = record.epoch
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(dump_record(record) + "\n")


def read_metrics(path: Union[str, Path]) -> List[MetricsRecord]:
    """Parse and validate every line of a metrics stream."""

    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(MetricsRecord.model_validate_json(line))
            except PydanticValidationError as exc:
                raise DataFormatError(
                    f"{path}:{lineno} is not a valid metrics record",
                    context={"errors": exc.errors(include_url=False)},
                ) from exc
    return records
