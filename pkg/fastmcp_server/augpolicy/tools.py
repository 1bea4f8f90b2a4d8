"""Augmentation-policy tool definitions for the FastMCP server."""

import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any, Dict, Iterator, Literal, Optional

import numpy as np
from fastmcp import FastMCP
from fastmcp.exceptions import ToolError
from pydantic import Field

from . import cli
from .augment import encode_pair
from .core import AugPolicyError, logger
from .data import CIFAR10_DIRNAME
from .metrics import get_metrics_collector, track_phase
from .policy import PolicyNet, load_snapshot
from .policy_queue import sampling_distribution
from .reward import bounded_reward
from .schemas import RewardConfig


SERVER_NAME = "Adaptive Augment MCP"


@contextmanager
def _as_tool_errors() -> Iterator[None]:
    """Re-raise domain and validation failures as ToolError with the same text."""
    try:
        yield
    except AugPolicyError as exc:
        raise ToolError(str(exc)) from exc
    except ValueError as exc:  # pydantic models raise ValueError subclasses
        raise ToolError(str(exc)) from exc


def register_augpolicy_tools(mcp: FastMCP, exclude: Optional[set] = None) -> None:
    """Register augmentation-policy tools on the provided FastMCP instance.

    Args:
        mcp: The FastMCP instance to register tools on.
        exclude: Optional set of tool names to exclude from registration.
    """
    exclude = exclude or set()

    if "augpolicy_bounded_reward" not in exclude:
        @mcp.tool(annotations={"title": "Bounded InfoNCE Reward", "readOnlyHint": True})
        @track_phase("augpolicy_bounded_reward")
        def augpolicy_bounded_reward(
            loss: Annotated[float, Field(description="Batch InfoNCE value.")],
            average: Annotated[float, Field(description="Last contrastive epoch's mean InfoNCE (must be positive).")],
            th: Annotated[float, Field(gt=1.0, description="Threshold on the normalized loss.")] = 1.3,
            b: Annotated[float, Field(gt=0.0, description="Tolerance past the threshold before the reward reaches zero.")] = 0.2,
        ) -> Dict[str, Any]:
            """Compute the bounded reward for one loss value."""

            with _as_tool_errors():
                cfg = RewardConfig(th=th, b=b)
                reward = bounded_reward(loss, average, cfg)
            normalized = loss / average
            return {
                "reward": reward,
                "normalized_loss": normalized,
                "region": "linear" if normalized < th else "penalty",
                "th": th,
                "b": b,
            }

    if "augpolicy_queue_distribution" not in exclude:
        @mcp.tool(annotations={"title": "Policy Queue Sampling Distribution", "readOnlyHint": True})
        @track_phase("augpolicy_queue_distribution")
        def augpolicy_queue_distribution(
            length: Annotated[int, Field(ge=1, le=1000, description="Number of policies in the queue.")],
            base_prob: Annotated[float, Field(gt=0.0, lt=1.0, description="Geometric base probability p.")] = 0.5,
        ) -> Dict[str, Any]:
            """Probability of drawing each queue slot, newest first."""

            with _as_tool_errors():
                probs = sampling_distribution(base_prob, length)
            return {"probabilities": probs.tolist(), "sum": float(probs.sum())}

    if "augpolicy_sample_subpolicies" not in exclude:
        @mcp.tool(annotations={"title": "Sample Subpolicy Pairs", "readOnlyHint": True})
        @track_phase("augpolicy_sample_subpolicies")
        def augpolicy_sample_subpolicies(
            count: Annotated[int, Field(ge=1, le=1000, description="Number of pairs to sample.")] = 4,
            mode: Annotated[Literal["coviews", "indepviews"], Field(description="Policy network mode for a fresh policy.")] = "coviews",
            n_tau: Annotated[int, Field(ge=1, le=8, description="Transformations per view.")] = 2,
            seed: Annotated[int, Field(description="Sampling seed.")] = 0,
            snapshot_path: Annotated[
                Optional[str],
                Field(default=None, description="Policy snapshot to sample from instead of a fresh network."),
            ] = None,
        ) -> Dict[str, Any]:
            """Sample subpolicy pairs from a saved snapshot or a freshly initialized policy."""

            rng = np.random.default_rng(seed)
            with _as_tool_errors():
                if snapshot_path:
                    source = load_snapshot(snapshot_path)
                    policy_id = source.policy_id
                else:
                    source = PolicyNet(mode, n_tau, rng=rng)
                    policy_id = f"{mode}-init"
                sample = source.sample_pairs(count, rng)
            return {
                "policy_id": policy_id,
                "pairs": [encode_pair(p) for p in sample.pairs],
                "log_probs": sample.log_probs.tolist(),
                "entropies": sample.entropies.tolist(),
            }

    if "augpolicy_pretrain" not in exclude:
        @mcp.tool(annotations={"title": "Run Contrastive Pretraining"})
        @track_phase("augpolicy_pretrain")
        def augpolicy_pretrain(
            out: Annotated[str, Field(min_length=1, description="Run directory to write.")],
            mode: Annotated[Literal["coviews", "indepviews", "random"], Field(description="Policy mode.")] = "coviews",
            epochs: Annotated[Optional[int], Field(default=None, ge=1, description="Contrastive epochs.")] = None,
            warmup: Annotated[Optional[int], Field(default=None, ge=1, description="Warmup epochs.")] = None,
            seed: Annotated[int, Field(description="Run seed.")] = 0,
            overrides: Annotated[
                Optional[Dict[str, str]],
                Field(default=None, description="Extra dotted config keys, e.g. {'ppo.ppo_epochs': '5'}."),
            ] = None,
        ) -> Dict[str, Any]:
            """Run warmup, policy searches and contrastive training into ``out``."""

            flags: Dict[str, Any] = dict(overrides or {})
            flags.update({"out": out, "mode": mode, "seed": seed})
            if epochs is not None:
                flags["contrastive.epochs"] = epochs
            if warmup is not None:
                flags["contrastive.warmup_epochs"] = warmup
            logger.info("augpolicy.pretrain", extra={"context": {"out": out, "mode": mode}})
            with _as_tool_errors():
                cfg = cli.resolve_config(None, flags)
                run_dir = cli.cmd_pretrain(cfg)
            snapshots = sorted(p.name for p in (run_dir / cli.SNAPSHOT_DIR).glob("*.ckpt"))
            return {
                "run_dir": str(run_dir),
                "metrics": str(run_dir / cli.METRICS_FILE),
                "encoder": str(run_dir / cli.ENCODER_FILE),
                "snapshots": snapshots,
            }

    if "augpolicy_probe" not in exclude:
        @mcp.tool(annotations={"title": "Linear Probe a Run"})
        @track_phase("augpolicy_probe")
        def augpolicy_probe(
            run_dir: Annotated[str, Field(min_length=1, description="Run directory produced by pretraining.")],
            seeds: Annotated[Optional[int], Field(default=None, ge=1, le=20, description="Number of probe seeds.")] = None,
        ) -> Dict[str, Any]:
            """Train linear probes on the frozen encoder and report top-1 accuracy."""

            with _as_tool_errors():
                report = cli.cmd_probe(run_dir, seeds=range(seeds) if seeds else None)
            return report.model_dump()

    if "augpolicy_inspect" not in exclude:
        @mcp.tool(annotations={"title": "Inspect Policy Snapshots"})
        @track_phase("augpolicy_inspect")
        def augpolicy_inspect(
            run_dir: Annotated[str, Field(min_length=1, description="Run directory holding snapshots.")],
            samples: Annotated[int, Field(ge=1, le=100_000, description="Pairs sampled per snapshot.")] = 1000,
            seed: Annotated[int, Field(description="Sampling seed.")] = 0,
        ) -> Dict[str, Any]:
            """Write op marginals, co-occurrence counts and independence tests as CSV."""

            with _as_tool_errors():
                paths = cli.cmd_inspect(run_dir, samples, seed)
            return {name: str(path) for name, path in paths.items()}

    if "augpolicy_get_metrics" not in exclude:
        @mcp.tool(annotations={"title": "Get Server Metrics", "readOnlyHint": True})
        @track_phase("augpolicy_get_metrics")
        def augpolicy_get_metrics() -> Dict[str, Any]:
            """Expose in-process phase and tool timings."""

            collector = get_metrics_collector()
            logger.info("augpolicy.metrics_report")
            return {"summary": collector.get_summary(), "phases": collector.get_phase_metrics()}

    if "augpolicy_health_check" not in exclude:
        @mcp.tool(annotations={"title": "Augment Server Health Check", "readOnlyHint": True})
        @track_phase("augpolicy_health_check")
        def augpolicy_health_check() -> Dict[str, Any]:
            """Report numeric-stack sanity and CIFAR-10 availability."""

            start_time = time.time()
            numeric_ok = True
            numeric_error: Optional[str] = None
            try:
                probs = sampling_distribution(0.5, 5)
                if abs(float(probs.sum()) - 1.0) > 1e-12:
                    raise AugPolicyError("queue distribution does not sum to one")
            except Exception as exc:  # pragma: no cover - broken installation
                numeric_ok = False
                numeric_error = str(exc)

            data_dir = os.getenv("AUGPOLICY_DATA_DIR")
            cifar_ready = bool(data_dir) and (
                (Path(data_dir) / CIFAR10_DIRNAME).is_dir() or (Path(data_dir) / "test_batch.bin").is_file()
            )
            summary = get_metrics_collector().get_summary()
            return {
                "status": "healthy" if numeric_ok else "degraded",
                "numeric": {
                    "healthy": numeric_ok,
                    "latency_ms": f"{(time.time() - start_time) * 1000:.2f}",
                    "error": numeric_error,
                },
                "data": {"data_dir": data_dir, "cifar10_ready": cifar_ready},
                "server": {
                    "uptime": summary.get("uptime_formatted"),
                    "total_calls": summary.get("total_calls"),
                    "error_rate": summary.get("error_rate"),
                },
            }


def create_server() -> FastMCP:
    mcp = FastMCP(SERVER_NAME)
    register_augpolicy_tools(mcp)
    return mcp
