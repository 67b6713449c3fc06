"""Communication cost model, runtime model, and the metrics sink.

Traffic per client per round is the trainable fraction of the full-model
upload cost, C = (d_t / d) * B_f, and delay is pure bandwidth division;
both are closed-form, so totals and speedups are exact.  The per-round table
and summary formats written here are fixed and documented in the README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ShapeError
from .masking import PartitionMask

MB = 1_000_000  # metrics use SI megabytes

ROUNDS_FILE = "rounds.csv"
SUMMARY_FILE = "summary.txt"
_ROUNDS_VERSION = "# dpfedsim-rounds v1"
_SUMMARY_VERSION = "# dpfedsim-summary v1"
_COLUMNS = ("round", "loss", "accuracy", "epsilon", "bytes_up", "bytes_down", "delay_s", "wall_s")


@dataclass(frozen=True)
class CommModel:
    """Link model: bandwidth, full-model upload size, fixed per-message cost."""

    bandwidth_mbps: float
    full_model_bytes: float
    per_message_overhead_bytes: float = 0.0

    def __post_init__(self) -> None:
        if self.bandwidth_mbps <= 0:
            raise ShapeError("bandwidth must be > 0")
        if self.full_model_bytes <= 0:
            raise ShapeError("full_model_bytes must be > 0")
        if self.per_message_overhead_bytes < 0:
            raise ShapeError("overhead must be >= 0")


@dataclass(frozen=True)
class RoundRecord:
    """Everything the simulator reports about one communication round."""

    round_index: int
    global_loss: float
    global_accuracy: float
    epsilon_to_date: float
    bytes_up_per_client: float
    bytes_down_per_client: float
    modeled_delay_s: float
    wall_time_s: float
    participants: int


def traffic_per_round(
    mask: PartitionMask, comm: CommModel, encoding: str = "dense-f32"
) -> float:
    """Upstream bytes per client per round for a full masked update."""
    if encoding == "dense-f32":
        payload = mask.trainable_fraction * comm.full_model_bytes
    elif encoding == "sparse-idx32-f32":
        payload = 16.0 + 8.0 * mask.trainable_count
    else:
        raise ShapeError(f"unknown encoding {encoding!r}")
    return payload + comm.per_message_overhead_bytes


def delay_seconds(nbytes: float, comm: CommModel) -> float:
    """Transfer time under the linear bandwidth model."""
    if nbytes < 0:
        raise ShapeError("byte count must be >= 0")
    return nbytes / (comm.bandwidth_mbps * MB)


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return repr(value) if isinstance(value, float) else str(value)


def render_rounds_table(records: list[RoundRecord]) -> str:
    lines = [_ROUNDS_VERSION, ",".join(_COLUMNS)]
    for r in records:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.round_index,
                    r.global_loss,
                    r.global_accuracy,
                    r.epsilon_to_date,
                    r.bytes_up_per_client,
                    r.bytes_down_per_client,
                    r.modeled_delay_s,
                    r.wall_time_s,
                )
            )
        )
    return "\n".join(lines) + "\n"


def summarize(records: list[RoundRecord]) -> dict[str, float | int | str]:
    """Aggregate totals; a pure function of the records, so rewrites are idempotent."""
    if not records:
        return {
            "rounds": 0,
            "final_loss": 0.0,
            "final_accuracy": 0.0,
            "final_epsilon": 0.0,
            "total_bytes_up": 0.0,
            "total_bytes_down": 0.0,
            "total_delay_s": 0.0,
            "total_wall_s": 0.0,
            "bytes_up_per_client_round": 0.0,
        }
    last = records[-1]
    return {
        "rounds": len(records),
        "final_loss": last.global_loss,
        "final_accuracy": last.global_accuracy,
        "final_epsilon": last.epsilon_to_date,
        "total_bytes_up": sum(r.bytes_up_per_client * r.participants for r in records),
        "total_bytes_down": sum(r.bytes_down_per_client * r.participants for r in records),
        "total_delay_s": sum(r.modeled_delay_s for r in records),
        "total_wall_s": sum(r.wall_time_s for r in records),
        "bytes_up_per_client_round": last.bytes_up_per_client,
    }


def write_records(records: list[RoundRecord], out_dir: str | Path) -> dict:
    """Persist the per-round table and key=value summary under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / ROUNDS_FILE).write_text(render_rounds_table(records))
    summary = summarize(records)
    lines = [_SUMMARY_VERSION] + [f"{k}={_fmt(v)}" for k, v in summary.items()]
    (out / SUMMARY_FILE).write_text("\n".join(lines) + "\n")
    return summary


def read_summary(path: str | Path) -> dict[str, str]:
    """Parse a summary file back into raw key -> string values."""
    result: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        result[key.strip()] = value.strip()
    return result
