"""Config sweeps over (clients, rounds, epsilon) and the comparison report.

Each sweep cell runs four variants: full vs selective tuning crossed with
fedavg vs fednova aggregation, each from its own derived seed so no two
cells share a random stream.  A cell that fails is recorded as an error row
and the sweep continues.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .comm import read_summary, write_records
from .config import RESOLVED_FILE, ResolvedConfig, load_dataset, rendered_raw, resolve_raw
from .errors import ConfigError, DpFedSimError
from .federation import run_experiment
from .models import layer_layout
from .rng import STREAM_SWEEP, derive_seed

SWEEP_FILE = "sweep.csv"
_SWEEP_HEADER = "clients,rounds,epsilon,ft_fedavg,sel_fedavg,ft_fednova,sel_fednova,status"

_VARIANTS = (
    ("ft_fedavg", "all", "fedavg"),
    ("sel_fedavg", "head", "fedavg"),
    ("ft_fednova", "all", "fednova"),
    ("sel_fednova", "head", "fednova"),
)


@dataclass
class SweepRow:
    clients: int
    rounds: int
    epsilon: float
    accuracies: dict[str, float]
    status: str = "ok"


def _head_layers(resolved: ResolvedConfig) -> str:
    names = [name for name, _, _ in layer_layout(resolved.experiment.model)]
    heads = [name for name in names if name.startswith("head.")]
    return ",".join(heads)


def _grid_values(resolved: ResolvedConfig, key: str, cast) -> list:
    raw = str(resolved.values[key]).strip()
    if not raw:
        return []
    return [cast(part.strip()) for part in raw.split(",") if part.strip()]


def sweep_grid(resolved: ResolvedConfig) -> list[tuple[int, int, float]]:
    """Cartesian grid from the sweep.* keys, falling back to the base values."""
    clients = _grid_values(resolved, "sweep.clients", int) or [resolved.experiment.clients]
    rounds = _grid_values(resolved, "sweep.rounds", int) or [resolved.experiment.rounds]
    base_eps = resolved.experiment.target_epsilon or 0.0
    epsilons = _grid_values(resolved, "sweep.epsilon", float) or [base_eps]
    return [(k, t, e) for k in clients for t in rounds for e in epsilons]


def run_sweep(resolved: ResolvedConfig, out_dir: str | Path) -> list[SweepRow]:
    """Run the grid and persist one summary row per cell plus per-run outputs."""
    grid = sweep_grid(resolved)
    if not grid:
        raise ConfigError("sweep grid is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = _head_layers(resolved)
    rows: list[SweepRow] = []
    for cell_no, (clients, rounds, epsilon) in enumerate(grid):
        accuracies: dict[str, float] = {}
        status = "ok"
        for variant_no, (label, mask, agg) in enumerate(_VARIANTS):
            cell_seed = derive_seed(
                resolved.experiment.seeds.global_seed, STREAM_SWEEP, cell_no, variant_no
            )
            overrides = [
                f"name={resolved.name}-c{clients}-r{rounds}-{label}",
                f"clients={clients}",
                f"rounds={rounds}",
                f"mask_layers={head if mask == 'head' else 'all'}",
                f"aggregation={agg}",
                f"seeds.global={cell_seed}",
            ]
            if epsilon > 0:
                overrides.append(f"privacy.target_epsilon={epsilon}")
            try:
                cell = with_overrides(resolved, overrides)
                train, test = load_dataset(cell)
                result = run_experiment(cell.experiment, train, test)
                run_dir = out / "cells" / str(cell.name)
                write_records(result.records, run_dir)
                (run_dir / RESOLVED_FILE).write_text(cell.dump())
                if result.error:
                    status = f"error: {result.error}"
                    accuracies[label] = float("nan")
                else:
                    accuracies[label] = result.records[-1].global_accuracy if result.records else 0.0
            except DpFedSimError as exc:
                status = f"error: {exc}"
                accuracies[label] = float("nan")
        rows.append(SweepRow(clients, rounds, epsilon, accuracies, status))
    lines = [_SWEEP_HEADER]
    for row in rows:
        cells = [str(row.clients), str(row.rounds), repr(row.epsilon)]
        cells += [repr(row.accuracies[label]) for label, _, _ in _VARIANTS]
        cells.append(row.status)
        lines.append(",".join(cells))
    (out / SWEEP_FILE).write_text("\n".join(lines) + "\n")
    return rows


def with_overrides(resolved: ResolvedConfig, overrides: list[str]) -> ResolvedConfig:
    """Re-resolve a configuration with extra key=value overrides applied."""
    return resolve_raw(rendered_raw(resolved), overrides)


def render_report(output_dir: str | Path) -> str:
    """Tabulate every completed run found under output_dir.

    A run is any directory holding a summary and a resolved config; rows are
    ordered by run name so the report is deterministic.
    """
    out = Path(output_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"report directory not found: {out}")
    runs = []
    for summary_path in sorted(out.rglob("summary.txt")):
        run_dir = summary_path.parent
        config_path = run_dir / RESOLVED_FILE
        if not config_path.is_file():
            continue
        summary = read_summary(summary_path)
        config = read_summary(config_path)
        full_bytes = config.get("comm.full_model_bytes", "auto")
        bytes_up = float(summary.get("bytes_up_per_client_round", "0"))
        if full_bytes != "auto" and float(full_bytes) > 0:
            ratio = bytes_up / float(full_bytes)
        else:
            ratio = float("nan")
        runs.append(
            {
                "run": run_dir.name,
                "accuracy": float(summary.get("final_accuracy", "nan")),
                "epsilon": float(summary.get("final_epsilon", "nan")),
                "traffic_mb": bytes_up / 1e6,
                "delay_s": float(summary.get("total_delay_s", "nan")),
                "runtime_s": float(summary.get("total_wall_s", "nan")),
                "traffic_ratio": ratio,
            }
        )
    if not runs:
        raise FileNotFoundError(
            f"no completed runs under {out}: expected <run>/summary.txt and <run>/{RESOLVED_FILE}"
        )
    headers = ("run", "accuracy", "epsilon", "traffic_mb", "delay_s", "runtime_s", "traffic_ratio")
    table = [headers] + [
        (
            r["run"],
            f"{r['accuracy']:.4f}",
            f"{r['epsilon']:.4f}",
            f"{r['traffic_mb']:.4f}",
            f"{r['delay_s']:.4f}",
            f"{r['runtime_s']:.4f}",
            f"{r['traffic_ratio']:.6f}",
        )
        for r in runs
    ]
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in table]
    return "\n".join(lines) + "\n"
