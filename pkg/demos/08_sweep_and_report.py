#!/usr/bin/env python3
"""Grid sweep over clients/rounds/epsilon and the rendered comparison table."""

import tempfile
from pathlib import Path

from dpfedsim import resolve_raw
from dpfedsim.sweep import render_report, run_sweep

raw = {
    "name": "sweepdemo",
    "model.kind": "mlp",
    "model.input_dim": "2",
    "model.output_dim": "2",
    "model.hidden_dim": "8",
    "clients": "2",
    "rounds": "2",
    "local_epochs": "1",
    "batch_size": "8",
    "dataset.samples": "160",
    "pretrain.epochs": "100",
    "pretrain.public_fraction": "0.3",
    "sweep.clients": "2,4",
    "sweep.epsilon": "1.33",
}
resolved = resolve_raw(raw)

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "sweep"
    rows = run_sweep(resolved, out)
    print("cell rows (full vs selective, fedavg vs fednova):")
    for row in rows:
        accs = "  ".join(f"{k}={v:.3f}" for k, v in row.accuracies.items())
        print(f"  clients={row.clients} rounds={row.rounds} eps={row.epsilon}: {accs}")

    print("\nsweep.csv:")
    print((out / "sweep.csv").read_text())

    print("report over all per-cell runs:")
    print(render_report(out / "cells"))
