#!/usr/bin/env python3
"""Tour of the toy model family and its per-example gradients.

Walks through the three model kinds, shows the flat named-layer parameter
layout, and spot-checks one analytic gradient against central finite
differences.
"""

import numpy as np

from dpfedsim import (
    ModelSpec,
    ParameterVector,
    SampleBatch,
    forward,
    init_params,
    layer_layout,
    parameter_count,
    per_sample_gradients,
)

np.set_printoptions(precision=5, suppress=True)

# --- the model family ---------------------------------------------------

for spec in (
    ModelSpec("linear", input_dim=3, output_dim=1),
    ModelSpec("logistic", input_dim=2, output_dim=2),
    ModelSpec("mlp", input_dim=2, output_dim=2, hidden_dim=4, activation="tanh"),
):
    print(f"{spec.kind:10s} d={parameter_count(spec):3d} layout={layer_layout(spec)}")

# --- forward pass on the classic zero-parameter logistic case ------------

spec = ModelSpec("logistic", input_dim=2, output_dim=2)
params = ParameterVector(np.zeros(3), layer_layout(spec))
batch = SampleBatch(np.array([[1.0, 0.0]]), np.array([1]))
losses, scores = forward(spec, params, batch)
print("\nzero-weight logistic: loss", losses, "= ln 2, scores", scores)

grads = per_sample_gradients(spec, params, batch)
print("gradient ((p - y) * x, p - y):", grads[0])

# --- finite-difference check on the mlp ----------------------------------

spec = ModelSpec("mlp", input_dim=2, output_dim=2, hidden_dim=3, activation="relu")
params = init_params(spec, seed=0)
rng = np.random.default_rng(1)
batch = SampleBatch(rng.normal(size=(4, 2)), rng.integers(0, 2, size=4))
analytic = per_sample_gradients(spec, params, batch)

h = 1e-5
numeric = np.zeros_like(analytic)
for j in range(params.dim):
    up, down = params.values.copy(), params.values.copy()
    up[j] += h
    down[j] -= h
    lu, _ = forward(spec, ParameterVector(up, params.layout), batch)
    ld, _ = forward(spec, ParameterVector(down, params.layout), batch)
    numeric[:, j] = (lu - ld) / (2 * h)

err = np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric)))
print(f"\nmax relative gradient error vs finite differences: {err:.2e}")
