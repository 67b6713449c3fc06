"""Tiny differentiable models with exact per-example gradients.

Three model kinds stand in for a large video backbone at desk scale:

* ``linear``   -- linear regression, 0.5 * squared-error loss
* ``logistic`` -- binary logistic regression (single sigmoid logit)
* ``mlp``      -- one hidden layer (relu or tanh), softmax cross-entropy

Parameters live in a single flat float64 vector with named, contiguous layer
ranges, which makes freezing and transport pure index operations.  All
operations are pure functions; gradients are computed by hand-rolled
vectorized backprop and are checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .rng import STREAM_INIT, derive_seed, generator

KINDS = ("linear", "logistic", "mlp")
ACTIVATIONS = ("relu", "tanh")

Layout = tuple[tuple[str, int, int], ...]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; parameter layout is a pure function of it."""

    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ShapeError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError("input_dim and output_dim must be positive")
        if self.kind == "mlp":
            if self.hidden_dim < 1:
                raise ShapeError("mlp requires hidden_dim >= 1")
            if self.activation not in ACTIVATIONS:
                raise ShapeError(
                    f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}"
                )
        else:
            if self.hidden_dim != 0:
                raise ShapeError(f"{self.kind} model must have hidden_dim == 0")
        if self.kind == "logistic" and self.output_dim != 2:
            raise ShapeError("logistic model is binary: output_dim must be 2")
        if self.kind == "linear" and self.output_dim != 1:
            raise ShapeError("linear regression targets are scalar: output_dim must be 1")

    @property
    def is_classifier(self) -> bool:
        return self.kind in ("logistic", "mlp")


def layer_layout(spec: ModelSpec) -> Layout:
    """Ordered (name, offset, length) ranges of the flat parameter vector."""
    if spec.kind == "mlp":
        sizes = [
            ("hidden.weight", spec.hidden_dim * spec.input_dim),
            ("hidden.bias", spec.hidden_dim),
            ("head.weight", spec.output_dim * spec.hidden_dim),
            ("head.bias", spec.output_dim),
        ]
    elif spec.kind == "logistic":
        # single logit: one weight row plus a scalar bias
        sizes = [("head.weight", spec.input_dim), ("head.bias", 1)]
    else:
        sizes = [
            ("head.weight", spec.output_dim * spec.input_dim),
            ("head.bias", spec.output_dim),
        ]
    layout = []
    offset = 0
    for name, length in sizes:
        layout.append((name, offset, length))
        offset += length
    return tuple(layout)


def parameter_count(spec: ModelSpec) -> int:
    layout = layer_layout(spec)
    name, offset, length = layout[-1]
    return offset + length


@dataclass
class ParameterVector:
    """Flat model parameters plus the named-layer layout they follow."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("parameter values must be a 1-D array")
        expected = 0
        for name, offset, length in self.layout:
            if offset != expected:
                raise ShapeError(f"layer {name!r} starts at {offset}, expected {expected}")
            if length < 0:
                raise ShapeError(f"layer {name!r} has negative length")
            expected += length
        if expected != self.values.size:
            raise ShapeError(
                f"layout covers {expected} coordinates but values has {self.values.size}"
            )
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise NumericError(f"non-finite parameter at flat index {bad}")

    @property
    def dim(self) -> int:
        return self.values.size

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def layer(self, name: str) -> np.ndarray:
        """View of one named layer's coordinates."""
        for lname, offset, length in self.layout:
            if lname == name:
                return self.values[offset : offset + length]
        known = [lname for lname, _, _ in self.layout]
        raise ShapeError(f"unknown layer {name!r}; layout has {known}")


@dataclass
class SampleBatch:
    """A batch of inputs and targets (class indices or real regression targets)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 2:
            raise ShapeError("inputs must be a [batch x input_dim] matrix")
        if self.inputs.shape[0] < 1:
            raise ShapeError("batch must contain at least one sample")
        if self.targets.ndim != 1 or self.targets.shape[0] != self.inputs.shape[0]:
            raise ShapeError("targets length must equal the inputs row count")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def take(self, indices: np.ndarray) -> "SampleBatch":
        return SampleBatch(self.inputs[indices], self.targets[indices])


def _check_inputs(spec: ModelSpec, params: ParameterVector, batch: SampleBatch) -> None:
    expected = layer_layout(spec)
    if params.layout != expected:
        for (got_n, got_o, got_l), (want_n, want_o, want_l) in zip(params.layout, expected):
            if (got_n, got_o, got_l) != (want_n, want_o, want_l):
                raise ShapeError(
                    f"layer {want_n!r}: got ({got_n!r}, {got_o}, {got_l}), "
                    f"expected ({want_n!r}, {want_o}, {want_l})"
                )
        raise ShapeError(
            f"layout has {len(params.layout)} layers, model expects {len(expected)}"
        )
    if batch.inputs.shape[1] != spec.input_dim:
        raise ShapeError(
            f"inputs have {batch.inputs.shape[1]} features, model expects {spec.input_dim}"
        )
    if spec.is_classifier:
        y = batch.targets
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.floor(y)):
                raise ShapeError("classification targets must be integer class indices")
        if np.any(y < 0) or np.any(y >= spec.output_dim):
            raise ShapeError(
                f"class indices must lie in [0, {spec.output_dim}); got range "
                f"[{y.min()}, {y.max()}]"
            )


def _class_targets(batch: SampleBatch) -> np.ndarray:
    return batch.targets.astype(np.int64)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _mlp_unpack(spec: ModelSpec, params: ParameterVector):
    w1 = params.layer("hidden.weight").reshape(spec.hidden_dim, spec.input_dim)
    b1 = params.layer("hidden.bias")
    w2 = params.layer("head.weight").reshape(spec.output_dim, spec.hidden_dim)
    b2 = params.layer("head.bias")
    return w1, b1, w2, b2


def _activation(spec: ModelSpec, pre: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(pre, 0.0)
    return np.tanh(pre)


def _activation_grad(spec: ModelSpec, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return (pre > 0.0).astype(np.float64)
    return 1.0 - post * post


def forward(
    spec: ModelSpec, params: ParameterVector, batch: SampleBatch
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and predictions.

    Predictions are class probabilities for classifiers (shape
    [batch x output_dim]) and raw outputs for regression.  Cross-entropy is
    evaluated through a stabilized log-sum-exp so losses stay finite for any
    finite parameters.
    """
    _check_inputs(spec, params, batch)
    x = batch.inputs
    if spec.kind == "linear":
        w = params.layer("head.weight").reshape(spec.output_dim, spec.input_dim)
        b = params.layer("head.bias")
        pred = x @ w.T + b
        resid = pred - batch.targets.astype(np.float64)[:, None]
        losses = 0.5 * np.sum(resid * resid, axis=1)
        return losses, pred
    if spec.kind == "logistic":
        w = params.layer("head.weight")
        b = params.layer("head.bias")[0]
        z = x @ w + b
        y = _class_targets(batch).astype(np.float64)
        # -[y log p + (1-y) log(1-p)] in the overflow-safe form
        losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
        p = _sigmoid(z)
        return losses, np.column_stack([1.0 - p, p])
    w1, b1, w2, b2 = _mlp_unpack(spec, params)
    pre = x @ w1.T + b1
    hidden = _activation(spec, pre)
    logits = hidden @ w2.T + b2
    y = _class_targets(batch)
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(logits - zmax), axis=1))
    losses = lse - logits[np.arange(batch.size), y]
    probs = np.exp(logits - lse[:, None])
    return losses, probs


def per_sample_gradients(
    spec: ModelSpec, params: ParameterVector, batch: SampleBatch
) -> np.ndarray:
    """Matrix of per-example loss gradients, one row per sample.

    Row i is the gradient of sample i's loss with respect to the flat
    parameter vector, in layout order.
    """
    _check_inputs(spec, params, batch)
    x = batch.inputs
    n = batch.size
    if spec.kind == "linear":
        w = params.layer("head.weight").reshape(spec.output_dim, spec.input_dim)
        b = params.layer("head.bias")
        resid = x @ w.T + b - batch.targets.astype(np.float64)[:, None]
        gw = np.einsum("no,ni->noi", resid, x).reshape(n, -1)
        return np.concatenate([gw, resid], axis=1)
    if spec.kind == "logistic":
        w = params.layer("head.weight")
        b = params.layer("head.bias")[0]
        dz = _sigmoid(x @ w + b) - _class_targets(batch).astype(np.float64)
        return np.concatenate([dz[:, None] * x, dz[:, None]], axis=1)
    w1, b1, w2, b2 = _mlp_unpack(spec, params)
    pre = x @ w1.T + b1
    hidden = _activation(spec, pre)
    logits = hidden @ w2.T + b2
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    dz = ez / ez.sum(axis=1, keepdims=True)
    dz[np.arange(n), _class_targets(batch)] -= 1.0
    g_w2 = np.einsum("no,nh->noh", dz, hidden).reshape(n, -1)
    dh = (dz @ w2) * _activation_grad(spec, pre, hidden)
    g_w1 = np.einsum("nh,ni->nhi", dh, x).reshape(n, -1)
    return np.concatenate([g_w1, dh, g_w2, dz], axis=1)


def mean_gradient(spec: ModelSpec, params: ParameterVector, batch: SampleBatch) -> np.ndarray:
    """Gradient of the batch-mean loss, computed in accumulated (matmul) form.

    Deliberately a separate code path from per_sample_gradients; the two are
    cross-checked against each other in the tests.
    """
    _check_inputs(spec, params, batch)
    x = batch.inputs
    n = batch.size
    if spec.kind == "linear":
        w = params.layer("head.weight").reshape(spec.output_dim, spec.input_dim)
        b = params.layer("head.bias")
        resid = x @ w.T + b - batch.targets.astype(np.float64)[:, None]
        gw = resid.T @ x / n
        return np.concatenate([gw.ravel(), resid.mean(axis=0)])
    if spec.kind == "logistic":
        w = params.layer("head.weight")
        b = params.layer("head.bias")[0]
        dz = _sigmoid(x @ w + b) - _class_targets(batch).astype(np.float64)
        return np.concatenate([x.T @ dz / n, [dz.mean()]])
    w1, b1, w2, b2 = _mlp_unpack(spec, params)
    pre = x @ w1.T + b1
    hidden = _activation(spec, pre)
    logits = hidden @ w2.T + b2
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    dz = ez / ez.sum(axis=1, keepdims=True)
    dz[np.arange(n), _class_targets(batch)] -= 1.0
    dz /= n
    g_w2 = dz.T @ hidden
    g_b2 = dz.sum(axis=0)
    dh = (dz @ w2) * _activation_grad(spec, pre, hidden)
    g_w1 = dh.T @ x
    g_b1 = dh.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


def init_params(spec: ModelSpec, seed: int) -> ParameterVector:
    """Seeded initialization: uniform weights in [-a, a] with
    a = sqrt(6 / (fan_in + fan_out)), zero biases."""
    layout = layer_layout(spec)
    values = np.zeros(parameter_count(spec))
    rng = generator(derive_seed(seed, STREAM_INIT))
    fans = _fan_table(spec)
    for name, offset, length in layout:
        if name.endswith(".weight"):
            fan_in, fan_out = fans[name]
            a = np.sqrt(6.0 / (fan_in + fan_out))
            values[offset : offset + length] = rng.uniform(-a, a, size=length)
    return ParameterVector(values, layout)


def _fan_table(spec: ModelSpec) -> dict[str, tuple[int, int]]:
    if spec.kind == "mlp":
        return {
            "hidden.weight": (spec.input_dim, spec.hidden_dim),
            "head.weight": (spec.hidden_dim, spec.output_dim),
        }
    if spec.kind == "logistic":
        return {"head.weight": (spec.input_dim, 1)}
    return {"head.weight": (spec.input_dim, spec.output_dim)}


def save_params(params: ParameterVector, path) -> None:
    """Persist a parameter vector as an .npz archive (values plus layout)."""
    names = [name for name, _, _ in params.layout]
    offsets = [offset for _, offset, _ in params.layout]
    lengths = [length for _, _, length in params.layout]
    np.savez(
        path,
        values=params.values,
        layer_names=np.array(names),
        layer_offsets=np.array(offsets, dtype=np.int64),
        layer_lengths=np.array(lengths, dtype=np.int64),
    )


def load_params(path) -> ParameterVector:
    """Inverse of save_params."""
    with np.load(path, allow_pickle=False) as archive:
        layout = tuple(
            (str(name), int(offset), int(length))
            for name, offset, length in zip(
                archive["layer_names"], archive["layer_offsets"], archive["layer_lengths"]
            )
        )
        return ParameterVector(archive["values"], layout)


def pretrain(
    spec: ModelSpec, data: SampleBatch, epochs: int, lr: float, seed: int
) -> ParameterVector:
    """Non-private full-batch gradient descent from a seeded initialization.

    Provides a reproducible warm start; epochs=0 returns the initialization
    untouched.
    """
    if epochs < 0:
        raise ShapeError("epochs must be >= 0")
    if lr <= 0:
        raise ShapeError("lr must be > 0")
    params = init_params(spec, seed)
    for epoch in range(epochs):
        grad = mean_gradient(spec, params, data)
        values = params.values - lr * grad
        if not np.all(np.isfinite(values)):
            raise NumericError(f"pretraining diverged at epoch {epoch}")
        params = ParameterVector(values, params.layout)
    return params
