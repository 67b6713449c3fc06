"""End-to-end federated rounds: selection, local private training, masked
aggregation, evaluation, and accounting.

Every round proceeds as: the server picks a participant set, each selected
client copies the broadcast parameters, runs local epochs of clipped and
noise-perturbed gradient steps on its trainable coordinates, and sends back
the masked delta; the server aggregates in ascending client id, evaluates on
the held-out split, and appends one RoundRecord.  All randomness flows
through derived counter-based streams, so records are bit-reproducible for a
given configuration and independent of client scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accountant import PrivacyParams, compose_rounds
from .aggregation import AggregationOp, aggregate
from .comm import CommModel, RoundRecord, delay_seconds, traffic_per_round
from .dpsgd import (
    AdamState,
    DpConfig,
    SamplerPlan,
    clip_per_sample,
    dp_step,
    epoch_batches,
    noisy_mean,
    plan_for_epoch,
)
from .errors import ConfigError, NumericError, ShapeError
from .masking import MaskedUpdate, PartitionMask, extract_masked_update, make_mask
from .models import (
    ModelSpec,
    ParameterVector,
    SampleBatch,
    forward,
    init_params,
    layer_layout,
    parameter_count,
    per_sample_gradients,
    pretrain,
)
from .rng import (
    STREAM_CLIENT,
    STREAM_NOISE,
    STREAM_PARTITION,
    STREAM_PUBLIC_SPLIT,
    STREAM_SELECT,
    derive_seed,
    generator,
)

PARTITION_SCHEMES = ("iid", "dirichlet")
DEFAULT_BANDWIDTH_MBPS = 25.0 / 3.0  # 8.333... MB/s


@dataclass(frozen=True)
class Seeds:
    global_seed: int = 0
    data_seed: int = 1
    noise_seed: int = 2


@dataclass
class ClientShard:
    """One client's private data plus the root of its local random streams."""

    client_id: int
    data: SampleBatch
    n_k: int
    rng_seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    clients: int
    rounds: int
    local_epochs: int
    batch_size: int
    dp: DpConfig
    delta: float = 1e-4
    target_epsilon: float | None = None
    participation_fraction: float = 1.0
    mask_layers: tuple[str, ...] = ()  # empty tuple means full fine-tuning
    aggregation: AggregationOp = AggregationOp("fedavg")
    partition: str = "iid"
    dirichlet_alpha: float = 0.5
    sampler_mode: str = "shuffle"
    seeds: Seeds = field(default_factory=Seeds)
    pretrain_epochs: int = 0
    pretrain_lr: float = 0.1
    public_fraction: float = 0.0
    comm: CommModel | None = None
    masked_broadcast: bool = False
    seconds_per_coord: float = 1e-9
    encoding: str = "dense-f32"

    def validate(self) -> None:
        if self.clients < 1:
            raise ConfigError("clients must be >= 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0.0 < self.participation_fraction <= 1.0):
            raise ConfigError("participation_fraction must lie in (0, 1]")
        if not (0.0 < self.delta < 1.0):
            raise ConfigError("delta must lie in (0, 1)")
        if self.partition not in PARTITION_SCHEMES:
            raise ConfigError(f"unknown partition scheme {self.partition!r}")
        if self.partition == "dirichlet" and self.dirichlet_alpha <= 0:
            raise ConfigError("dirichlet_alpha must be > 0")
        if not (0.0 <= self.public_fraction < 1.0):
            raise ConfigError("public_fraction must lie in [0, 1)")
        if self.pretrain_epochs > 0 and self.public_fraction == 0.0:
            raise ConfigError("pretraining needs a positive public_fraction")
        if not self.model.is_classifier:
            raise ConfigError("federated experiments require a classification model")
        if self.seconds_per_coord < 0:
            raise ConfigError("seconds_per_coord must be >= 0")
        layout_names = [name for name, _, _ in layer_layout(self.model)]
        for name in self.mask_layers:
            if name not in layout_names:
                raise ConfigError(f"mask layer {name!r} not in model layers {layout_names}")

    def resolved_mask_layers(self) -> tuple[str, ...]:
        if self.mask_layers:
            return self.mask_layers
        return tuple(name for name, _, _ in layer_layout(self.model))


@dataclass
class EvalResult:
    loss: float
    accuracy: float


@dataclass
class ExperimentResult:
    records: list[RoundRecord]
    final_params: ParameterVector
    error: str | None = None


def partition_data(
    dataset: SampleBatch,
    clients: int,
    scheme: str,
    seed: int,
    alpha: float = 0.5,
    client_seed_root: int | None = None,
) -> list[ClientShard]:
    """Split a dataset into disjoint client shards.

    iid shards differ in size by at most one; the dirichlet scheme draws
    per-class client proportions from Dir(alpha) and redraws (bounded) until
    every shard is non-empty.
    """
    if clients < 1:
        raise ShapeError("clients must be >= 1")
    if dataset.size < clients:
        raise ShapeError(f"cannot split {dataset.size} rows across {clients} clients")
    if scheme not in PARTITION_SCHEMES:
        raise ShapeError(f"unknown partition scheme {scheme!r}")
    rng = generator(seed)
    if scheme == "iid":
        parts = np.array_split(rng.permutation(dataset.size), clients)
    else:
        parts = _dirichlet_parts(dataset, clients, alpha, rng)
    root = seed if client_seed_root is None else client_seed_root
    shards = []
    for cid, idx in enumerate(parts):
        idx = np.sort(np.asarray(idx))
        shards.append(
            ClientShard(
                client_id=cid,
                data=dataset.take(idx),
                n_k=int(idx.size),
                rng_seed=derive_seed(root, STREAM_CLIENT, cid),
            )
        )
    return shards


def _dirichlet_parts(
    dataset: SampleBatch, clients: int, alpha: float, rng: np.random.Generator
) -> list[np.ndarray]:
    labels = dataset.targets.astype(np.int64)
    class_values = np.unique(labels)
    for _ in range(200):
        assignment: list[list[np.ndarray]] = [[] for _ in range(clients)]
        for value in class_values:
            idx = rng.permutation(np.flatnonzero(labels == value))
            props = rng.dirichlet(np.full(clients, alpha))
            cuts = np.round(np.cumsum(props[:-1]) * idx.size).astype(int)
            for cid, chunk in enumerate(np.split(idx, cuts)):
                assignment[cid].append(chunk)
        parts = [np.concatenate(chunks) for chunks in assignment]
        if all(p.size > 0 for p in parts):
            return parts
    raise ShapeError(
        f"could not produce {clients} non-empty dirichlet shards in 200 draws"
    )


def evaluate(spec: ModelSpec, params: ParameterVector, test_set: SampleBatch) -> EvalResult:
    """Mean loss and argmax accuracy (ties resolve to the lowest class index)."""
    if test_set.size < 1:
        raise ShapeError("test set is empty")
    if not spec.is_classifier:
        raise ShapeError("accuracy is only defined for classification models")
    losses, scores = forward(spec, params, test_set)
    predicted = np.argmax(scores, axis=1)
    accuracy = float(np.mean(predicted == test_set.targets.astype(np.int64)))
    return EvalResult(loss=float(losses.mean()), accuracy=accuracy)


def run_local(
    spec: ModelSpec,
    client: ClientShard,
    w_t: ParameterVector,
    mask: PartitionMask,
    dp: DpConfig,
    plan: SamplerPlan,
    local_epochs: int,
    round_index: int,
) -> MaskedUpdate:
    """One client's private local training for one round.

    Per batch: per-sample gradients restricted to the trainable coordinates,
    clipped, averaged with seeded Gaussian noise, then applied.  The
    broadcast parameters are never modified; tau counts optimizer steps.
    """
    if local_epochs < 1:
        raise ShapeError("local_epochs must be >= 1")
    w = w_t.copy()
    state = AdamState.zeros(mask.trainable_count) if dp.optimizer == "adam" else None
    step = 0
    for epoch in range(1, local_epochs + 1):
        for batch_no, batch_idx in enumerate(epoch_batches(plan_for_epoch(plan, round_index, epoch))):
            if batch_idx.size == 0:
                continue  # poisson sampling may draw an empty batch
            batch = client.data.take(batch_idx)
            grads = per_sample_gradients(spec, w, batch)[:, mask.indices]
            clipped = clip_per_sample(grads, dp.clip_norm)
            noise_seed = derive_seed(
                client.rng_seed, STREAM_NOISE, round_index, epoch, batch_no
            )
            grad = noisy_mean(
                clipped, dp.noise_multiplier, dp.clip_norm, noise_seed, dp.scale_noise_by_batch
            )
            step += 1
            w = dp_step(w, mask, grad, dp, step, state)
    return extract_masked_update(
        w, w_t, mask, client.client_id, round_index, tau=step, n_k=client.n_k
    )


def split_public_private(
    data: SampleBatch, public_fraction: float, seed: int
) -> tuple[SampleBatch | None, SampleBatch]:
    """Carve off a seeded public slice for non-private warm-starting."""
    if public_fraction == 0.0:
        return None, data
    n_public = max(1, min(data.size - 1, round(public_fraction * data.size)))
    order = generator(derive_seed(seed, STREAM_PUBLIC_SPLIT)).permutation(data.size)
    return data.take(order[:n_public]), data.take(order[n_public:])


def initial_params(cfg: ExperimentConfig, public: SampleBatch | None) -> ParameterVector:
    if cfg.pretrain_epochs > 0:
        if public is None:
            raise ConfigError("pretraining needs a public split")
        return pretrain(
            cfg.model, public, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.seeds.global_seed
        )
    return init_params(cfg.model, cfg.seeds.global_seed)


def _select_participants(cfg: ExperimentConfig, round_index: int) -> list[int]:
    count = math.ceil(cfg.participation_fraction * cfg.clients)
    rng = generator(derive_seed(cfg.seeds.global_seed, STREAM_SELECT, round_index))
    chosen = rng.permutation(cfg.clients)[:count]
    return sorted(int(c) for c in chosen)


def _client_epsilon(
    cfg: ExperimentConfig, shard: ClientShard, batch_size: int, rounds_participated: int
) -> float:
    if rounds_participated == 0:
        return 0.0
    if cfg.dp.noise_multiplier == 0.0:
        return math.inf
    per_round = PrivacyParams(
        sampling_ratio=min(1.0, batch_size / shard.n_k),
        noise_multiplier=cfg.dp.noise_multiplier,
        epochs=cfg.local_epochs,
        delta=cfg.delta,
        clip_norm=cfg.dp.clip_norm,
    )
    return compose_rounds(per_round, rounds_participated).epsilon


def run_experiment(
    cfg: ExperimentConfig, train_data: SampleBatch, test_data: SampleBatch
) -> ExperimentResult:
    """Execute the full protocol and return per-round records plus the model.

    On numeric divergence the run stops and returns the partial record list
    with the error message attached.
    """
    cfg.validate()
    if test_data.size < 1:
        raise ConfigError("test set is empty")
    public, private = split_public_private(
        train_data, cfg.public_fraction, cfg.seeds.data_seed
    )
    w = initial_params(cfg, public)
    shards = partition_data(
        private,
        cfg.clients,
        cfg.partition,
        derive_seed(cfg.seeds.data_seed, STREAM_PARTITION),
        alpha=cfg.dirichlet_alpha,
        client_seed_root=cfg.seeds.noise_seed,
    )
    mask = make_mask(layer_layout(cfg.model), cfg.resolved_mask_layers())
    d = parameter_count(cfg.model)
    comm = cfg.comm or CommModel(DEFAULT_BANDWIDTH_MBPS, 4.0 * d, 0.0)
    bytes_up = traffic_per_round(mask, comm, cfg.encoding)
    if cfg.masked_broadcast:
        bytes_down = bytes_up
    else:
        bytes_down = comm.full_model_bytes + comm.per_message_overhead_bytes
    delay_up = delay_seconds(bytes_up, comm)
    delay_down = delay_seconds(bytes_down, comm)

    participation = [0] * cfg.clients
    records: list[RoundRecord] = []
    error: str | None = None
    for t in range(cfg.rounds):
        selected = _select_participants(cfg, t)
        try:
            updates = []
            for cid in selected:
                shard = shards[cid]
                plan = SamplerPlan(
                    mode=cfg.sampler_mode,
                    batch_size=min(cfg.batch_size, shard.n_k),
                    dataset_size=shard.n_k,
                    seed=shard.rng_seed,
                )
                updates.append(
                    run_local(cfg.model, shard, w, mask, cfg.dp, plan, cfg.local_epochs, t)
                )
            w = aggregate(w, updates, cfg.aggregation)
        except NumericError as exc:
            error = f"round {t}: {exc}"
            break
        for cid in selected:
            participation[cid] += 1
        metrics = evaluate(cfg.model, w, test_data)
        epsilon = max(
            _client_epsilon(cfg, shards[k], min(cfg.batch_size, shards[k].n_k), participation[k])
            for k in range(cfg.clients)
        )
        compute_s = max(
            shards[k].n_k * cfg.local_epochs * (d + mask.trainable_count) * cfg.seconds_per_coord
            for k in selected
        )
        records.append(
            RoundRecord(
                round_index=t,
                global_loss=metrics.loss,
                global_accuracy=metrics.accuracy,
                epsilon_to_date=epsilon,
                bytes_up_per_client=bytes_up,
                bytes_down_per_client=bytes_down,
                modeled_delay_s=delay_up,
                wall_time_s=delay_down + compute_s + delay_up,
                participants=len(selected),
            )
        )
    return ExperimentResult(records=records, final_params=w, error=error)
