"""Experiment configuration: a flat key=value text format with dotted keys.

Every key has a schema entry (type plus default); unknown keys are rejected
rather than ignored, in files and in --set overrides alike.  parse_config
resolves a file plus overrides into a fully-populated value table and an
ExperimentConfig; when privacy.target_epsilon is set, the noise multiplier
is solved from the accountant before the run and echoed in the resolved
dump.  The dump format is versioned and round-trips through the parser to
an identical configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .accountant import sigma_for_target
from .aggregation import AGGREGATION_KINDS, AggregationOp
from .comm import CommModel
from .data import GENERATORS, SyntheticDatasetSpec, load_delimited, make_dataset, split_train_test
from .dpsgd import OPTIMIZERS, SAMPLER_MODES, DpConfig
from .errors import ConfigError
from .federation import PARTITION_SCHEMES, DEFAULT_BANDWIDTH_MBPS, ExperimentConfig, Seeds
from .masking import ENCODINGS
from .models import KINDS, ModelSpec, SampleBatch, layer_layout, parameter_count

DUMP_VERSION = "# dpfedsim resolved config v1"
RESOLVED_FILE = "resolved_config.txt"

_REQUIRED = object()

# key -> (type tag, default); order here is the dump order
SCHEMA: dict[str, tuple[str, object]] = {
    "name": ("str", "run"),
    "model.kind": ("str", _REQUIRED),
    "model.input_dim": ("int", _REQUIRED),
    "model.output_dim": ("int", _REQUIRED),
    "model.hidden_dim": ("int", 0),
    "model.activation": ("str", "tanh"),
    "clients": ("int", _REQUIRED),
    "rounds": ("int", _REQUIRED),
    "local_epochs": ("int", 1),
    "batch_size": ("int", 32),
    "participation_fraction": ("float", 1.0),
    "mask_layers": ("str", "all"),
    "aggregation": ("str", "fedavg"),
    "partition": ("str", "iid"),
    "dirichlet_alpha": ("float", 0.5),
    "sampler": ("str", "shuffle"),
    "dp.clip_norm": ("float", 1.0),
    "dp.noise_multiplier": ("float", 1.0),
    "dp.learning_rate": ("float", 0.1),
    "dp.optimizer": ("str", "sgd"),
    "dp.adam_beta1": ("float", 0.9),
    "dp.adam_beta2": ("float", 0.999),
    "dp.adam_eps": ("float", 1e-8),
    "dp.scale_noise_by_batch": ("bool", False),
    "privacy.delta": ("float", 1e-4),
    "privacy.target_epsilon": ("float", 0.0),  # 0 means "not set"
    "seeds.global": ("int", 0),
    "seeds.data": ("int", None),
    "seeds.noise": ("int", None),
    "pretrain.epochs": ("int", 0),
    "pretrain.lr": ("float", 0.1),
    "pretrain.public_fraction": ("float", 0.0),
    "dataset.source": ("str", "synthetic"),
    "dataset.generator": ("str", "gaussian-blobs"),
    "dataset.classes": ("int", None),
    "dataset.samples": ("int", 600),
    "dataset.input_dim": ("int", None),
    "dataset.noise_std": ("float", 0.25),
    "dataset.seed": ("int", None),
    "dataset.path": ("str", ""),
    "dataset.test_fraction": ("float", 0.25),
    "comm.bandwidth_mbps": ("float", DEFAULT_BANDWIDTH_MBPS),
    "comm.full_model_bytes": ("str", "auto"),
    "comm.overhead_bytes": ("float", 0.0),
    "comm.masked_broadcast": ("bool", False),
    "comm.seconds_per_coord": ("float", 1e-9),
    "comm.encoding": ("str", "dense-f32"),
    "sweep.clients": ("str", ""),
    "sweep.rounds": ("str", ""),
    "sweep.epsilon": ("str", ""),
}


@dataclass
class ResolvedConfig:
    """Fully-defaulted value table plus the structured experiment it encodes."""

    values: dict[str, object]
    experiment: ExperimentConfig

    @property
    def name(self) -> str:
        return str(self.values["name"])

    def dump(self) -> str:
        lines = [DUMP_VERSION]
        for key in SCHEMA:
            lines.append(f"{key} = {_render(self.values[key])}")
        return "\n".join(lines) + "\n"


def _render(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str) -> object:
    kind, _ = SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc


def parse_kv_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Raw key -> value strings from `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_config(
    path: str | Path | None,
    overrides: list[str] | tuple[str, ...] = (),
    seed: int | None = None,
) -> ResolvedConfig:
    """Load, override, default, validate, and resolve a configuration."""
    raw: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        raw = parse_kv_text(p.read_text(), origin=str(p))
    return resolve_raw(raw, overrides, seed)


def resolve_raw(
    raw: dict[str, str],
    overrides: list[str] | tuple[str, ...] = (),
    seed: int | None = None,
) -> ResolvedConfig:
    """Resolve raw key/value strings plus overrides into a full configuration."""
    raw = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown override key {key!r}")
        raw[key] = value.strip()
    if seed is not None:
        raw["seeds.global"] = str(seed)
        raw.pop("seeds.data", None)
        raw.pop("seeds.noise", None)
    values: dict[str, object] = {}
    for key, (kind, default) in SCHEMA.items():
        if key in raw:
            values[key] = _coerce(key, raw[key])
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            values[key] = default
    _apply_derived_defaults(values)
    experiment = _build_experiment(values)
    return ResolvedConfig(values=values, experiment=experiment)


def rendered_raw(resolved: ResolvedConfig) -> dict[str, str]:
    """The resolved table as raw strings, suitable for re-resolution."""
    return {key: _render(resolved.values[key]) for key in SCHEMA}


def _apply_derived_defaults(values: dict[str, object]) -> None:
    g = int(values["seeds.global"])
    if values["seeds.data"] is None:
        values["seeds.data"] = g + 1
    if values["seeds.noise"] is None:
        values["seeds.noise"] = g + 2
    if values["dataset.classes"] is None:
        values["dataset.classes"] = int(values["model.output_dim"])
    if values["dataset.input_dim"] is None:
        values["dataset.input_dim"] = int(values["model.input_dim"])
    if values["dataset.seed"] is None:
        values["dataset.seed"] = int(values["seeds.data"])


def _check(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{key}: {message}")


def _build_experiment(values: dict[str, object]) -> ExperimentConfig:
    kind = str(values["model.kind"])
    _check(kind in KINDS, "model.kind", f"must be one of {KINDS}")
    model = ModelSpec(
        kind=kind,
        input_dim=int(values["model.input_dim"]),
        output_dim=int(values["model.output_dim"]),
        hidden_dim=int(values["model.hidden_dim"]),
        activation=str(values["model.activation"]),
    )
    _check(str(values["aggregation"]) in AGGREGATION_KINDS, "aggregation", f"must be one of {AGGREGATION_KINDS}")
    _check(str(values["partition"]) in PARTITION_SCHEMES, "partition", f"must be one of {PARTITION_SCHEMES}")
    _check(str(values["sampler"]) in SAMPLER_MODES, "sampler", f"must be one of {SAMPLER_MODES}")
    _check(str(values["dp.optimizer"]) in OPTIMIZERS, "dp.optimizer", f"must be one of {OPTIMIZERS}")
    _check(str(values["comm.encoding"]) in ENCODINGS, "comm.encoding", f"must be one of {ENCODINGS}")
    _check(int(values["clients"]) >= 1, "clients", "must be >= 1")
    _check(int(values["rounds"]) >= 0, "rounds", "must be >= 0")
    _check(int(values["local_epochs"]) >= 1, "local_epochs", "must be >= 1")
    _check(int(values["batch_size"]) >= 1, "batch_size", "must be >= 1")

    dataset_sizes = _dataset_sizes(values)
    target = float(values["privacy.target_epsilon"])
    _check(target >= 0, "privacy.target_epsilon", "must be >= 0 (0 disables the target)")
    if target > 0:
        values["dp.noise_multiplier"] = _resolve_sigma(values, dataset_sizes, target)

    mask_value = str(values["mask_layers"]).strip()
    if mask_value in ("all", ""):
        mask_layers: tuple[str, ...] = ()
    else:
        mask_layers = tuple(s.strip() for s in mask_value.split(",") if s.strip())
        layout_names = [name for name, _, _ in layer_layout(model)]
        for name in mask_layers:
            _check(name in layout_names, "mask_layers", f"{name!r} not in {layout_names}")

    full_bytes = str(values["comm.full_model_bytes"]).strip()
    if full_bytes == "auto":
        b_f = 4.0 * parameter_count(model)
    else:
        try:
            b_f = float(full_bytes)
        except ValueError as exc:
            raise ConfigError("comm.full_model_bytes: expected a number or 'auto'") from exc
    values["comm.full_model_bytes"] = repr(b_f)  # echo the resolved size, not 'auto'
    comm = CommModel(
        bandwidth_mbps=float(values["comm.bandwidth_mbps"]),
        full_model_bytes=b_f,
        per_message_overhead_bytes=float(values["comm.overhead_bytes"]),
    )

    dp = DpConfig(
        clip_norm=float(values["dp.clip_norm"]),
        noise_multiplier=float(values["dp.noise_multiplier"]),
        learning_rate=float(values["dp.learning_rate"]),
        optimizer=str(values["dp.optimizer"]),
        adam_beta1=float(values["dp.adam_beta1"]),
        adam_beta2=float(values["dp.adam_beta2"]),
        adam_eps=float(values["dp.adam_eps"]),
        scale_noise_by_batch=bool(values["dp.scale_noise_by_batch"]),
    )
    cfg = ExperimentConfig(
        model=model,
        clients=int(values["clients"]),
        rounds=int(values["rounds"]),
        local_epochs=int(values["local_epochs"]),
        batch_size=int(values["batch_size"]),
        dp=dp,
        delta=float(values["privacy.delta"]),
        target_epsilon=target or None,
        participation_fraction=float(values["participation_fraction"]),
        mask_layers=mask_layers,
        aggregation=AggregationOp(str(values["aggregation"])),
        partition=str(values["partition"]),
        dirichlet_alpha=float(values["dirichlet_alpha"]),
        sampler_mode=str(values["sampler"]),
        seeds=Seeds(
            global_seed=int(values["seeds.global"]),
            data_seed=int(values["seeds.data"]),
            noise_seed=int(values["seeds.noise"]),
        ),
        pretrain_epochs=int(values["pretrain.epochs"]),
        pretrain_lr=float(values["pretrain.lr"]),
        public_fraction=float(values["pretrain.public_fraction"]),
        comm=comm,
        masked_broadcast=bool(values["comm.masked_broadcast"]),
        seconds_per_coord=float(values["comm.seconds_per_coord"]),
        encoding=str(values["comm.encoding"]),
    )
    cfg.validate()
    return cfg


def _dataset_sizes(values: dict[str, object]) -> tuple[int, int, int]:
    """(train, test, private) row counts implied by the dataset settings."""
    source = str(values["dataset.source"])
    _check(source in ("synthetic", "file"), "dataset.source", "must be synthetic or file")
    if source == "synthetic":
        _check(str(values["dataset.generator"]) in GENERATORS, "dataset.generator", f"must be one of {GENERATORS}")
        total = int(values["dataset.samples"])
    else:
        path = Path(str(values["dataset.path"]))
        _check(path.is_file(), "dataset.path", f"file not found: {path}")
        total = load_delimited(path).size
    tf = float(values["dataset.test_fraction"])
    _check(0.0 < tf < 1.0, "dataset.test_fraction", "must lie in (0, 1)")
    n_test = max(1, min(total - 1, round(total * tf)))
    n_train = total - n_test
    pf = float(values["pretrain.public_fraction"])
    n_public = 0 if pf == 0.0 else max(1, min(n_train - 1, round(pf * n_train)))
    n_private = n_train - n_public
    _check(
        n_private >= int(values["clients"]),
        "clients",
        f"only {n_private} private rows for {values['clients']} clients",
    )
    return n_train, n_test, n_private


def _resolve_sigma(
    values: dict[str, object], sizes: tuple[int, int, int], target: float
) -> float:
    """Back-solve the noise multiplier from the epsilon target.

    Uses the smallest iid shard as the reference dataset size, the clamped
    batch size for q, and rounds * local_epochs as the total epoch count.
    """
    _, _, n_private = sizes
    rounds = int(values["rounds"])
    epochs = int(values["local_epochs"])
    _check(rounds >= 1, "privacy.target_epsilon", "needs rounds >= 1 to resolve sigma")
    shard = n_private // int(values["clients"])
    _check(shard >= 1, "privacy.target_epsilon", "shards too small to resolve sigma")
    batch = min(int(values["batch_size"]), shard)
    q = batch / shard
    return sigma_for_target(q, rounds * epochs, float(values["privacy.delta"]), target)


def load_dataset(resolved: ResolvedConfig) -> tuple[SampleBatch, SampleBatch]:
    """Materialize (train, test) splits for a resolved configuration."""
    values = resolved.values
    if str(values["dataset.source"]) == "synthetic":
        spec = SyntheticDatasetSpec(
            generator=str(values["dataset.generator"]),
            classes=int(values["dataset.classes"]),
            samples=int(values["dataset.samples"]),
            input_dim=int(values["dataset.input_dim"]),
            noise_std=float(values["dataset.noise_std"]),
            seed=int(values["dataset.seed"]),
        )
        full = make_dataset(spec)
    else:
        full = load_delimited(str(values["dataset.path"]))
    return split_train_test(
        full, float(values["dataset.test_fraction"]), int(values["dataset.seed"])
    )
