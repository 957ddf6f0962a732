"""Experiment configuration: TOML files validated with voluptuous."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import voluptuous as vol

try:
    import tomllib as toml_reader
except ModuleNotFoundError:  # Python < 3.11
    import tomli as toml_reader

from .const import (
    CONF_BASE_SEED,
    CONF_BATCH_SIZE,
    CONF_BENCH_DROP_COUNTS,
    CONF_BLOCKS,
    CONF_CHECKPOINT,
    CONF_CONDITION_NUMBER,
    CONF_D_LIST,
    CONF_DIM,
    CONF_DROP_COUNT,
    CONF_DROP_FRACTION,
    CONF_EVAL_EVERY,
    CONF_EVAL_FRACTION,
    CONF_FEATURE_DIM,
    CONF_GRID_DROP_COUNT,
    CONF_GRID_LEARNING_RATE,
    CONF_GRID_MU,
    CONF_HIDDEN,
    CONF_KEEP_FRACTIONS,
    CONF_KIND,
    CONF_LAYERS,
    CONF_LEARNING_RATE,
    CONF_MAX_STEPS,
    CONF_MEASURE_STEPS,
    CONF_MODE,
    CONF_MU,
    CONF_NUM_CLASSES,
    CONF_NUM_SAMPLES,
    CONF_OUTPUT,
    CONF_PATH,
    CONF_PRECISION,
    CONF_REPEATS,
    CONF_SEED,
    CONF_SEPARATION,
    CONF_SEQ_LEN,
    CONF_STEPS,
    CONF_SWEEP_LAYERS,
    CONF_THRESHOLD,
    CONF_TRACK_ALLOCATIONS,
    CONF_VOCAB,
    CONF_WARMUP_STEPS,
    CONF_WIDTH,
    DATA_BLOBS,
    DATA_CSV,
    DATA_KINDS,
    DATA_QUADRATIC,
    DEFAULT_BASE_SEED,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHECKPOINT,
    DEFAULT_CONDITION_NUMBER,
    DEFAULT_DROP_COUNT,
    DEFAULT_EVAL_FRACTION,
    DEFAULT_LAYERS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MEASURE_STEPS,
    DEFAULT_MU,
    DEFAULT_NUM_SAMPLES,
    DEFAULT_OUTPUT,
    DEFAULT_PRECISION,
    DEFAULT_REPEATS,
    DEFAULT_SEPARATION,
    DEFAULT_STEPS,
    DEFAULT_SWEEP_D_LIST,
    DEFAULT_SWEEP_KEEP_FRACTIONS,
    DEFAULT_SWEEP_LAYERS,
    DEFAULT_SWEEP_MAX_STEPS,
    DEFAULT_SWEEP_THRESHOLD,
    DEFAULT_TRACK_ALLOCATIONS,
    DEFAULT_WARMUP_STEPS,
    ENV_THREADS,
    MODE_TRAIN,
    MODEL_KINDS,
    MODEL_LOGISTIC,
    MODEL_MLP,
    MODEL_QUADRATIC,
    MODEL_TRANSFORMER,
    MODES,
    PRECISION_DOUBLE,
    PRECISION_SINGLE,
    SECTION_DATA,
    SECTION_GRID,
    SECTION_MODEL,
    SECTION_OPTIMIZER,
    SECTION_RUN,
    SECTION_SWEEP,
)
from .engine import OptimizerConfig
from .models import (
    DatasetSpec,
    LossFunction,
    make_logistic,
    make_mlp,
    make_quadratic,
    make_tiny_transformer,
)

_LOGGER = logging.getLogger(__name__)

_SEED_MAX = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid experiment configuration; `key` names the offending entry."""

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NON_NEGATIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=0))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_UNIT_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, max=1))
_SEED = vol.All(vol.Coerce(int), vol.Range(min=0, max=_SEED_MAX))

MODEL_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_KIND): vol.In(MODEL_KINDS),
        vol.Optional(CONF_DIM): _POSITIVE_INT,
        vol.Optional(CONF_LAYERS, default=DEFAULT_LAYERS): _NON_NEGATIVE_INT,
        vol.Optional(CONF_CONDITION_NUMBER, default=DEFAULT_CONDITION_NUMBER): vol.All(
            vol.Coerce(float), vol.Range(min=1)
        ),
        vol.Optional(CONF_FEATURE_DIM): _POSITIVE_INT,
        vol.Optional(CONF_NUM_CLASSES): _POSITIVE_INT,
        vol.Optional(CONF_HIDDEN): _POSITIVE_INT,
        vol.Optional(CONF_VOCAB): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Optional(CONF_SEQ_LEN): _POSITIVE_INT,
        vol.Optional(CONF_WIDTH): _POSITIVE_INT,
        vol.Optional(CONF_BLOCKS): _NON_NEGATIVE_INT,
        vol.Optional(CONF_SEED, default=0): _SEED,
    },
    extra=vol.PREVENT_EXTRA,
)

DATA_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_KIND): vol.In(DATA_KINDS),
        vol.Optional(CONF_NUM_SAMPLES, default=DEFAULT_NUM_SAMPLES): _POSITIVE_INT,
        vol.Optional(CONF_PATH): str,
        vol.Optional(CONF_SEPARATION, default=DEFAULT_SEPARATION): vol.All(
            vol.Coerce(float), vol.Range(min=0)
        ),
        vol.Optional(CONF_EVAL_FRACTION, default=DEFAULT_EVAL_FRACTION): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Optional(CONF_SEED): _SEED,
    },
    extra=vol.PREVENT_EXTRA,
)

OPTIMIZER_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_LEARNING_RATE, default=DEFAULT_LEARNING_RATE): _POSITIVE_FLOAT,
        vol.Optional(CONF_MU, default=DEFAULT_MU): _POSITIVE_FLOAT,
        vol.Optional(CONF_STEPS, default=DEFAULT_STEPS): _POSITIVE_INT,
        vol.Optional(CONF_DROP_COUNT): _NON_NEGATIVE_INT,
        vol.Optional(CONF_DROP_FRACTION): _UNIT_FLOAT,
        vol.Optional(CONF_BATCH_SIZE, default=DEFAULT_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_BASE_SEED, default=DEFAULT_BASE_SEED): _SEED,
        vol.Optional(CONF_PRECISION, default=DEFAULT_PRECISION): vol.In(
            (PRECISION_DOUBLE, PRECISION_SINGLE)
        ),
    },
    extra=vol.PREVENT_EXTRA,
)

RUN_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_MODE, default=MODE_TRAIN): vol.In(MODES),
        vol.Optional(CONF_EVAL_EVERY): _POSITIVE_INT,
        vol.Optional(CONF_OUTPUT, default=DEFAULT_OUTPUT): str,
        vol.Optional(CONF_REPEATS, default=DEFAULT_REPEATS): _POSITIVE_INT,
        vol.Optional(CONF_TRACK_ALLOCATIONS, default=DEFAULT_TRACK_ALLOCATIONS): bool,
        vol.Optional(CONF_WARMUP_STEPS, default=DEFAULT_WARMUP_STEPS): _NON_NEGATIVE_INT,
        vol.Optional(CONF_MEASURE_STEPS, default=DEFAULT_MEASURE_STEPS): _POSITIVE_INT,
        vol.Optional(CONF_CHECKPOINT, default=DEFAULT_CHECKPOINT): bool,
        vol.Optional(CONF_BENCH_DROP_COUNTS): [_NON_NEGATIVE_INT],
    },
    extra=vol.PREVENT_EXTRA,
)

GRID_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_GRID_LEARNING_RATE): [_POSITIVE_FLOAT],
        vol.Optional(CONF_GRID_MU): [_POSITIVE_FLOAT],
        vol.Optional(CONF_GRID_DROP_COUNT): [_NON_NEGATIVE_INT],
    },
    extra=vol.PREVENT_EXTRA,
)

SWEEP_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_D_LIST, default=list(DEFAULT_SWEEP_D_LIST)): [_POSITIVE_INT],
        vol.Optional(CONF_KEEP_FRACTIONS, default=list(DEFAULT_SWEEP_KEEP_FRACTIONS)): [_UNIT_FLOAT],
        vol.Optional(CONF_THRESHOLD, default=DEFAULT_SWEEP_THRESHOLD): _POSITIVE_FLOAT,
        vol.Optional(CONF_MAX_STEPS, default=DEFAULT_SWEEP_MAX_STEPS): _POSITIVE_INT,
        vol.Optional(CONF_SWEEP_LAYERS, default=DEFAULT_SWEEP_LAYERS): _POSITIVE_INT,
    },
    extra=vol.PREVENT_EXTRA,
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required(SECTION_MODEL): MODEL_SCHEMA,
        vol.Optional(SECTION_DATA, default=dict): DATA_SCHEMA,
        vol.Optional(SECTION_OPTIMIZER, default=dict): OPTIMIZER_SCHEMA,
        vol.Optional(SECTION_RUN, default=dict): RUN_SCHEMA,
        vol.Optional(SECTION_GRID, default=dict): GRID_SCHEMA,
        vol.Optional(SECTION_SWEEP, default=dict): SWEEP_SCHEMA,
    },
    extra=vol.PREVENT_EXTRA,
)

_REQUIRED_MODEL_KEYS = {
    MODEL_QUADRATIC: (CONF_DIM,),
    MODEL_LOGISTIC: (CONF_FEATURE_DIM, CONF_NUM_CLASSES),
    MODEL_MLP: (CONF_FEATURE_DIM, CONF_HIDDEN, CONF_NUM_CLASSES),
    MODEL_TRANSFORMER: (CONF_VOCAB, CONF_SEQ_LEN, CONF_WIDTH, CONF_BLOCKS, CONF_NUM_CLASSES),
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    d: int | None = None
    layers: int = DEFAULT_LAYERS
    condition_number: float = DEFAULT_CONDITION_NUMBER
    feature_dim: int | None = None
    num_classes: int | None = None
    hidden: int | None = None
    vocab: int | None = None
    seq_len: int | None = None
    dim: int | None = None
    blocks: int | None = None
    seed: int = 0

    def build(self) -> LossFunction:
        if self.kind == MODEL_QUADRATIC:
            return make_quadratic(self.d, self.layers, self.condition_number, self.seed)
        if self.kind == MODEL_LOGISTIC:
            return make_logistic(self.feature_dim, self.num_classes, max(self.layers, 1), self.seed)
        if self.kind == MODEL_MLP:
            return make_mlp(self.feature_dim, self.hidden, self.num_classes, self.seed)
        return make_tiny_transformer(
            self.vocab, self.seq_len, self.dim, self.blocks, self.num_classes, self.seed
        )


@dataclass(frozen=True)
class GridSpec:
    learning_rates: tuple[float, ...]
    mus: tuple[float, ...]
    drop_counts: tuple[int, ...]


@dataclass(frozen=True)
class SweepSpec:
    d_list: tuple[int, ...] = DEFAULT_SWEEP_D_LIST
    keep_fractions: tuple[float, ...] = DEFAULT_SWEEP_KEEP_FRACTIONS
    threshold: float = DEFAULT_SWEEP_THRESHOLD
    max_steps: int = DEFAULT_SWEEP_MAX_STEPS
    layers: int = DEFAULT_SWEEP_LAYERS


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    data: DatasetSpec
    optimizer: OptimizerConfig
    precision: str = DEFAULT_PRECISION
    mode: str = MODE_TRAIN
    eval_every: int = 1
    output_path: Path = Path(DEFAULT_OUTPUT)
    repeats: int = DEFAULT_REPEATS
    track_allocations: bool = DEFAULT_TRACK_ALLOCATIONS
    warmup_steps: int = DEFAULT_WARMUP_STEPS
    measure_steps: int = DEFAULT_MEASURE_STEPS
    checkpoint: bool = DEFAULT_CHECKPOINT
    bench_drop_counts: tuple[int, ...] = ()
    grid: GridSpec | None = None
    sweep: SweepSpec = field(default_factory=SweepSpec)
    source: dict[str, Any] = field(default_factory=dict, compare=False)

    def with_overrides(
        self, *, seed: int | None = None, output: str | Path | None = None, mode: str | None = None
    ) -> "ExperimentConfig":
        """Apply CLI flag overrides on top of file values."""
        config = self
        if seed is not None:
            if not 0 <= seed <= _SEED_MAX:
                raise ConfigError(f"Seed {seed} outside the unsigned 64-bit range", key="--seed")
            config = dataclasses.replace(
                config, optimizer=dataclasses.replace(config.optimizer, base_seed=seed)
            )
        if output is not None:
            config = dataclasses.replace(config, output_path=Path(output))
        if mode is not None:
            config = dataclasses.replace(config, mode=mode)
        return config

    def echo(self) -> dict[str, Any]:
        """JSON-safe view of the effective configuration."""
        return {
            SECTION_MODEL: dataclasses.asdict(self.model),
            SECTION_DATA: dataclasses.asdict(self.data),
            SECTION_OPTIMIZER: {**dataclasses.asdict(self.optimizer), CONF_PRECISION: self.precision},
            SECTION_RUN: {
                CONF_MODE: self.mode,
                CONF_EVAL_EVERY: self.eval_every,
                CONF_OUTPUT: str(self.output_path),
                CONF_REPEATS: self.repeats,
                CONF_TRACK_ALLOCATIONS: self.track_allocations,
                CONF_CHECKPOINT: self.checkpoint,
            },
        }


def _key_path(path: list[Any]) -> str:
    return ".".join(str(part) for part in path)


def _require(section: dict[str, Any], keys: tuple[str, ...], prefix: str, reason: str) -> None:
    for key in keys:
        if section.get(key) is None:
            raise ConfigError(f"Missing key '{prefix}.{key}' ({reason})", key=f"{prefix}.{key}")


def _data_spec(model: ModelSpec, data: dict[str, Any]) -> DatasetSpec:
    default_kind = DATA_QUADRATIC if model.kind == MODEL_QUADRATIC else DATA_BLOBS
    kind = data.get(CONF_KIND, default_kind)
    if model.kind != MODEL_QUADRATIC and kind == DATA_QUADRATIC:
        raise ConfigError(
            f"Data kind {kind!r} has no labels for model kind {model.kind!r}",
            key=f"{SECTION_DATA}.{CONF_KIND}",
        )
    if kind == DATA_CSV:
        _require(data, (CONF_PATH,), SECTION_DATA, f"required for {DATA_CSV}")

    tokens = model.kind == MODEL_TRANSFORMER
    feature_dim = model.feature_dim
    if tokens and feature_dim is None:
        feature_dim = model.seq_len
    if tokens and kind == DATA_BLOBS and feature_dim != model.seq_len:
        raise ConfigError(
            f"Blob token sequences have length feature_dim={feature_dim}, model seq_len={model.seq_len}",
            key=f"{SECTION_MODEL}.{CONF_SEQ_LEN}",
        )
    return DatasetSpec(
        kind=kind,
        feature_dim=feature_dim or 1,
        num_classes=model.num_classes or 1,
        num_samples=data[CONF_NUM_SAMPLES],
        seed=data.get(CONF_SEED, model.seed),
        path=data.get(CONF_PATH),
        separation=data[CONF_SEPARATION],
        eval_fraction=data[CONF_EVAL_FRACTION],
        vocab=model.vocab if tokens else None,
        seq_len=model.seq_len if tokens else None,
    )


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    """Validate a decoded TOML document into an ExperimentConfig."""
    try:
        conf = CONFIG_SCHEMA(raw)
    except vol.Invalid as err:
        key = _key_path(err.path)
        raise ConfigError(f"Invalid config key '{key}': {err.error_message}", key=key) from err

    model_conf = conf[SECTION_MODEL]
    _require(model_conf, _REQUIRED_MODEL_KEYS[model_conf[CONF_KIND]], SECTION_MODEL,
             f"required for kind {model_conf[CONF_KIND]!r}")
    model = ModelSpec(**model_conf)

    opt = conf[SECTION_OPTIMIZER]
    if CONF_DROP_COUNT in opt and CONF_DROP_FRACTION in opt:
        raise ConfigError(
            "Give either optimizer.drop_count or optimizer.drop_fraction, not both",
            key=f"{SECTION_OPTIMIZER}.{CONF_DROP_FRACTION}",
        )
    optimizer = OptimizerConfig(
        learning_rate=opt[CONF_LEARNING_RATE],
        mu=opt[CONF_MU],
        steps=opt[CONF_STEPS],
        drop_count=opt.get(CONF_DROP_COUNT, DEFAULT_DROP_COUNT),
        batch_size=opt[CONF_BATCH_SIZE],
        base_seed=opt[CONF_BASE_SEED],
        drop_fraction=opt.get(CONF_DROP_FRACTION),
    )

    run = conf[SECTION_RUN]
    grid_conf = conf[SECTION_GRID]
    grid = None
    if grid_conf:
        grid = GridSpec(
            learning_rates=tuple(grid_conf.get(CONF_GRID_LEARNING_RATE, [optimizer.learning_rate])),
            mus=tuple(grid_conf.get(CONF_GRID_MU, [optimizer.mu])),
            drop_counts=tuple(grid_conf.get(CONF_GRID_DROP_COUNT, [])),
        )
    sweep_conf = conf[SECTION_SWEEP]
    sweep = SweepSpec(
        d_list=tuple(sweep_conf[CONF_D_LIST]),
        keep_fractions=tuple(sweep_conf[CONF_KEEP_FRACTIONS]),
        threshold=sweep_conf[CONF_THRESHOLD],
        max_steps=sweep_conf[CONF_MAX_STEPS],
        layers=sweep_conf[CONF_SWEEP_LAYERS],
    )

    return ExperimentConfig(
        model=model,
        data=_data_spec(model, conf[SECTION_DATA]),
        optimizer=optimizer,
        precision=opt[CONF_PRECISION],
        mode=run[CONF_MODE],
        eval_every=run.get(CONF_EVAL_EVERY, max(1, optimizer.steps // 10)),
        output_path=Path(run[CONF_OUTPUT]),
        repeats=run[CONF_REPEATS],
        track_allocations=run[CONF_TRACK_ALLOCATIONS],
        warmup_steps=run[CONF_WARMUP_STEPS],
        measure_steps=run[CONF_MEASURE_STEPS],
        checkpoint=run[CONF_CHECKPOINT],
        bench_drop_counts=tuple(run.get(CONF_BENCH_DROP_COUNTS, ())),
        grid=grid,
        sweep=sweep,
        source=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a TOML config file. OSError propagates to the caller."""
    path = Path(path)
    with path.open("rb") as handle:
        try:
            raw = toml_reader.load(handle)
        except toml_reader.TOMLDecodeError as err:
            raise ConfigError(f"Cannot parse {path}: {err}") from err
    config = parse_config(raw)
    _LOGGER.debug("Loaded config %s (model=%s, mode=%s)", path, config.model.kind, config.mode)
    return config


def worker_count(jobs: int | None = None) -> int:
    """Cell parallelism: --jobs, else ZO_FORGE_THREADS, else the machine's cores."""
    if jobs is not None:
        if jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {jobs}", key="--jobs")
        return jobs
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            value = int(env)
        except ValueError as err:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got {env!r}", key=ENV_THREADS) from err
        if value < 1:
            raise ConfigError(f"{ENV_THREADS} must be >= 1, got {value}", key=ENV_THREADS)
        return value
    return os.cpu_count() or 1
