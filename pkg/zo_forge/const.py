"""Constants for zo_forge."""

from __future__ import annotations

ENV_THREADS = "ZO_FORGE_THREADS"

# Config sections
SECTION_MODEL = "model"
SECTION_DATA = "data"
SECTION_OPTIMIZER = "optimizer"
SECTION_RUN = "run"
SECTION_GRID = "grid"
SECTION_SWEEP = "sweep"

# [model]
CONF_KIND = "kind"
CONF_DIM = "d"
CONF_LAYERS = "layers"
CONF_CONDITION_NUMBER = "condition_number"
CONF_FEATURE_DIM = "feature_dim"
CONF_NUM_CLASSES = "num_classes"
CONF_HIDDEN = "hidden"
CONF_VOCAB = "vocab"
CONF_SEQ_LEN = "seq_len"
CONF_WIDTH = "dim"
CONF_BLOCKS = "blocks"
CONF_SEED = "seed"

# [data]
CONF_NUM_SAMPLES = "num_samples"
CONF_PATH = "path"
CONF_SEPARATION = "separation"
CONF_EVAL_FRACTION = "eval_fraction"

# [optimizer]
CONF_LEARNING_RATE = "learning_rate"
CONF_MU = "mu"
CONF_STEPS = "steps"
CONF_DROP_COUNT = "drop_count"
CONF_DROP_FRACTION = "drop_fraction"
CONF_BATCH_SIZE = "batch_size"
CONF_BASE_SEED = "base_seed"
CONF_PRECISION = "precision"

# [run]
CONF_MODE = "mode"
CONF_EVAL_EVERY = "eval_every"
CONF_OUTPUT = "output"
CONF_REPEATS = "repeats"
CONF_TRACK_ALLOCATIONS = "track_allocations"
CONF_WARMUP_STEPS = "warmup_steps"
CONF_MEASURE_STEPS = "measure_steps"
CONF_CHECKPOINT = "checkpoint"
CONF_BENCH_DROP_COUNTS = "drop_counts"

# [grid]
CONF_GRID_LEARNING_RATE = "learning_rate"
CONF_GRID_MU = "mu"
CONF_GRID_DROP_COUNT = "drop_count"

# [sweep]
CONF_D_LIST = "d_list"
CONF_KEEP_FRACTIONS = "keep_fractions"
CONF_THRESHOLD = "threshold"
CONF_MAX_STEPS = "max_steps"
CONF_SWEEP_LAYERS = "layers"

MODEL_QUADRATIC = "quadratic"
MODEL_LOGISTIC = "logistic"
MODEL_MLP = "mlp"
MODEL_TRANSFORMER = "transformer"
MODEL_KINDS = (MODEL_QUADRATIC, MODEL_LOGISTIC, MODEL_MLP, MODEL_TRANSFORMER)

DATA_BLOBS = "synthetic_gaussian_blobs"
DATA_QUADRATIC = "synthetic_quadratic"
DATA_CSV = "csv_classification"
DATA_KINDS = (DATA_BLOBS, DATA_QUADRATIC, DATA_CSV)

MODE_TRAIN = "train"
MODE_BENCH_TIMING = "bench_timing"
MODE_SWEEP_CONVERGENCE = "sweep_convergence"
MODE_GRID_SEARCH = "grid_search"
MODES = (MODE_TRAIN, MODE_BENCH_TIMING, MODE_SWEEP_CONVERGENCE, MODE_GRID_SEARCH)

PRECISION_DOUBLE = "double"
PRECISION_SINGLE = "single"

DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_MU = 1e-3
DEFAULT_STEPS = 1000
DEFAULT_DROP_COUNT = 0
DEFAULT_BATCH_SIZE = 16
DEFAULT_BASE_SEED = 0
DEFAULT_PRECISION = PRECISION_DOUBLE
DEFAULT_REPEATS = 1
DEFAULT_OUTPUT = "runs"
DEFAULT_TRACK_ALLOCATIONS = True
DEFAULT_WARMUP_STEPS = 10
DEFAULT_MEASURE_STEPS = 100
DEFAULT_CHECKPOINT = True
DEFAULT_CONDITION_NUMBER = 1.0
DEFAULT_LAYERS = 1
DEFAULT_NUM_SAMPLES = 512
DEFAULT_SEPARATION = 6.0
DEFAULT_EVAL_FRACTION = 0.2
DEFAULT_SWEEP_THRESHOLD = 1e-2
DEFAULT_SWEEP_MAX_STEPS = 200_000
DEFAULT_SWEEP_LAYERS = 8
DEFAULT_SWEEP_D_LIST = (128, 256, 512)
DEFAULT_SWEEP_KEEP_FRACTIONS = (0.25, 1.0)

# Fixed-size bookkeeping allowed inside one step (timers, counters, views).
ALLOCATION_BOUND_BYTES = 4096

# Draws generated per block by the Gaussian stream; must be even.
STREAM_BLOCK = 4096

RECOMMENDED_BENCH_DIM = 1_000_000

TRANSFORMER_HEADS = 2
TRANSFORMER_FFN_EXPANSION = 4
TOKEN_CLIP = 4.0

STEP_CSV_COLUMNS = (
    "step",
    "loss_plus",
    "loss_minus",
    "projected_grad",
    "eval_metric",
    "time_forward_ns",
    "time_perturb_ns",
    "time_update_ns",
    "alloc_delta_bytes",
)

# Columns that replay bitwise for a fixed config and seed.
DETERMINISTIC_CSV_COLUMNS = ("step", "loss_plus", "loss_minus", "projected_grad", "eval_metric")

STEP_CSV_NAME = "steps.csv"
SUMMARY_JSON_NAME = "summary.json"
CHECKPOINT_NAME = "best.ckpt"
TIMING_JSON_NAME = "timing.json"
TIMING_TABLE_NAME = "timing.txt"
GRID_CSV_NAME = "grid.csv"
SWEEP_CSV_NAME = "sweep.csv"
