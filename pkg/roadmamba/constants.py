"""
Format constants and model defaults.

Tensor archive layout (all integers little-endian):

    offset  size  field
    0x00    4     magic "RDMB"
    0x04    4     format version (uint32)
    0x08    4     entry count (uint32)
    then per entry:
            4     name length in bytes (uint32)
            n     UTF-8 name
            1     dtype code (uint8, see ARCHIVE_DTYPE_*)
            1     rank (uint8)
            8*r   extents (uint64 each)
            ...   raw little-endian values, C order
"""

# =============================================================================
# Tensor archive format
# =============================================================================

ARCHIVE_MAGIC = b"RDMB"
ARCHIVE_VERSION = 1

ARCHIVE_DTYPE_F32 = 0
ARCHIVE_DTYPE_F64 = 1

# dtype code -> numpy dtype string (explicit little-endian)
ARCHIVE_DTYPES = {
    ARCHIVE_DTYPE_F32: "<f4",
    ARCHIVE_DTYPE_F64: "<f8",
}

ARCHIVE_MAX_RANK = 255

# File names written by gen-data
TRAIN_SPLIT_FILE = "train.rmba"
EVAL_SPLIT_FILE = "eval.rmba"

# Archive entry names
IMAGES_ENTRY = "images"
LABELS_ENTRY = "labels"
PARAM_PREFIX = "param."
EXP_AVG_PREFIX = "optim.exp_avg."
EXP_AVG_SQ_PREFIX = "optim.exp_avg_sq."
STEP_ENTRY = "optim.step"
META_PREFIX = "meta."

# =============================================================================
# Model defaults
# =============================================================================

NUM_CLASSES = 27
AUX_LAMBDA = 0.3
WINDOW_SIZE = 7
ATTENTION_REDUCTION = 4
SPATIAL_KERNEL = 7
DWCONV_KERNEL = 3
EXPANSION = 4
STEM_PATCH = 4
LAYERNORM_EPS = 1e-5

# Zero-order hold: below this |ΔA| the series form of B̄ is used
ZOH_SERIES_THRESHOLD = 1e-4

# Initial Δ range (softplus bias is drawn so that Δ starts inside it)
DT_MIN = 1e-3
DT_MAX = 1e-1

# Selective-scan cost per step, per lane, per state (multiply-accumulates)
SCAN_MACS_PER_STATE = 9

# =============================================================================
# Training defaults
# =============================================================================

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.05

BASE_LR = 1e-4
REFERENCE_BATCH = 32
WARMUP_FRAC = 0.05

HISTORY_HEADER = ("step", "lr", "loss", "top1", "meanP", "meanR", "meanF1")
