"""
Centralized configuration for numerical tolerances, defaults, and file-format constants.
Allows easy tuning without modifying core logic.
"""
import numpy as np

# Numerics
DEFAULT_DTYPE = np.float32
GRADCHECK_DTYPE = np.float64
LAYER_NORM_EPS = 1e-5

# Initialization
DEFAULT_SEED = 0
INIT_STD = 0.02  # normal(0, INIT_STD) for linear and conv weights

# Model defaults
DEFAULT_NUM_CLASSES = 1000
DEFAULT_POOL_SIZE = 7  # P in linear SRA
DEFAULT_INPUT_SIZE = 224
MIN_INPUT_SIZE = 8

# Gradient checking
FINITE_DIFF_EPS = 1e-5
PRIMITIVE_GRAD_TOL = 1e-6
LAYER_GRAD_TOL = 1e-5
MODEL_GRAD_TOL = 1e-4
GRAD_NORM_FLOOR = 1e-8
# Tensors whose gradient vanishes identically are compared elementwise against this
GRAD_ABS_TOL = 1e-8

# Oracle checks
ORACLE_TOL = 1e-6
ORACLE_CASES = 50

# MAC instrumentation
MAX_INSTRUMENTED_MACS = 100_000_000

# Weight file format
WEIGHTS_MAGIC = b"PVT2"
WEIGHTS_FORMAT_VERSION = 1
