"""Fixed-point canonicalizer constants."""

# Anderson defaults
DEFAULT_WINDOW = 5
DEFAULT_BETA = 1.0
DEFAULT_MAX_ITERS = 10
DEFAULT_TOL = 1e-4
TIKHONOV = 1e-10
WEIGHT_SUM_FLOOR = 1e-14

# Backward
DEFAULT_UNROLL_STEPS = 3

# Gradient-descent canonicalization
ARMIJO_C1 = 1e-4
MIN_STEP = 1e-12
MAX_ENERGY_INCREASES = 10
FIBRE_WEIGHT = 1.0
SECOND_ORDER_DELTA = 1e-5

DIAGNOSTICS_LOGGER = "monocanon.dec.diagnostics"
