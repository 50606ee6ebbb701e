# pylint: disable=line-too-long
"""monocanon"""
__version__ = '0.3.0'

import logging
import os

_LOGGER = logging.getLogger(__package__)

# Warp parameterization
DEFAULT_GRID_SIZE = 4
DEFAULT_MIN_SEGMENT = 0.02
DEFAULT_CONCENTRATION = 1.0
DEFAULT_SPREAD = 1.0
DOMAIN_SLACK = 1e-12
MERGE_TOLERANCE = 1e-13
SITE_JITTER = 1e-6

# Evaluation
DEFAULT_N_WARPS = 8
DEFAULT_SCALE_BUCKETS = ((0.4, 1.0), (1.0, 1.5), (1.5, 2.0))
INV_E_REPORT_SCALE = 100.0

# Baselines
DEFAULT_LOSS_WEIGHT = 0.1
LOSS_WEIGHT_SWEEP = (0.01, 0.1, 1.0)
CANDIDATE_SLOPE_RANGE = (0.5, 2.0)
CANDIDATE_SLOPES_PER_AXIS = 8

# Canonicalization
SOLVE_HISTORY = 1024
MONOTONE_FRACTION_WARN = 0.9

THREADS_ENV = "MONOCANON_THREADS"


def max_threads() -> int:
    """Returns the worker cap from the environment."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        _LOGGER.warning("Ignoring invalid %s=%s", THREADS_ENV, raw)
        return os.cpu_count() or 1
