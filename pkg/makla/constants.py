"""Module to centralize constants used throughout project.

This includes enums, aliases, defaults, types, etc.
"""
import math
from typing import Union

import numpy as np

ArrayLike = Union[np.ndarray, list, tuple, float]

auto = type('auto', (object,), {'__repr__': lambda self: "'auto'"})()
auto.__doc__ = 'Sentinel for parameters that the planner resolves (gamma, h)'

SQRT_E_34 = 34 * math.sqrt(math.e)  # 56.0565...
HIGH_ACCEPTANCE_BUDGET = 1 / (3 * math.e)

# one-shot fixed point
DFLT_FIXED_POINT_TOL = 1e-12
DFLT_FIXED_POINT_MAX_ITER = 100
DFLT_RESIDUAL_MAX_ITER = 10_000

# planner
DFLT_RU_REL_TOL = 1e-9
DFLT_RU_MAX_ITER = 1000
DFLT_RU_START = 2.0
DFLT_H_BRACKET_LOW = 1e-8
DFLT_H_REL_TOL = 1e-4
DFLT_GAMMA_FACTOR = 10.0  # gamma = 10 sqrt(L)

# diagnostics
DFLT_N_SIGMA = 3.0
DFLT_N_STATES = 256
DFLT_N_TRIALS = 1024
DFLT_WARM_UP_EPOCHS = 10

# runs
DFLT_SEED = 20240101
DFLT_CHUNK_SIZE = 64
DFLT_THREADS = 1
DFLT_REPLICAS = 64
DFLT_EPS = 0.1
DFLT_OUT_DIR = 'kla_out'

TRACE_FIELDS = (
    'replica',
    'step',
    'met',
    'in_domain',
    'rejected',
    'delta_H',
    'twisted_distance',
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
