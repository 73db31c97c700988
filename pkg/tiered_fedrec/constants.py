# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

from importlib.metadata import version as _version


VERSION: str = _version("tiered_fedrec")

del _version


OUTPUT_ROOT_ENVIRONMENT_VARIABLE = "TIERED_FEDREC_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

DEFAULT_SEED = 2025
DEFAULT_SPLIT_RATIOS = (0.7, 0.1, 0.2)

DEFAULT_EMBEDDING_DIM = 64
DEFAULT_LAYERS = 2
DEFAULT_ITEM_UPDATE_MULTIPLIER = 10

DEFAULT_LEARNING_RATE = 0.001
DEFAULT_L2_REG = 0.0001
DEFAULT_BATCH_SIZE = 256

DEFAULT_LDP_SCALE = 0.1
DEFAULT_PERTURBATION_PROBABILITY = 0.1

DEFAULT_TRUSTED_NODES = 10
DEFAULT_ROUNDS = 500
DEFAULT_BETA = 0.5
DEFAULT_MU = 3.5
DEFAULT_NU = 0.5
DEFAULT_TOP_K = 10
DEFAULT_EVAL_INTERVAL = 10

# Consistency constant of the MAD for normally distributed data.
MAD_Z_SCALE = 0.6745
MAD_EPSILON = 1e-12

EXIT_SUCCESS = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2
