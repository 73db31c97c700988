# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

import os
from contextlib import contextmanager
from importlib.resources import as_file, files
from pathlib import Path
from typing import Any, Generator

from tiered_fedrec.config import apply_overrides, ExperimentConfig


SLOW_TESTS = os.environ.get("TIERED_FEDREC_SLOW_TESTS") == "1"

SMALL_SYNTHETIC = {
    "dataset.synthetic": True,
    "dataset.n_users": 40,
    "dataset.m_items": 60,
    "dataset.latent_rank": 4,
    "dataset.interactions_per_user": 10,
    "fastgnn.embedding_dim": 8,
    "fastgnn.item_update_multiplier": 2,
    "training.learning_rate": 0.05,
    "training.batch_size": 32,
    "federation.trusted_nodes": 4,
    "federation.rounds": 3,
    "federation.eval_interval": 1,
}


def small_config(**overrides: Any) -> ExperimentConfig:
    """
    Get a validated configuration for a tiny synthetic federation.

    Keyword arguments use `__` instead of the dot, for example `federation__rounds=5`.
    """
    values = dict(SMALL_SYNTHETIC)
    values.update({key.replace("__", "."): value for key, value in overrides.items()})
    config = apply_overrides(ExperimentConfig(), values)
    config.validate()
    return config


@contextmanager
def get_file(name: str) -> Generator[Path, None, None]:
    reference = files("tests") / "files" / name
    with as_file(reference) as path:
        yield path
