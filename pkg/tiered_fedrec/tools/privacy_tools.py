# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Tools related to the local differential privacy of parameter uploads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tiered_fedrec.constants import DEFAULT_LDP_SCALE, DEFAULT_SEED
from tiered_fedrec.utils.validation_utils import check_finite, check_range, FloatArray, raise_for_messages


@dataclass(frozen=True)
class LdpConfig:
    """
    Configuration of the Laplace mechanism.
    """

    scale: float = DEFAULT_LDP_SCALE
    """
    The Laplace scale λ. Zero disables the noise.
    """

    seed: int = DEFAULT_SEED
    """
    The base seed for the per-client random streams.
    """

    def validate(self) -> None:
        raise_for_messages([check_range("privacy.ldp_scale", self.scale, minimum=0.0)])


def laplace_noise(size: int | tuple[int, ...], scale: float, rng: np.random.Generator) -> FloatArray:
    """
    Draw Laplace(0, scale) noise by inverting the CDF of uniform draws.

    :param size: The output shape.
    :param scale: The Laplace scale λ.
    :param rng: The random stream.
    :return: The noise values.
    """
    centered = rng.random(size) - 0.5
    # The log argument would be zero for a draw of exactly 0.
    tail = np.maximum(1.0 - 2.0 * np.abs(centered), np.finfo(np.float64).tiny)
    return -scale * np.sign(centered) * np.log(tail)


def add_laplace_noise(params: FloatArray, config: LdpConfig, rng: np.random.Generator) -> FloatArray:
    """
    Add independent Laplace noise to each coordinate of the upload.

    :param params: The parameters to protect. Not modified.
    :param config: The mechanism configuration.
    :param rng: The random stream, seeded per (client, round).
    :return: The noised copy Θ'.
    """
    config.validate()
    check_finite(params, "parameters to noise")
    if config.scale == 0.0:
        return params.copy()
    return params + laplace_noise(params.shape, config.scale, rng)
