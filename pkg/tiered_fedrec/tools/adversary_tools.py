# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Tools related to attacks on the federation: malicious uploads, compromised
and failed trusted nodes, damage metrics and the synthetic benchmark data.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Literal

import numpy as np

from tiered_fedrec.constants import DEFAULT_SEED
from tiered_fedrec.tools.aggregation_tools import ParameterUpdate
from tiered_fedrec.tools.graph_tools import InteractionGraph
from tiered_fedrec.utils.validation_utils import (
    check_range,
    check_same_shape,
    ConfigError,
    FloatArray,
    raise_for_messages,
)


ATTACK_KINDS = ["gaussian-noise", "gradient-poison"]
AttackKindType = Literal["gaussian-noise", "gradient-poison"]


@dataclass(frozen=True)
class AttackConfig:
    """
    Configuration of the malicious clients.
    """

    malicious_fraction: float = 0.3
    """
    The share of malicious clients.
    """

    kind: AttackKindType = "gaussian-noise"
    """
    How malicious clients corrupt their upload.
    """

    sigma_attack: float = 0.0
    """
    The standard deviation of the injected noise. Zero calibrates it from the honest uploads.
    """

    sigma_multiplier: float = 10.0
    """
    The multiple of the honest spread and drift used for the calibration.
    """

    trials: int = 30
    """
    The number of independent single-round attacks.
    """

    seed: int = DEFAULT_SEED
    """
    The base seed of the trials.
    """

    def validate(self) -> None:
        raise_for_messages([
            check_range("attack.malicious_fraction", self.malicious_fraction, minimum=0.0, maximum=1.0),
            None if self.kind in ATTACK_KINDS else f"attack.kind: must be one of {ATTACK_KINDS}, got {self.kind!r}",
            check_range("attack.sigma_attack", self.sigma_attack, minimum=0.0),
            check_range("attack.sigma_multiplier", self.sigma_multiplier, minimum=0.0, minimum_inclusive=False),
            check_range("attack.trials", self.trials, minimum=1),
        ])


@dataclass(frozen=True)
class FailureScenario:
    """
    Trusted nodes dropping out or turning malicious.
    """

    failed_node_count: int = 0
    """
    The number of nodes producing no aggregate.
    """

    compromised_node_count: int = 0
    """
    The number of nodes corrupting their aggregate.
    """

    seed: int = DEFAULT_SEED
    """
    The seed for selecting the affected nodes.
    """

    def validate(self, num_nodes: int) -> None:
        raise_for_messages([
            check_range("failure.failed_node_count", self.failed_node_count, minimum=0),
            check_range("failure.compromised_node_count", self.compromised_node_count, minimum=0),
            check_range(
                "failure.failed_node_count + failure.compromised_node_count",
                self.failed_node_count + self.compromised_node_count,
                maximum=num_nodes,
            ),
        ])

    def select_nodes(self, num_nodes: int) -> tuple[frozenset[int], frozenset[int]]:
        """
        Pick the affected nodes.

        :param num_nodes: The number of trusted nodes T.
        :return: The disjoint failed and compromised node IDs.
        """
        self.validate(num_nodes)
        permutation = [int(node) for node in np.random.default_rng([self.seed, num_nodes]).permutation(num_nodes)]
        failed = permutation[:self.failed_node_count]
        compromised = permutation[self.failed_node_count:self.failed_node_count + self.compromised_node_count]
        return frozenset(failed), frozenset(compromised)


def _spread(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    return float(np.mean(values)), float(np.std(values))


@dataclass
class ResilienceReport:
    """
    Damage and detection statistics over the attack trials.
    """

    direct_damage: list[float]
    """
    The server damage per trial without trusted nodes.
    """

    trusted_damage: list[float]
    """
    The server damage per trial with trusted nodes.
    """

    detection_rate: float | None
    """
    The share of malicious uploads flagged, `None` without malicious clients.
    """

    false_positive_rate: float | None
    """
    The share of honest uploads flagged, `None` without honest clients.
    """

    containment_rate: float | None = None
    """
    The share of the corrupt node displacement kept away from W_s, `None` without compromised nodes.
    """

    sigma_attack: float = 0.0
    """
    The mean noise level used by the attackers.
    """

    detection_latency_ms: list[float] = field(default_factory=list)
    """
    The wall-clock time per anomaly check, in milliseconds.
    """

    @property
    def server_damage_mean(self) -> float:
        return _spread(self.trusted_damage)[0]

    @property
    def server_damage_std(self) -> float:
        return _spread(self.trusted_damage)[1]

    @property
    def direct_damage_mean(self) -> float:
        return _spread(self.direct_damage)[0]

    @property
    def direct_damage_std(self) -> float:
        return _spread(self.direct_damage)[1]

    @property
    def protection_rate(self) -> float | None:
        """
        1 - damage(trusted) / damage(direct), `None` without attackers or direct damage.
        """
        direct = self.direct_damage_mean
        if self.detection_rate is None or not direct or math.isnan(direct):
            return None
        return 1.0 - self.server_damage_mean / direct

    @property
    def trusted_wins(self) -> int:
        """
        The number of trials with a lower damage using the trusted nodes.
        """
        return sum(trusted < direct for trusted, direct in zip(self.trusted_damage, self.direct_damage))

    def to_dict(self) -> dict[str, Any]:
        result = asdict(self)
        result.update(
            trials=len(self.trusted_damage),
            server_damage_mean=self.server_damage_mean,
            server_damage_std=self.server_damage_std,
            direct_damage_mean=self.direct_damage_mean,
            direct_damage_std=self.direct_damage_std,
            protection_rate=self.protection_rate,
            trusted_wins=self.trusted_wins,
        )
        return result


def planted_factors(n_users: int, m_items: int, latent_rank: int, seed: int) -> tuple[FloatArray, FloatArray]:
    """
    Draw the latent user and item factors of the synthetic benchmark.

    :param n_users: The number of users.
    :param m_items: The number of items.
    :param latent_rank: The rank r of the planted preference matrix.
    :param seed: The seed.
    :return: The user factors (N x r) and the item factors (M x r).
    """
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_users, latent_rank)), rng.standard_normal((m_items, latent_rank))


def check_synthetic_parameters(
        n_users: int,
        m_items: int,
        latent_rank: int,
        interactions_per_user: int,
        noise_fraction: float,
) -> list[str | None]:
    """
    :return: The messages for invalid generator sizes.
    """
    return [
        check_range("dataset.n_users", n_users, minimum=1),
        check_range("dataset.m_items", m_items, minimum=2),
        check_range("dataset.latent_rank", latent_rank, minimum=1, maximum=min(n_users, m_items)),
        check_range("dataset.interactions_per_user", interactions_per_user, minimum=1, maximum=m_items - 1),
        check_range("dataset.noise_fraction", noise_fraction, minimum=0.0, maximum=1.0),
    ]


def make_synthetic_dataset(
        n_users: int,
        m_items: int,
        latent_rank: int,
        interactions_per_user: int,
        seed: int,
        noise_fraction: float = 0.1,
) -> InteractionGraph:
    """
    Generate a graph with recoverable low-rank structure.

    Each user is connected to its top-scoring items under the planted
    factors, a small share of the edges being replaced by uniformly drawn
    noise items.

    :param n_users: The number of users N.
    :param m_items: The number of items M.
    :param latent_rank: The rank r of the planted factors.
    :param interactions_per_user: The degree of every user.
    :param seed: The seed.
    :param noise_fraction: The share of noise edges per user.
    :return: The generated graph.
    """
    raise_for_messages(check_synthetic_parameters(n_users, m_items, latent_rank, interactions_per_user, noise_fraction))
    user_factors, item_factors = planted_factors(n_users, m_items, latent_rank, seed)
    scores = user_factors @ item_factors.T
    noise_count = int(math.floor(interactions_per_user * noise_fraction + 0.5))
    top_count = interactions_per_user - noise_count
    rng = np.random.default_rng([seed, 1])

    adjacency = []
    for user in range(n_users):
        order = np.lexsort((np.arange(m_items), -scores[user]))
        top = order[:top_count]
        noise = rng.choice(order[top_count:], size=noise_count, replace=False)
        adjacency.append(tuple(sorted(int(item) for item in np.concatenate([top, noise]))))
    return InteractionGraph(num_users=n_users, num_items=m_items, adjacency=tuple(adjacency))


def select_malicious_clients(num_clients: int, fraction: float, rng: np.random.Generator) -> frozenset[int]:
    """
    Pick round(fraction·C) malicious clients uniformly.
    """
    count = int(math.floor(num_clients * fraction + 0.5))
    return frozenset(int(client) for client in rng.choice(num_clients, size=count, replace=False))


def corrupt_update(update: ParameterUpdate, config: AttackConfig, rng: np.random.Generator) -> ParameterUpdate:
    """
    Apply the configured attack to one upload.

    `gaussian-noise` adds N(0, σ²) to every coordinate, `gradient-poison`
    flips the sign of the payload before adding the noise.

    :param update: The honest update.
    :param config: The attack configuration.
    :param rng: The random stream of the malicious client.
    :return: The corrupted update.
    """
    payload = -update.payload if config.kind == "gradient-poison" else update.payload.copy()
    if config.sigma_attack:
        payload = payload + rng.normal(0.0, config.sigma_attack, size=payload.shape)
    return replace(update, payload=payload)


def corrupt_aggregate(payload: FloatArray, sigma: float, rng: np.random.Generator) -> FloatArray:
    """
    Add N(0, σ²) noise to the aggregate of a compromised trusted node.
    """
    return payload + rng.normal(0.0, sigma, size=payload.shape)


def measure_server_damage(w_before: FloatArray, w_after: FloatArray) -> float:
    """
    :return: The L2 norm of the global parameter displacement.
    """
    check_same_shape(w_before, w_after, "global blocks")
    return float(np.linalg.norm(w_after - w_before))


def calibrate_attack_sigma(
        honest_payloads: Sequence[FloatArray],
        reference: FloatArray,
        num_clients: int,
        num_malicious: int,
        multiplier: float = 10.0,
) -> float:
    """
    Derive an attack noise level from the honest uploads of one round.

    The level is the larger of `multiplier` times the per-coordinate
    spread of the honest payloads and the level at which the plain mean of
    all uploads moves `multiplier` times further than the honest drift.

    :param honest_payloads: The honest uploads.
    :param reference: The global block the uploads started from.
    :param num_clients: The number of clients C.
    :param num_malicious: The number of malicious clients.
    :param multiplier: The calibration multiple.
    :return: The attack noise standard deviation.
    """
    if not honest_payloads:
        raise ConfigError("attack.sigma_attack: cannot calibrate without honest uploads")
    stacked = np.stack(honest_payloads)
    spread = float(np.sqrt(np.mean((stacked - stacked.mean(axis=0)) ** 2)))
    sigma = multiplier * spread
    if num_malicious:
        drift = float(np.linalg.norm(stacked.mean(axis=0) - reference))
        dimension = reference.size
        sigma = max(sigma, multiplier * drift * num_clients / (math.sqrt(dimension) * math.sqrt(num_malicious)))
    return sigma


def containment_rate(server_shift: float, corrupt_shifts: Sequence[float]) -> float | None:
    """
    Get the share of the corrupt displacement kept away from the global block.

    :param server_shift: The norm of the W_s change caused by the corruption.
    :param corrupt_shifts: The norms of the corruption added by each compromised node.
    :return: The rate in [0, 1], `None` without any corruption.
    """
    total = math.fsum(corrupt_shifts)
    if not total:
        return None
    return min(1.0, max(0.0, 1.0 - server_shift / total))
