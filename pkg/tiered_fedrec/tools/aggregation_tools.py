# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Tools related to the aggregation protocol: client assignment, robust anomaly
checks on the trusted nodes, partial and global means and the local blend.
"""

from __future__ import annotations

import logging
from collections.abc import Collection, Sequence
from dataclasses import dataclass

import numpy as np

from tiered_fedrec.constants import MAD_EPSILON, MAD_Z_SCALE
from tiered_fedrec.utils.validation_utils import (
    check_range,
    check_same_shape,
    ConfigError,
    FloatArray,
    ProtocolError,
    raise_for_messages,
)

logger = logging.getLogger(__name__)
del logging


Partition = list[list[int]]


@dataclass(frozen=True)
class ParameterUpdate:
    """
    One shared-parameter upload of a client.
    """

    client_id: int
    """
    The origin, only visible to the trusted node receiving the upload.
    """

    payload: FloatArray
    """
    The flattened (noised) item block Θ'.
    """

    round_index: int
    """
    The round the upload belongs to.
    """


@dataclass(frozen=True)
class AnomalyResult:
    """
    The outcome of the robust distance check on one trusted node.
    """

    distances: FloatArray
    """
    The L2 distances of the payloads to the reference block.
    """

    z_scores: FloatArray
    """
    The robust z-scores of the distances.
    """

    flags: tuple[bool, ...]
    """
    Whether each update exceeds the distance threshold μ, in input order.
    """

    node_trips: bool
    """
    Whether the flagged fraction exceeds the outlier-ratio threshold ν.
    """

    @property
    def flagged_fraction(self) -> float:
        return sum(self.flags) / len(self.flags)


@dataclass(frozen=True)
class NodeAggregate:
    """
    The partial mean W_{t,i} one trusted node forwards to the server.
    """

    node_id: int
    """
    The trusted node, the only origin the server learns.
    """

    payload: FloatArray | None
    """
    The partial mean, or `None` if the node withheld or failed.
    """


def assign_clients(num_clients: int, num_nodes: int, seed: int) -> Partition:
    """
    Randomly partition the clients into balanced node groups.

    :param num_clients: The number of clients C.
    :param num_nodes: The number of trusted nodes T.
    :param seed: The seed for the permutation.
    :return: The sorted client IDs per node, sizes differing by at most 1.
    """
    raise_for_messages([check_range("federation.trusted_nodes", num_nodes, minimum=1)])
    if num_clients < num_nodes:
        raise ConfigError(f"federation.trusted_nodes: cannot exceed the {num_clients} clients, got {num_nodes}")
    permutation = np.random.default_rng(seed).permutation(num_clients)
    return [sorted(int(client) for client in permutation[node::num_nodes]) for node in range(num_nodes)]


def check_partition(partition: Partition, num_clients: int) -> None:
    """
    Check that the node groups are disjoint and cover all clients.

    :param partition: The client IDs per node.
    :param num_clients: The number of clients C.
    """
    assigned = [client for clients in partition for client in clients]
    if len(assigned) != num_clients or set(assigned) != set(range(num_clients)):
        raise ProtocolError("Client assignments do not partition the client set.")


def reassign_clients(partition: Partition, failed: Collection[int]) -> Partition:
    """
    Move the clients of failed nodes to the surviving ones.

    Orphaned clients are dealt in ascending order to the currently smallest
    surviving node, ties broken by the node ID.

    :param partition: The client IDs per node.
    :param failed: The failed node IDs.
    :return: The new partition, failed nodes being empty.
    """
    survivors = [node for node in range(len(partition)) if node not in failed]
    if not survivors:
        raise ProtocolError("Cannot reassign clients without any surviving trusted node.")
    result = [list(clients) if node in survivors else [] for node, clients in enumerate(partition)]
    orphans = sorted(client for node in failed for client in partition[node])
    for client in orphans:
        target = min(survivors, key=lambda node: (len(result[node]), node))
        result[target].append(client)
    return [sorted(clients) for clients in result]


def robust_z_scores(distances: FloatArray) -> FloatArray:
    """
    Score the distances by their deviation from the median, scaled by the MAD.

    A degenerate MAD yields zero scores everywhere.

    :param distances: The distances to score.
    :return: The z-scores.
    """
    median = np.median(distances)
    mad = float(np.median(np.abs(distances - median)))
    if mad < MAD_EPSILON:
        return np.zeros_like(distances)
    return MAD_Z_SCALE * (distances - median) / mad


def check_anomaly(updates: Sequence[ParameterUpdate], reference: FloatArray, mu: float, nu: float) -> AnomalyResult:
    """
    Flag the updates whose distance to the reference is an outlier.

    :param updates: The updates received by one node.
    :param reference: The previous global block W_s.
    :param mu: The z-score threshold μ.
    :param nu: The outlier-ratio threshold ν.
    :return: The per-update flags and whether the node trips.
    """
    if not updates:
        raise ProtocolError("Cannot check an empty list of updates.")
    for update in updates:
        check_same_shape(update.payload, reference, "update payload")
    distances = np.array([np.linalg.norm(update.payload - reference) for update in updates])
    z_scores = robust_z_scores(distances)
    flags = tuple(bool(flag) for flag in np.abs(z_scores) > mu)
    result = AnomalyResult(distances=distances, z_scores=z_scores, flags=flags, node_trips=sum(flags) / len(flags) > nu)
    logger.debug(
        "Checked %d updates: median distance %.6g, %d flagged, trips=%s.",
        len(updates), float(np.median(distances)), sum(flags), result.node_trips,
    )
    return result


def _mean_by_client(updates: Sequence[ParameterUpdate]) -> FloatArray:
    ordered = sorted(updates, key=lambda update: update.client_id)
    return np.mean(np.stack([update.payload for update in ordered]), axis=0)  # type: ignore[no-any-return]


def trusted_aggregate(updates: Sequence[ParameterUpdate], result: AnomalyResult) -> FloatArray | None:
    """
    Average the unflagged payloads of one node.

    :param updates: The updates received by the node.
    :param result: The anomaly check of these updates.
    :return: The partial mean W_{t,i}, or `None` if the node withholds.
    """
    if len(updates) != len(result.flags):
        raise ProtocolError(f"Got {len(result.flags)} flags for {len(updates)} updates.")
    if result.node_trips:
        return None
    kept = [update for update, flagged in zip(updates, result.flags) if not flagged]
    if not kept:
        return None
    return _mean_by_client(kept)


def direct_aggregate(updates: Sequence[ParameterUpdate]) -> FloatArray:
    """
    Average all payloads without any check, as a server without trusted nodes would.
    """
    if not updates:
        raise ProtocolError("Cannot aggregate an empty list of updates.")
    return _mean_by_client(updates)


def server_aggregate(aggregates: Sequence[NodeAggregate]) -> FloatArray | None:
    """
    Average the partial means of all participating nodes.

    Withheld and failed nodes count neither in the sum nor in the divisor.

    :param aggregates: The node aggregates.
    :return: The new global block W_s, or `None` if no node participated.
    """
    payloads = [
        aggregate.payload
        for aggregate in sorted(aggregates, key=lambda aggregate: aggregate.node_id)
        if aggregate.payload is not None
    ]
    if not payloads:
        logger.warning("No trusted node delivered an aggregate, skipping the server update.")
        return None
    return np.mean(np.stack(payloads), axis=0)  # type: ignore[no-any-return]


def blend_update(theta: FloatArray, w_s: FloatArray, beta: float) -> FloatArray:
    """
    Mix the global block into the local parameters: (1 - β)·Θ + β·W_s.

    :param theta: The local parameters Θ.
    :param w_s: The global block W_s.
    :param beta: The blend factor β in (0, 1).
    :return: The blended parameters.
    """
    raise_for_messages([
        check_range("federation.beta", beta, minimum=0.0, maximum=1.0, minimum_inclusive=False, maximum_inclusive=False),
    ])
    check_same_shape(theta, w_s, "blend operands")
    return (1.0 - beta) * theta + beta * w_s
