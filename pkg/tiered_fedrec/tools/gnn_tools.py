# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Tools related to the client-local graph model: embedding initialization,
scheduled bipartite message passing, BPR optimization, scoring and ranking.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Collection, Sequence
from dataclasses import dataclass, fields
from functools import cached_property
from itertools import chain
from typing import Literal

import numpy as np
import numpy.typing as npt
from scipy import sparse  # type: ignore[import-untyped]
from scipy.special import expit  # type: ignore[import-untyped]

from tiered_fedrec.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EMBEDDING_DIM,
    DEFAULT_ITEM_UPDATE_MULTIPLIER,
    DEFAULT_L2_REG,
    DEFAULT_LAYERS,
    DEFAULT_LEARNING_RATE,
)
from tiered_fedrec.tools.graph_tools import LocalGraph
from tiered_fedrec.utils.validation_utils import (
    BoundsError,
    check_finite,
    check_range,
    EmptyBatchError,
    FloatArray,
    IntArray,
    raise_for_messages,
    ShapeError,
)

logger = logging.getLogger(__name__)
del logging


ACTIVATIONS = ["sigmoid", "identity"]
ActivationType = Literal["sigmoid", "identity"]

NEIGHBOR_WEIGHTINGS = ["symmetric-sqrt", "mean"]
NeighborWeightingType = Literal["symmetric-sqrt", "mean"]


@dataclass(frozen=True)
class FastGnnConfig:
    """
    Configuration of the scheduled message passing.
    """

    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    """
    The embedding dimension k.
    """

    layers: int = DEFAULT_LAYERS
    """
    The number of message passing layers H.
    """

    item_update_multiplier: int = DEFAULT_ITEM_UPDATE_MULTIPLIER
    """
    The item update multiplier h. Item rows are refreshed every H·h epochs.
    """

    activation: ActivationType = "sigmoid"
    """
    The non-linearity applied after each aggregation.
    """

    neighbor_weighting: NeighborWeightingType = "symmetric-sqrt"
    """
    The neighbor coefficient: `1/sqrt(|N'(u)|·|N(i)|)` or `1/|N'(u)|`.
    """

    def validate(self) -> None:
        raise_for_messages([
            check_range("fastgnn.embedding_dim", self.embedding_dim, minimum=1),
            check_range("fastgnn.layers", self.layers, minimum=1),
            check_range("fastgnn.item_update_multiplier", self.item_update_multiplier, minimum=1),
            None if self.activation in ACTIVATIONS else f"fastgnn.activation: must be one of {ACTIVATIONS}, got {self.activation!r}",
            (
                None if self.neighbor_weighting in NEIGHBOR_WEIGHTINGS
                else f"fastgnn.neighbor_weighting: must be one of {NEIGHBOR_WEIGHTINGS}, got {self.neighbor_weighting!r}"
            ),
        ])

    @property
    def refresh_interval(self) -> int:
        """
        The distance between two item refresh epochs.

        A multiplier of 1 disables the schedule and refreshes the items on
        every epoch, which is the plain bipartite graph convolution.
        """
        if self.item_update_multiplier == 1:
            return 1
        return self.layers * self.item_update_multiplier

    def is_item_refresh_epoch(self, epoch: int) -> bool:
        return epoch % self.refresh_interval == 0


@dataclass(frozen=True)
class TrainConfig:
    """
    Configuration of the local BPR optimization.
    """

    learning_rate: float = DEFAULT_LEARNING_RATE
    """
    The SGD step size α.
    """

    l2_reg: float = DEFAULT_L2_REG
    """
    The regularization coefficient γ.
    """

    batch_size: int = DEFAULT_BATCH_SIZE
    """
    The minibatch size B.
    """

    local_epochs_per_round: int = 1
    """
    The number of local epochs E per federation round.
    """

    neg_samples_per_pos: int = 1
    """
    The number of negative items sampled for each positive one.
    """

    def validate(self) -> None:
        raise_for_messages([
            check_range("training.learning_rate", self.learning_rate, minimum=0.0, minimum_inclusive=False),
            check_range("training.l2_reg", self.l2_reg, minimum=0.0),
            check_range("training.batch_size", self.batch_size, minimum=1),
            check_range("training.local_epochs_per_round", self.local_epochs_per_round, minimum=1),
            check_range("training.neg_samples_per_pos", self.neg_samples_per_pos, minimum=1),
        ])


@dataclass(frozen=True)
class EmbeddingState:
    """
    The user rows held by one client and its copy of the shared item block Θ.
    """

    user_emb: FloatArray
    """
    The private user embeddings, one row per local user.
    """

    item_emb: FloatArray
    """
    The item embeddings, which are the only uploadable parameters.
    """

    def __post_init__(self) -> None:
        if self.user_emb.ndim != 2 or self.item_emb.ndim != 2:
            raise ShapeError("Embeddings have to be matrices.")
        if self.user_emb.shape[1] != self.item_emb.shape[1]:
            raise ShapeError(f"Embedding dimensions differ: {self.user_emb.shape[1]} != {self.item_emb.shape[1]}")

    @property
    def k(self) -> int:
        return int(self.item_emb.shape[1])

    @property
    def num_users(self) -> int:
        return int(self.user_emb.shape[0])

    @property
    def num_items(self) -> int:
        return int(self.item_emb.shape[0])

    def copy(self) -> EmbeddingState:
        return EmbeddingState(user_emb=self.user_emb.copy(), item_emb=self.item_emb.copy())

    def with_items(self, item_emb: FloatArray) -> EmbeddingState:
        """
        Replace the shared block, keeping the private user rows.

        :param item_emb: The new item block.
        :return: The new state.
        """
        if item_emb.shape != self.item_emb.shape:
            raise ShapeError(f"Shape mismatch for item block: {item_emb.shape} != {self.item_emb.shape}")
        return EmbeddingState(user_emb=self.user_emb, item_emb=item_emb)


@dataclass
class OpCounter:
    """
    Row update counters standing in for the propagation cost.
    """

    user_update_ops: int = 0
    """
    The number of user row updates, counted per layer.
    """

    item_update_ops: int = 0
    """
    The number of item row updates, counted per layer.
    """

    epochs_run: int = 0
    """
    The number of propagated epochs.
    """

    item_refresh_epochs: int = 0
    """
    The number of epochs which refreshed the item rows.
    """

    def merge(self, other: OpCounter) -> OpCounter:
        """
        Sum both counters.

        :param other: The counter to add.
        :return: The new combined counter.
        """
        return OpCounter(**{
            counter.name: getattr(self, counter.name) + getattr(other, counter.name) for counter in fields(self)
        })

    @property
    def item_refresh_ratio(self) -> float:
        if not self.epochs_run:
            return 0.0
        return self.item_refresh_epochs / self.epochs_run


class NormalizedAdjacency:
    """
    The weighted bipartite adjacency of one local graph.

    Build it once per graph and reuse it for all epochs of a round. The item
    side is only needed on refresh epochs and therefore built on first use.
    """

    def __init__(self, graph: LocalGraph, weighting: NeighborWeightingType) -> None:
        lengths = np.fromiter((len(items) for items in graph.adjacency), dtype=np.int64, count=graph.num_rows)
        self._rows = np.repeat(np.arange(graph.num_rows), lengths)
        self._columns = np.fromiter(chain.from_iterable(graph.adjacency), dtype=np.int64, count=int(lengths.sum()))
        item_degrees = np.bincount(self._columns, minlength=graph.num_items)
        if weighting == "mean":
            user_weights = 1.0 / lengths[self._rows]
            self._item_weights = 1.0 / item_degrees[self._columns]
        else:
            user_weights = self._item_weights = 1.0 / np.sqrt(lengths[self._rows] * item_degrees[self._columns])
        self.num_rows = graph.num_rows
        self.num_items = graph.num_items
        self.user_side = sparse.csr_matrix((user_weights, (self._rows, self._columns)), shape=(graph.num_rows, graph.num_items))
        self.user_mask: npt.NDArray[np.bool_] = lengths > 0
        self.item_mask: npt.NDArray[np.bool_] = item_degrees > 0
        self.user_rows = int(self.user_mask.sum())
        self.item_rows = int(self.item_mask.sum())

    @cached_property
    def item_side(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self._item_weights, (self._columns, self._rows)), shape=(self.num_items, self.num_rows),
        )

    def check_state(self, state: EmbeddingState) -> None:
        if state.num_users != self.num_rows or state.num_items != self.num_items:
            raise ShapeError(
                f"Graph with {self.num_rows}x{self.num_items} nodes does not match embeddings "
                f"with {state.num_users}x{state.num_items} rows."
            )


def _activate(values: FloatArray, activation: ActivationType) -> FloatArray:
    if activation == "sigmoid":
        return expit(values)  # type: ignore[no-any-return]
    return values


def _run_layers(
        adjacency: NormalizedAdjacency,
        state: EmbeddingState,
        config: FastGnnConfig,
        refresh_items: bool,
        counter: OpCounter | None,
) -> EmbeddingState:
    users, items = state.user_emb, state.item_emb
    if refresh_items:
        for _ in range(config.layers):
            # Both sides read the layer input, so the update is synchronous.
            next_users = users.copy()
            next_users[adjacency.user_mask] = _activate(adjacency.user_side @ items, config.activation)[adjacency.user_mask]
            next_items = items.copy()
            next_items[adjacency.item_mask] = _activate(adjacency.item_side @ users, config.activation)[adjacency.item_mask]
            users, items = next_users, next_items
    else:
        # The item rows stay fixed, so every layer yields the same user rows.
        users = users.copy()
        users[adjacency.user_mask] = _activate(adjacency.user_side @ items, config.activation)[adjacency.user_mask]

    if counter is not None:
        counter.user_update_ops += config.layers * adjacency.user_rows
        counter.epochs_run += 1
        if refresh_items:
            counter.item_update_ops += config.layers * adjacency.item_rows
            counter.item_refresh_epochs += 1
    return EmbeddingState(user_emb=users, item_emb=items)


def propagate(
        graph: LocalGraph | NormalizedAdjacency,
        state: EmbeddingState,
        config: FastGnnConfig,
        epoch: int,
        counter: OpCounter | None = None,
) -> EmbeddingState:
    """
    Run H layers of scheduled message passing.

    User rows aggregate the weighted embeddings of their neighbor items on
    every layer. Item rows aggregate the embeddings of their interacting
    users on refresh epochs only and pass through unchanged otherwise. Rows
    without any neighbor keep their embedding.

    :param graph: The (perturbed) local graph or its prebuilt adjacency.
    :param state: The layer-0 embeddings.
    :param config: The propagation configuration.
    :param epoch: The global epoch index, deciding about the item refresh.
    :param counter: The counter to record the row updates in.
    :return: The layer-H embeddings.
    """
    adjacency = graph if isinstance(graph, NormalizedAdjacency) else NormalizedAdjacency(graph, config.neighbor_weighting)
    adjacency.check_state(state)
    return _run_layers(adjacency, state, config, refresh_items=config.is_item_refresh_epoch(epoch), counter=counter)


def full_propagate(
        graph: LocalGraph | NormalizedAdjacency,
        state: EmbeddingState,
        config: FastGnnConfig,
        counter: OpCounter | None = None,
) -> EmbeddingState:
    """
    Run H layers of message passing refreshing users and items on every layer.

    This is the unscheduled reference propagation.
    """
    adjacency = graph if isinstance(graph, NormalizedAdjacency) else NormalizedAdjacency(graph, config.neighbor_weighting)
    adjacency.check_state(state)
    return _run_layers(adjacency, state, config, refresh_items=True, counter=counter)


def init_embeddings(n_users: int, m_items: int, k: int, seed: int) -> EmbeddingState:
    """
    Initialize the embeddings uniformly in [-0.5/sqrt(k), 0.5/sqrt(k)].

    :param n_users: The number of user rows.
    :param m_items: The number of item rows.
    :param k: The embedding dimension.
    :param seed: The seed of the random stream.
    :return: The initialized state.
    """
    raise_for_messages([
        check_range("fastgnn.embedding_dim", k, minimum=1),
        check_range("n_users", n_users, minimum=0),
        check_range("m_items", m_items, minimum=0),
    ])
    rng = np.random.default_rng(seed)
    bound = 0.5 / math.sqrt(k)
    return EmbeddingState(
        user_emb=rng.uniform(-bound, bound, size=(n_users, k)),
        item_emb=rng.uniform(-bound, bound, size=(m_items, k)),
    )


def predict_score(u_emb: FloatArray, i_emb: FloatArray) -> float:
    """
    Get the predicted preference as the dot product of both embeddings.
    """
    if u_emb.ndim != 1 or u_emb.shape != i_emb.shape:
        raise ShapeError(f"Shape mismatch for score: {u_emb.shape} != {i_emb.shape}")
    return float(np.dot(u_emb, i_emb))


def _as_triples(batch: Sequence[tuple[int, int, int]] | IntArray) -> IntArray:
    triples = np.asarray(batch, dtype=np.int64)
    if triples.size == 0:
        raise EmptyBatchError("Cannot train on an empty batch.")
    return triples.reshape(-1, 3)


@dataclass(frozen=True)
class _RowGradients:
    loss: float
    user_rows: IntArray
    user_grad: FloatArray
    item_rows: IntArray
    item_grad: FloatArray


def _bpr_row_gradients(user_emb: FloatArray, item_emb: FloatArray, triples: IntArray, l2_reg: float) -> _RowGradients:
    users, positives, negatives = triples[:, 0], triples[:, 1], triples[:, 2]
    user_vectors = user_emb[users]
    difference = item_emb[positives] - item_emb[negatives]

    margins = np.einsum("ij,ij->i", user_vectors, difference)
    loss = float(np.mean(np.logaddexp(0.0, -margins)))
    coefficients = (-expit(-margins) / len(triples))[:, None]

    user_rows, user_inverse = np.unique(users, return_inverse=True)
    item_rows, item_inverse = np.unique(np.concatenate([positives, negatives]), return_inverse=True)
    user_inverse = user_inverse.ravel()
    item_inverse = item_inverse.ravel()
    user_grad = np.zeros((user_rows.size, user_emb.shape[1]))
    item_grad = np.zeros((item_rows.size, item_emb.shape[1]))
    np.add.at(user_grad, user_inverse, coefficients * difference)
    np.add.at(item_grad, item_inverse[:len(triples)], coefficients * user_vectors)
    np.add.at(item_grad, item_inverse[len(triples):], -coefficients * user_vectors)

    if l2_reg:
        row_count = user_rows.size + item_rows.size
        for gradient, values in ((user_grad, user_emb[user_rows]), (item_grad, item_emb[item_rows])):
            norms = np.linalg.norm(values, axis=1)
            loss += l2_reg * float(norms.sum()) / row_count
            safe_norms = np.where(norms > 0, norms, 1.0)[:, None]
            gradient += l2_reg / row_count * values / safe_norms

    return _RowGradients(loss=loss, user_rows=user_rows, user_grad=user_grad, item_rows=item_rows, item_grad=item_grad)


def bpr_loss_and_gradients(
        state: EmbeddingState,
        batch: Sequence[tuple[int, int, int]] | IntArray,
        l2_reg: float,
) -> tuple[float, FloatArray, FloatArray]:
    """
    Evaluate the regularized BPR loss and its gradients.

    The loss is the batch mean of `-log(sigmoid(y_ui - y_uj))` plus γ times
    the mean L2 norm of the distinct user and item rows touched by the batch.

    :param state: The current embeddings.
    :param batch: The (user row, positive item, negative item) triples.
    :param l2_reg: The regularization coefficient γ.
    :return: The loss, the gradient of the user rows and the gradient of the item rows.
    """
    result = _bpr_row_gradients(state.user_emb, state.item_emb, _as_triples(batch), l2_reg)
    user_grad = np.zeros_like(state.user_emb)
    item_grad = np.zeros_like(state.item_emb)
    user_grad[result.user_rows] = result.user_grad
    item_grad[result.item_rows] = result.item_grad
    return result.loss, user_grad, item_grad


def _apply_bpr_step(user_emb: FloatArray, item_emb: FloatArray, triples: IntArray, config: TrainConfig) -> float:
    # Updates the touched rows in place.
    result = _bpr_row_gradients(user_emb, item_emb, triples, config.l2_reg)
    user_emb[result.user_rows] -= config.learning_rate * result.user_grad
    item_emb[result.item_rows] -= config.learning_rate * result.item_grad
    check_finite(user_emb[result.user_rows], "user embeddings")
    check_finite(item_emb[result.item_rows], "item embeddings")
    return result.loss


def bpr_step(
        state: EmbeddingState,
        batch: Sequence[tuple[int, int, int]] | IntArray,
        config: TrainConfig,
) -> tuple[EmbeddingState, float]:
    """
    Perform one plain SGD step on the BPR loss.

    :param state: The current embeddings.
    :param batch: The (user row, positive item, negative item) triples.
    :param config: The training configuration.
    :return: The updated embeddings and the loss before the step.
    """
    updated = state.copy()
    loss = _apply_bpr_step(updated.user_emb, updated.item_emb, _as_triples(batch), config)
    return updated, loss


def rank_items(user: int, state: EmbeddingState, exclude: Collection[int], k: int) -> list[int]:
    """
    Get the top-K items for the given user row.

    Ties are broken by the ascending item ID.

    :param user: The local user row.
    :param state: The embeddings to score with.
    :param exclude: The items never to recommend, usually train and false edges.
    :param k: The number of items K.
    :return: The item IDs ordered by descending score.
    """
    candidates = np.setdiff1d(np.arange(state.num_items), np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
    if not 0 <= k <= candidates.size:
        raise BoundsError(f"Cannot rank {k} items from {candidates.size} candidates.")
    scores = state.item_emb[candidates] @ state.user_emb[user]
    order = np.lexsort((candidates, -scores))[:k]
    return [int(item) for item in candidates[order]]


def sample_training_triples(
        graph: LocalGraph,
        rng: np.random.Generator,
        neg_samples_per_pos: int = 1,
) -> IntArray:
    """
    Pair each neighbor item with negatives drawn uniformly outside N'(u).

    Rows without any candidate negative are skipped.

    :param graph: The perturbed local graph.
    :param rng: The random stream.
    :param neg_samples_per_pos: The number of negatives per positive.
    :return: The shuffled (user row, positive item, negative item) triples.
    """
    lengths = np.fromiter((len(items) for items in graph.adjacency), dtype=np.int64, count=graph.num_rows)
    for row in np.flatnonzero((lengths > 0) & (lengths >= graph.num_items)):
        logger.warning("User %d interacted with every item, no negative available.", graph.user_ids[row])
    eligible = np.flatnonzero((lengths > 0) & (lengths < graph.num_items))
    if not eligible.size:
        return np.empty((0, 3), dtype=np.int64)

    positives = np.fromiter(
        chain.from_iterable(graph.adjacency[row] for row in eligible), dtype=np.int64, count=int(lengths[eligible].sum()),
    )
    rows = np.repeat(eligible, lengths[eligible])
    seen = np.sort(rows * graph.num_items + positives)
    rows = np.repeat(rows, neg_samples_per_pos)
    positives = np.repeat(positives, neg_samples_per_pos)

    # Rejection sampling: redraw the negatives hitting a neighbor item.
    negatives = rng.integers(graph.num_items, size=positives.size)
    pending = np.flatnonzero(np.isin(rows * graph.num_items + negatives, seen))
    while pending.size:
        negatives[pending] = rng.integers(graph.num_items, size=pending.size)
        pending = pending[np.isin(rows[pending] * graph.num_items + negatives[pending], seen)]

    triples = np.column_stack([rows, positives, negatives]).astype(np.int64)
    return triples[rng.permutation(len(triples))]


def train_local(
        graph: LocalGraph,
        state: EmbeddingState,
        fastgnn: FastGnnConfig,
        training: TrainConfig,
        rng: np.random.Generator,
        start_epoch: int = 0,
        counter: OpCounter | None = None,
) -> tuple[EmbeddingState, float]:
    """
    Run the local epochs of one round: propagate, then BPR minibatches.

    The adjacency is built once for all epochs of the round. Each minibatch
    only touches the rows it samples.

    :param graph: The perturbed local graph.
    :param state: The embeddings at the beginning of the round.
    :param fastgnn: The propagation configuration.
    :param training: The training configuration.
    :param rng: The random stream for negative sampling.
    :param start_epoch: The global index of the first epoch.
    :param counter: The counter to record the row updates in.
    :return: The trained embeddings and the sample-weighted mean loss, NaN without any sample.
    """
    adjacency = NormalizedAdjacency(graph, fastgnn.neighbor_weighting)
    adjacency.check_state(state)
    # Non-refresh epochs hand the item block through, so work on a private copy.
    state = state.copy()
    loss_sum = 0.0
    sample_count = 0
    for epoch in range(start_epoch, start_epoch + training.local_epochs_per_round):
        state = _run_layers(adjacency, state, fastgnn, refresh_items=fastgnn.is_item_refresh_epoch(epoch), counter=counter)
        triples = sample_training_triples(graph, rng, training.neg_samples_per_pos)
        for start in range(0, len(triples), training.batch_size):
            batch = triples[start:start + training.batch_size]
            loss = _apply_bpr_step(state.user_emb, state.item_emb, batch, training)
            loss_sum += loss * len(batch)
            sample_count += len(batch)
    if not sample_count:
        return state, math.nan
    return state, loss_sum / sample_count
