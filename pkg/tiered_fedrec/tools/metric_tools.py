# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Tools related to the top-K ranking metrics.
"""

from __future__ import annotations

import math
from collections.abc import Collection, Mapping, Sequence
from dataclasses import asdict, dataclass
from typing import Literal

from joblib import Parallel, delayed  # type: ignore[import-untyped]

from tiered_fedrec.constants import DEFAULT_TOP_K
from tiered_fedrec.tools.gnn_tools import EmbeddingState, rank_items
from tiered_fedrec.tools.graph_tools import DatasetSplit
from tiered_fedrec.utils.validation_utils import EmptyEvaluationError


SplitNameType = Literal["test", "validation"]

Model = EmbeddingState | Mapping[int, EmbeddingState]


@dataclass(frozen=True)
class RankingMetrics:
    """
    Macro-averaged ranking quality.
    """

    hr_at_k: float
    """
    The share of users with at least one relevant item in their top K.
    """

    ndcg_at_k: float
    """
    The mean normalized discounted cumulative gain at K.
    """

    k: int
    """
    The cutoff K.
    """

    users_evaluated: int
    """
    The number of users with a non-empty relevant set.
    """

    def to_dict(self) -> dict[str, float | int]:
        return asdict(self)


def hit_rate(ranked: Sequence[int], relevant: Collection[int]) -> float:
    """
    :return: 1 if any of the ranked items is relevant, 0 otherwise.
    """
    return 1.0 if any(item in relevant for item in ranked) else 0.0


def ndcg(ranked: Sequence[int], relevant: Collection[int]) -> float:
    """
    Get the binary-relevance NDCG with the log2 discount.

    :param ranked: The top-K list.
    :param relevant: The relevant items, not empty.
    :return: DCG divided by the DCG of the ideal ranking.
    """
    if not relevant:
        raise EmptyEvaluationError("Cannot compute the NDCG without relevant items.")
    dcg = math.fsum(1.0 / math.log2(position + 2) for position, item in enumerate(ranked) if item in relevant)
    ideal = math.fsum(1.0 / math.log2(position + 2) for position in range(min(len(ranked), len(relevant))))
    return dcg / ideal


def macro_average(values: Sequence[float]) -> float:
    """
    Get the arithmetic mean using compensated summation.
    """
    return math.fsum(values) / len(values)


def expected_random_hit_rate(candidates: int, relevant: int, k: int) -> float:
    """
    Get the hit rate of a uniformly random top-K list.

    :param candidates: The number of rankable items.
    :param relevant: The number of relevant items among them.
    :param k: The list length.
    :return: The probability of at least one hit.
    """
    return 1.0 - math.comb(candidates - relevant, k) / math.comb(candidates, k)


def _user_view(model: Model, user: int) -> tuple[EmbeddingState, int] | None:
    if isinstance(model, EmbeddingState):
        return model, user
    state = model.get(user)
    if state is None:
        return None
    return state, 0


def _evaluate_user(state: EmbeddingState, row: int, exclude: frozenset[int], relevant: frozenset[int], k: int) -> tuple[float, float]:
    # Heavily perturbed graphs may leave fewer than K candidates, rank all of them then.
    candidates = state.num_items - len(exclude)
    ranked = rank_items(row, state, exclude, min(k, candidates))
    return hit_rate(ranked, relevant), ndcg(ranked, relevant)


def evaluate(
        model: Model,
        split: DatasetSplit,
        k: int = DEFAULT_TOP_K,
        exclusions: Mapping[int, Collection[int]] | None = None,
        split_name: SplitNameType = "test",
        jobs: int = 1,
) -> RankingMetrics:
    """
    Rank the full catalog for each user and score the held-out edges.

    Train edges and the additional exclusions (the false edges of the
    perturbed graphs) are never ranked and never count as relevant. Users
    missing from the model or without any relevant item are skipped. Users
    with fewer than K candidates get all of their candidates ranked.

    :param model: A global state indexed by user ID, or one local state per user ID.
    :param split: The dataset split.
    :param k: The cutoff K.
    :param exclusions: Further items per user to remove from the candidates.
    :param split_name: Whether to score the test or the validation edges.
    :param jobs: The number of parallel workers.
    :return: The macro-averaged metrics.
    """
    held_out = split.test_items if split_name == "test" else split.validation_items
    exclusions = exclusions or {}
    tasks = []
    for user in sorted(held_out):
        view = _user_view(model, user)
        if view is None:
            continue
        extra = frozenset(exclusions.get(user, ()))
        relevant = held_out[user] - extra
        if not relevant:
            continue
        exclude = frozenset(split.train.neighbors(user)) | extra
        tasks.append((*view, exclude, relevant))
    if not tasks:
        raise EmptyEvaluationError("No user could be evaluated.")

    results = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(_evaluate_user)(state, row, exclude, relevant, k) for state, row, exclude, relevant in tasks
    )
    return RankingMetrics(
        hr_at_k=macro_average([hit for hit, _ in results]),
        ndcg_at_k=macro_average([gain for _, gain in results]),
        k=k,
        users_evaluated=len(results),
    )
