# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

import math
from unittest import TestCase

import numpy as np

from tiered_fedrec.tools import metric_tools
from tiered_fedrec.tools.adversary_tools import make_synthetic_dataset
from tiered_fedrec.tools.gnn_tools import EmbeddingState, init_embeddings, rank_items
from tiered_fedrec.tools.graph_tools import DatasetSplit, InteractionGraph, split_dataset
from tiered_fedrec.tools.metric_tools import RankingMetrics
from tiered_fedrec.utils.validation_utils import EmptyEvaluationError


def make_split() -> DatasetSplit:
    # Two users, five items with scores 5 > 4 > 3 > 2 > 1 for both users.
    return DatasetSplit(
        train=InteractionGraph(num_users=2, num_items=5, adjacency=((0,), (4,))),
        validation=frozenset({(1, 3)}),
        test=frozenset({(0, 2), (1, 0)}),
        ratios=(0.6, 0.2, 0.2),
        seed=1,
    )


def make_state(num_users: int = 2) -> EmbeddingState:
    return EmbeddingState(
        user_emb=np.ones((num_users, 1)),
        item_emb=np.array([[5.0], [4.0], [3.0], [2.0], [1.0]]),
    )


class HitRateTestCase(TestCase):
    def test_hit_rate(self) -> None:
        self.assertEqual(1.0, metric_tools.hit_rate([4, 2, 9], {9}))
        self.assertEqual(0.0, metric_tools.hit_rate([4, 2, 9], {1, 3}))
        self.assertEqual(0.0, metric_tools.hit_rate([], {1}))


class NdcgTestCase(TestCase):
    def test_single_relevant(self) -> None:
        self.assertEqual(1.0, metric_tools.ndcg([3, 5, 9], {3}))
        self.assertAlmostEqual(1 / math.log2(3), metric_tools.ndcg([5, 3, 9], {3}))

    def test_multiple_relevant(self) -> None:
        dcg = 1 / math.log2(3) + 1 / math.log2(4)
        ideal = 1 + 1 / math.log2(3)
        self.assertAlmostEqual(dcg / ideal, metric_tools.ndcg([1, 2, 3], {2, 3}))

    def test_ideal_truncated_to_list(self) -> None:
        # Three relevant items, but only two slots.
        self.assertEqual(1.0, metric_tools.ndcg([1, 2], {1, 2, 3}))

    def test_no_relevant(self) -> None:
        with self.assertRaisesRegex(
                expected_exception=EmptyEvaluationError, expected_regex=r"^Cannot compute the NDCG without relevant items\.$"
        ):
            metric_tools.ndcg([1, 2], set())


class MacroAverageTestCase(TestCase):
    def test_macro_average(self) -> None:
        self.assertEqual(0.5, metric_tools.macro_average([0.0, 1.0, 0.5, 0.5]))
        self.assertEqual(0.1, metric_tools.macro_average([0.1] * 10))


class ExpectedRandomHitRateTestCase(TestCase):
    def test_single_relevant(self) -> None:
        self.assertAlmostEqual(10 / 300, metric_tools.expected_random_hit_rate(300, 1, 10))

    def test_bounds(self) -> None:
        self.assertEqual(0.0, metric_tools.expected_random_hit_rate(50, 0, 10))
        self.assertEqual(1.0, metric_tools.expected_random_hit_rate(15, 6, 10))

    def test_monte_carlo(self) -> None:
        rng = np.random.default_rng(4)
        hits = [bool(set(rng.choice(40, size=5, replace=False).tolist()) & {0, 1, 2}) for _ in range(20_000)]
        expected = metric_tools.expected_random_hit_rate(40, 3, 5)
        self.assertAlmostEqual(expected, float(np.mean(hits)), delta=4 * math.sqrt(expected * (1 - expected) / 20_000))


class EvaluateTestCase(TestCase):
    def test_global_state(self) -> None:
        metrics = metric_tools.evaluate(make_state(), make_split(), k=1)
        # User 0 ranks [1, 2, 3, 4] and misses item 2, user 1 ranks [0, 1, 2, 3] and hits item 0.
        self.assertEqual(RankingMetrics(hr_at_k=0.5, ndcg_at_k=0.5, k=1, users_evaluated=2), metrics)

        metrics = metric_tools.evaluate(make_state(), make_split(), k=2)
        self.assertEqual(1.0, metrics.hr_at_k)
        self.assertAlmostEqual((1 / math.log2(3) + 1.0) / 2, metrics.ndcg_at_k)

    def test_validation_split(self) -> None:
        metrics = metric_tools.evaluate(make_state(), make_split(), k=3, split_name="validation")
        self.assertEqual(1, metrics.users_evaluated)
        self.assertEqual(0.0, metrics.hr_at_k)
        metrics = metric_tools.evaluate(make_state(), make_split(), k=4, split_name="validation")
        self.assertEqual(1.0, metrics.hr_at_k)
        self.assertAlmostEqual(1 / math.log2(5), metrics.ndcg_at_k)

    def test_local_states(self) -> None:
        local = make_state(num_users=1)
        metrics = metric_tools.evaluate({1: local}, make_split(), k=1)
        self.assertEqual(RankingMetrics(hr_at_k=1.0, ndcg_at_k=1.0, k=1, users_evaluated=1), metrics)

    def test_exclusions(self) -> None:
        # Excluding item 1 lets user 0 reach item 2 at the first position.
        metrics = metric_tools.evaluate(make_state(), make_split(), k=1, exclusions={0: {1}})
        self.assertEqual(1.0, metrics.hr_at_k)
        # Excluded held-out items are not relevant anymore.
        metrics = metric_tools.evaluate(make_state(), make_split(), k=1, exclusions={0: {2}})
        self.assertEqual(1, metrics.users_evaluated)

    def test_fewer_candidates_than_k(self) -> None:
        metrics = metric_tools.evaluate(make_state(), make_split(), k=10)
        self.assertEqual(10, metrics.k)
        self.assertEqual(2, metrics.users_evaluated)
        self.assertEqual(1.0, metrics.hr_at_k)
        self.assertAlmostEqual((1 / math.log2(3) + 1.0) / 2, metrics.ndcg_at_k)

        # Only item 2 is left for user 0.
        metrics = metric_tools.evaluate(make_state(), make_split(), k=10, exclusions={0: {1, 3, 4}})
        self.assertEqual(RankingMetrics(hr_at_k=1.0, ndcg_at_k=1.0, k=10, users_evaluated=2), metrics)

    def test_permutation_below_cutoff(self) -> None:
        rng = np.random.default_rng(12)
        for _ in range(20):
            held_out = rng.choice(np.arange(1, 30), size=3, replace=False)
            split = DatasetSplit(
                train=InteractionGraph(num_users=1, num_items=30, adjacency=((0,),)),
                validation=frozenset(),
                test=frozenset((0, int(item)) for item in held_out),
                ratios=(0.6, 0.2, 0.2),
                seed=1,
            )
            scores = rng.permutation(30).astype(np.float64)
            state = EmbeddingState(user_emb=np.ones((1, 1)), item_emb=scores[:, None])
            top = set(rank_items(0, state, {0}, 5))
            below = [item for item in range(1, 30) if item not in top]
            permuted = scores.copy()
            permuted[below] = rng.permutation(scores[below])

            before = metric_tools.evaluate(state, split, k=5)
            after = metric_tools.evaluate(EmbeddingState(user_emb=np.ones((1, 1)), item_emb=permuted[:, None]), split, k=5)
            self.assertEqual(before, after)

    def test_parallel_matches_sequential(self) -> None:
        graph = make_synthetic_dataset(60, 80, 4, 10, seed=3)
        split = split_dataset(graph, seed=3)
        state = init_embeddings(60, 80, 8, seed=3)
        self.assertEqual(
            metric_tools.evaluate(state, split, k=10, jobs=1), metric_tools.evaluate(state, split, k=10, jobs=3),
        )

    def test_nothing_to_evaluate(self) -> None:
        with self.assertRaisesRegex(expected_exception=EmptyEvaluationError, expected_regex=r"^No user could be evaluated\.$"):
            metric_tools.evaluate({}, make_split(), k=1)

    def test_random_model_matches_baseline(self) -> None:
        graph = make_synthetic_dataset(200, 300, 8, 20, seed=2025)
        split = split_dataset(graph, seed=2025)
        state = init_embeddings(200, 300, 16, seed=99)
        metrics = metric_tools.evaluate(state, split, k=10)

        probabilities = [
            metric_tools.expected_random_hit_rate(300 - len(split.train.neighbors(user)), len(items), 10)
            for user, items in split.test_items.items()
        ]
        expected = float(np.mean(probabilities))
        standard_error = math.sqrt(sum(p * (1 - p) for p in probabilities)) / len(probabilities)
        self.assertLess(abs(metrics.hr_at_k - expected), 3 * standard_error)
