# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

from unittest import TestCase

import numpy as np

from tiered_fedrec.tools import aggregation_tools
from tiered_fedrec.tools.aggregation_tools import AnomalyResult, NodeAggregate, ParameterUpdate
from tiered_fedrec.utils.validation_utils import ConfigError, FloatArray, ProtocolError, ShapeError


def make_updates(payloads: list[FloatArray], first_client: int = 0) -> list[ParameterUpdate]:
    return [
        ParameterUpdate(client_id=first_client + index, payload=payload, round_index=0)
        for index, payload in enumerate(payloads)
    ]


def no_flags(count: int, trips: bool = False) -> AnomalyResult:
    return AnomalyResult(distances=np.zeros(count), z_scores=np.zeros(count), flags=(False,) * count, node_trips=trips)


class AssignClientsTestCase(TestCase):
    def test_balanced_partition(self) -> None:
        for num_clients, num_nodes in [(200, 10), (23, 4), (5, 5), (7, 1)]:
            partition = aggregation_tools.assign_clients(num_clients, num_nodes, seed=2025)
            sizes = [len(clients) for clients in partition]
            with self.subTest(num_clients=num_clients, num_nodes=num_nodes):
                self.assertEqual(num_nodes, len(partition))
                self.assertLessEqual(max(sizes) - min(sizes), 1)
                self.assertEqual(list(range(num_clients)), sorted(client for clients in partition for client in clients))
                self.assertTrue(all(clients == sorted(clients) for clients in partition))
                aggregation_tools.check_partition(partition, num_clients)

    def test_deterministic(self) -> None:
        self.assertEqual(
            aggregation_tools.assign_clients(50, 7, seed=1), aggregation_tools.assign_clients(50, 7, seed=1),
        )
        self.assertNotEqual(
            aggregation_tools.assign_clients(50, 7, seed=1), aggregation_tools.assign_clients(50, 7, seed=2),
        )

    def test_invalid(self) -> None:
        with self.assertRaisesRegex(expected_exception=ConfigError, expected_regex=r"^federation\.trusted_nodes: must be >= 1, got 0$"):
            aggregation_tools.assign_clients(5, 0, seed=1)
        with self.assertRaisesRegex(
                expected_exception=ConfigError, expected_regex=r"^federation\.trusted_nodes: cannot exceed the 3 clients, got 4$"
        ):
            aggregation_tools.assign_clients(3, 4, seed=1)


class CheckPartitionTestCase(TestCase):
    def test_invalid(self) -> None:
        for partition in [[[0, 1], [1, 2]], [[0], [2]], [[0, 1, 2], [3]]]:
            with self.subTest(partition=partition), self.assertRaisesRegex(
                    expected_exception=ProtocolError, expected_regex=r"^Client assignments do not partition the client set\.$"
            ):
                aggregation_tools.check_partition(partition, 3)


class ReassignClientsTestCase(TestCase):
    def test_reassign(self) -> None:
        partition = [[0, 3], [1, 4, 6], [2, 5]]
        result = aggregation_tools.reassign_clients(partition, failed={1})
        self.assertEqual([[0, 1, 3, 6], [], [2, 4, 5]], result)
        aggregation_tools.check_partition(result, 7)

    def test_all_failed(self) -> None:
        with self.assertRaisesRegex(
                expected_exception=ProtocolError, expected_regex=r"^Cannot reassign clients without any surviving trusted node\.$"
        ):
            aggregation_tools.reassign_clients([[0], [1]], failed={0, 1})


class RobustZScoresTestCase(TestCase):
    def test_scores(self) -> None:
        distances = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
        # Median 3, absolute deviations [2, 1, 0, 1, 97], MAD 1.
        np.testing.assert_allclose(0.6745 * np.array([-2.0, -1.0, 0.0, 1.0, 97.0]), aggregation_tools.robust_z_scores(distances))

    def test_degenerate_mad(self) -> None:
        np.testing.assert_array_equal(np.zeros(4), aggregation_tools.robust_z_scores(np.array([2.0, 2.0, 2.0, 9.0])))

    def test_affine_invariance(self) -> None:
        rng = np.random.default_rng(5)
        for scale, shift in [(2.0, 0.0), (0.5, 3.0), (10.0, -1.0), (1.0, 100.0)]:
            distances = rng.exponential(1.0, size=25)
            with self.subTest(scale=scale, shift=shift):
                np.testing.assert_allclose(
                    np.abs(aggregation_tools.robust_z_scores(distances)),
                    np.abs(aggregation_tools.robust_z_scores(scale * distances + shift)),
                    atol=1e-9,
                )


class CheckAnomalyTestCase(TestCase):
    def test_flags_outlier(self) -> None:
        rng = np.random.default_rng(1)
        reference = np.zeros(20)
        payloads = [rng.normal(0.0, 0.1, size=20) for _ in range(9)] + [np.full(20, 50.0)]
        result = aggregation_tools.check_anomaly(make_updates(payloads), reference, mu=3.5, nu=0.5)
        self.assertEqual((False,) * 9 + (True,), result.flags)
        self.assertFalse(result.node_trips)
        self.assertEqual(0.1, result.flagged_fraction)
        self.assertAlmostEqual(float(np.linalg.norm(np.full(20, 50.0))), float(result.distances[-1]))

    def test_trips(self) -> None:
        payloads = [np.zeros(3), np.zeros(3) + 0.1, np.zeros(3) + 0.2, np.full(3, 40.0), np.full(3, 50.0)]
        result = aggregation_tools.check_anomaly(make_updates(payloads), np.zeros(3), mu=0.5, nu=0.3)
        self.assertTrue(result.node_trips)
        self.assertIsNone(aggregation_tools.trusted_aggregate(make_updates(payloads), result))

    def test_flags_under_affine_distances(self) -> None:
        # One-dimensional non-negative payloads against a zero reference have distance |payload|.
        rng = np.random.default_rng(8)
        distances = np.concatenate([rng.exponential(1.0, size=18), [9.0, 14.0]])
        expected = aggregation_tools.check_anomaly(make_updates([np.array([d]) for d in distances]), np.zeros(1), mu=3.5, nu=0.5)
        self.assertTrue(any(expected.flags))
        for scale, shift in [(3.0, 0.0), (0.25, 2.0), (7.0, 5.0)]:
            payloads = [np.array([scale * d + shift]) for d in distances]
            result = aggregation_tools.check_anomaly(make_updates(payloads), np.zeros(1), mu=3.5, nu=0.5)
            with self.subTest(scale=scale, shift=shift):
                self.assertEqual(expected.flags, result.flags)
                self.assertEqual(expected.node_trips, result.node_trips)

    def test_rates_nonincreasing_in_threshold(self) -> None:
        thresholds = [2.0, 2.5, 3.0, 3.5, 4.0]
        for seed in range(5):
            rng = np.random.default_rng(seed)
            honest = [rng.normal(0.0, 0.1, size=16) for _ in range(16)]
            malicious = [rng.normal(0.0, 0.1, size=16) * rng.uniform(1.5, 6.0) for _ in range(4)]
            updates = make_updates(honest + malicious)
            detection_rates = []
            false_positive_rates = []
            for mu in thresholds:
                flags = aggregation_tools.check_anomaly(updates, np.zeros(16), mu=mu, nu=0.5).flags
                detection_rates.append(float(np.mean(flags[16:])))
                false_positive_rates.append(float(np.mean(flags[:16])))
            with self.subTest(seed=seed):
                self.assertEqual(sorted(detection_rates, reverse=True), detection_rates)
                self.assertEqual(sorted(false_positive_rates, reverse=True), false_positive_rates)

    def test_identical_updates(self) -> None:
        payloads = [np.ones(4) for _ in range(5)]
        result = aggregation_tools.check_anomaly(make_updates(payloads), np.zeros(4), mu=3.5, nu=0.5)
        self.assertEqual((False,) * 5, result.flags)

    def test_empty(self) -> None:
        with self.assertRaisesRegex(expected_exception=ProtocolError, expected_regex=r"^Cannot check an empty list of updates\.$"):
            aggregation_tools.check_anomaly([], np.zeros(3), mu=3.5, nu=0.5)

    def test_shape_mismatch(self) -> None:
        with self.assertRaisesRegex(expected_exception=ShapeError, expected_regex=r"^Shape mismatch for update payload: \(2,\) != \(3,\)$"):
            aggregation_tools.check_anomaly(make_updates([np.zeros(2)]), np.zeros(3), mu=3.5, nu=0.5)


class TrustedAggregateTestCase(TestCase):
    def test_excludes_flagged(self) -> None:
        marker = np.full(3, 1e6)
        updates = make_updates([np.zeros(3), np.ones(3), marker, np.full(3, 2.0)])
        result = AnomalyResult(
            distances=np.zeros(4), z_scores=np.zeros(4), flags=(False, False, True, False), node_trips=False,
        )
        aggregate = aggregation_tools.trusted_aggregate(updates, result)
        assert aggregate is not None
        np.testing.assert_array_equal(np.ones(3), aggregate)

    def test_all_flagged(self) -> None:
        updates = make_updates([np.zeros(3)])
        result = AnomalyResult(distances=np.zeros(1), z_scores=np.zeros(1), flags=(True,), node_trips=False)
        self.assertIsNone(aggregation_tools.trusted_aggregate(updates, result))

    def test_flag_count_mismatch(self) -> None:
        with self.assertRaisesRegex(expected_exception=ProtocolError, expected_regex=r"^Got 1 flags for 2 updates\.$"):
            aggregation_tools.trusted_aggregate(make_updates([np.zeros(3), np.zeros(3)]), no_flags(1))

    def test_order_independent(self) -> None:
        rng = np.random.default_rng(3)
        updates = make_updates([rng.normal(size=5) for _ in range(6)])
        forward = aggregation_tools.trusted_aggregate(updates, no_flags(6))
        backward = aggregation_tools.trusted_aggregate(updates[::-1], no_flags(6))
        assert forward is not None and backward is not None
        np.testing.assert_array_equal(forward, backward)


class ServerAggregateTestCase(TestCase):
    def test_two_level_mean_equals_flat_mean(self) -> None:
        rng = np.random.default_rng(5)
        payloads = [rng.normal(size=8) for _ in range(12)]
        updates = make_updates(payloads)
        partition = aggregation_tools.assign_clients(12, 4, seed=9)
        aggregates = []
        for node_id, clients in enumerate(partition):
            node_updates = [updates[client] for client in clients]
            aggregates.append(NodeAggregate(node_id=node_id, payload=aggregation_tools.trusted_aggregate(node_updates, no_flags(len(node_updates)))))
        global_block = aggregation_tools.server_aggregate(aggregates)
        assert global_block is not None
        np.testing.assert_allclose(aggregation_tools.direct_aggregate(updates), global_block, rtol=0, atol=1e-12)

    def test_skips_withheld_nodes(self) -> None:
        aggregates = [
            NodeAggregate(node_id=0, payload=np.zeros(2)),
            NodeAggregate(node_id=1, payload=None),
            NodeAggregate(node_id=2, payload=np.full(2, 3.0)),
        ]
        global_block = aggregation_tools.server_aggregate(aggregates)
        assert global_block is not None
        np.testing.assert_array_equal(np.full(2, 1.5), global_block)

    def test_nothing_delivered(self) -> None:
        with self.assertLogs("tiered_fedrec.tools.aggregation_tools", level="WARNING") as logs:
            self.assertIsNone(aggregation_tools.server_aggregate([NodeAggregate(node_id=0, payload=None)]))
        self.assertEqual(
            ["WARNING:tiered_fedrec.tools.aggregation_tools:No trusted node delivered an aggregate, skipping the server update."],
            logs.output,
        )

    def test_direct_empty(self) -> None:
        with self.assertRaisesRegex(expected_exception=ProtocolError, expected_regex=r"^Cannot aggregate an empty list of updates\.$"):
            aggregation_tools.direct_aggregate([])


class BlendUpdateTestCase(TestCase):
    def test_contraction(self) -> None:
        rng = np.random.default_rng(2)
        for beta in [0.1, 0.5, 0.9]:
            theta, w_s = rng.normal(size=50), rng.normal(size=50)
            blended = aggregation_tools.blend_update(theta, w_s, beta)
            expected = (1 - beta) * np.linalg.norm(theta - w_s)
            with self.subTest(beta=beta):
                self.assertLess(abs(np.linalg.norm(blended - w_s) - expected) / expected, 1e-12)

    def test_fixed_point(self) -> None:
        w_s = np.arange(4, dtype=np.float64)
        np.testing.assert_allclose(w_s, aggregation_tools.blend_update(w_s.copy(), w_s, 0.3), rtol=0, atol=1e-15)

    def test_invalid(self) -> None:
        for beta in [0.0, 1.0, -0.5]:
            with self.subTest(beta=beta), self.assertRaisesRegex(expected_exception=ConfigError, expected_regex=r"^federation\.beta: must be "):
                aggregation_tools.blend_update(np.zeros(2), np.zeros(2), beta)
        with self.assertRaisesRegex(expected_exception=ShapeError, expected_regex=r"^Shape mismatch for blend operands: \(2,\) != \(3,\)$"):
            aggregation_tools.blend_update(np.zeros(2), np.zeros(3), 0.5)
