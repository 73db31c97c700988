# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

import math
from unittest import TestCase

import numpy as np

from tiered_fedrec.tools import adversary_tools
from tiered_fedrec.tools.adversary_tools import AttackConfig, FailureScenario, ResilienceReport
from tiered_fedrec.tools.aggregation_tools import ParameterUpdate
from tiered_fedrec.tools.gnn_tools import EmbeddingState
from tiered_fedrec.tools.graph_tools import split_dataset
from tiered_fedrec.tools.metric_tools import evaluate, expected_random_hit_rate
from tiered_fedrec.utils.validation_utils import ConfigError, ShapeError


class AttackConfigTestCase(TestCase):
    def test_validate(self) -> None:
        AttackConfig().validate()
        with self.assertRaisesRegex(
                expected_exception=ConfigError,
                expected_regex=(
                    r"^attack\.malicious_fraction: must be <= 1\.0, got 1\.5; "
                    r"attack\.kind: must be one of \['gaussian-noise', 'gradient-poison'\], got 'flip'; "
                    r"attack\.trials: must be >= 1, got 0$"
                ),
        ):
            AttackConfig(malicious_fraction=1.5, kind="flip", trials=0).validate()  # type: ignore[arg-type]


class FailureScenarioTestCase(TestCase):
    def test_select_nodes(self) -> None:
        scenario = FailureScenario(failed_node_count=3, compromised_node_count=2, seed=5)
        failed, compromised = scenario.select_nodes(10)
        self.assertEqual(3, len(failed))
        self.assertEqual(2, len(compromised))
        self.assertFalse(failed & compromised)
        self.assertTrue(all(0 <= node < 10 for node in failed | compromised))
        self.assertEqual((failed, compromised), scenario.select_nodes(10))

    def test_nothing_selected(self) -> None:
        self.assertEqual((frozenset(), frozenset()), FailureScenario().select_nodes(4))

    def test_too_many_nodes(self) -> None:
        with self.assertRaisesRegex(
                expected_exception=ConfigError,
                expected_regex=r"^failure\.failed_node_count \+ failure\.compromised_node_count: must be <= 3, got 4$",
        ):
            FailureScenario(failed_node_count=2, compromised_node_count=2).select_nodes(3)


class ResilienceReportTestCase(TestCase):
    def test_properties(self) -> None:
        report = ResilienceReport(
            direct_damage=[2.0, 4.0, 6.0],
            trusted_damage=[0.5, 0.5, 8.0],
            detection_rate=0.9,
            false_positive_rate=0.05,
        )
        self.assertEqual(4.0, report.direct_damage_mean)
        self.assertEqual(3.0, report.server_damage_mean)
        self.assertAlmostEqual(math.sqrt(8 / 3), report.direct_damage_std)
        self.assertEqual(0.25, report.protection_rate)
        self.assertEqual(2, report.trusted_wins)

        data = report.to_dict()
        self.assertEqual(3, data["trials"])
        self.assertEqual(0.25, data["protection_rate"])
        self.assertEqual([2.0, 4.0, 6.0], data["direct_damage"])
        self.assertIsNone(data["containment_rate"])

    def test_without_attackers(self) -> None:
        report = ResilienceReport(direct_damage=[1.0], trusted_damage=[1.0], detection_rate=None, false_positive_rate=0.0)
        self.assertIsNone(report.protection_rate)

    def test_without_direct_damage(self) -> None:
        report = ResilienceReport(direct_damage=[0.0], trusted_damage=[0.0], detection_rate=1.0, false_positive_rate=0.0)
        self.assertIsNone(report.protection_rate)

    def test_empty(self) -> None:
        report = ResilienceReport(direct_damage=[], trusted_damage=[], detection_rate=None, false_positive_rate=None)
        self.assertTrue(math.isnan(report.server_damage_mean))
        self.assertIsNone(report.protection_rate)


class SyntheticDatasetTestCase(TestCase):
    def test_structure(self) -> None:
        graph = adversary_tools.make_synthetic_dataset(200, 300, 8, 20, seed=2025)
        self.assertEqual(200, graph.num_users)
        self.assertEqual(300, graph.num_items)
        self.assertTrue(all(len(items) == 20 for items in graph.adjacency))

        again = adversary_tools.make_synthetic_dataset(200, 300, 8, 20, seed=2025)
        self.assertEqual(graph.adjacency, again.adjacency)

    def test_top_items_without_noise(self) -> None:
        graph = adversary_tools.make_synthetic_dataset(10, 30, 3, 5, seed=1, noise_fraction=0.0)
        user_factors, item_factors = adversary_tools.planted_factors(10, 30, 3, seed=1)
        scores = user_factors @ item_factors.T
        for user in range(10):
            expected = sorted(int(item) for item in np.argsort(-scores[user], kind="stable")[:5])
            self.assertEqual(tuple(expected), graph.neighbors(user))

    def test_planted_model_beats_random(self) -> None:
        graph = adversary_tools.make_synthetic_dataset(200, 300, 8, 20, seed=2025)
        split = split_dataset(graph, seed=2025)
        user_factors, item_factors = adversary_tools.planted_factors(200, 300, 8, seed=2025)
        metrics = evaluate(EmbeddingState(user_emb=user_factors, item_emb=item_factors), split, k=10)
        # 14 train edges and 4 test edges per user.
        baseline = expected_random_hit_rate(300 - 14, 4, 10)
        self.assertGreater(metrics.hr_at_k, 0.8)
        self.assertGreater(metrics.hr_at_k, 3 * baseline)

    def test_invalid_parameters(self) -> None:
        with self.assertRaisesRegex(
                expected_exception=ConfigError,
                expected_regex=(
                    r"^dataset\.latent_rank: must be <= 10, got 20; "
                    r"dataset\.interactions_per_user: must be <= 9, got 10$"
                ),
        ):
            adversary_tools.make_synthetic_dataset(20, 10, 20, 10, seed=1)


class CorruptionTestCase(TestCase):
    def test_select_malicious_clients(self) -> None:
        malicious = adversary_tools.select_malicious_clients(200, 0.3, np.random.default_rng(1))
        self.assertEqual(60, len(malicious))
        self.assertTrue(all(0 <= client < 200 for client in malicious))
        self.assertEqual(frozenset(), adversary_tools.select_malicious_clients(200, 0.0, np.random.default_rng(1)))

    def test_gradient_poison(self) -> None:
        update = ParameterUpdate(client_id=3, payload=np.array([1.0, -2.0, 0.5]), round_index=4)
        corrupted = adversary_tools.corrupt_update(update, AttackConfig(kind="gradient-poison"), np.random.default_rng(1))
        np.testing.assert_array_equal(np.array([-1.0, 2.0, -0.5]), corrupted.payload)
        self.assertEqual((3, 4), (corrupted.client_id, corrupted.round_index))
        np.testing.assert_array_equal(np.array([1.0, -2.0, 0.5]), update.payload)

    def test_gaussian_noise(self) -> None:
        update = ParameterUpdate(client_id=0, payload=np.zeros(100_000), round_index=0)
        corrupted = adversary_tools.corrupt_update(update, AttackConfig(sigma_attack=2.0), np.random.default_rng(1))
        self.assertAlmostEqual(2.0, float(corrupted.payload.std()), delta=0.05)
        np.testing.assert_array_equal(np.zeros(100_000), update.payload)

    def test_corrupt_aggregate(self) -> None:
        corrupted = adversary_tools.corrupt_aggregate(np.ones(50_000), 0.5, np.random.default_rng(2))
        self.assertAlmostEqual(0.5, float(corrupted.std()), delta=0.02)
        self.assertAlmostEqual(1.0, float(corrupted.mean()), delta=0.02)

    def test_measure_server_damage(self) -> None:
        self.assertEqual(5.0, adversary_tools.measure_server_damage(np.zeros(2), np.array([3.0, 4.0])))
        with self.assertRaisesRegex(expected_exception=ShapeError, expected_regex=r"^Shape mismatch for global blocks: "):
            adversary_tools.measure_server_damage(np.zeros(2), np.zeros(3))


class CalibrateAttackSigmaTestCase(TestCase):
    def test_spread(self) -> None:
        payloads = [np.array([1.0, 1.0]), np.array([-1.0, -1.0])]
        # Mean zero, so the drift vanishes and the spread of 1 decides.
        self.assertEqual(10.0, adversary_tools.calibrate_attack_sigma(payloads, np.zeros(2), 10, 3, multiplier=10.0))

    def test_drift(self) -> None:
        payloads = [np.full(4, 0.5), np.full(4, 0.5)]
        sigma = adversary_tools.calibrate_attack_sigma(payloads, np.zeros(4), num_clients=8, num_malicious=2, multiplier=10.0)
        # Drift 1, spread 0.
        self.assertAlmostEqual(10.0 * 1.0 * 8 / (2.0 * math.sqrt(2)), sigma)

    def test_direct_damage_exceeds_drift(self) -> None:
        rng = np.random.default_rng(3)
        reference = np.zeros(500)
        honest = [reference + 0.01 + rng.normal(0.0, 0.001, size=500) for _ in range(14)]
        sigma = adversary_tools.calibrate_attack_sigma(honest, reference, num_clients=20, num_malicious=6)
        malicious = [payload + rng.normal(0.0, sigma, size=500) for payload in honest[:6]]
        drift = float(np.linalg.norm(np.mean(honest, axis=0) - reference))
        damage = float(np.linalg.norm(np.mean(honest + malicious, axis=0) - reference))
        self.assertGreater(damage, 5 * drift)

    def test_without_honest_uploads(self) -> None:
        with self.assertRaisesRegex(
                expected_exception=ConfigError, expected_regex=r"^attack\.sigma_attack: cannot calibrate without honest uploads$"
        ):
            adversary_tools.calibrate_attack_sigma([], np.zeros(2), 1, 1)


class ContainmentRateTestCase(TestCase):
    def test_containment_rate(self) -> None:
        self.assertIsNone(adversary_tools.containment_rate(0.0, []))
        self.assertIsNone(adversary_tools.containment_rate(0.0, [0.0]))
        self.assertEqual(0.75, adversary_tools.containment_rate(1.0, [2.0, 2.0]))
        self.assertEqual(0.0, adversary_tools.containment_rate(5.0, [2.0]))
