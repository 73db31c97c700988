# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Experiments on top of the round loop: attack resilience, node failures and
compromise, and one-dimensional parameter sweeps.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from joblib import Parallel, delayed  # type: ignore[import-untyped]

from tiered_fedrec.config import apply_overrides, ExperimentConfig, iter_keys, load_dataset
from tiered_fedrec.federation import init_federation, run_federation, run_round
from tiered_fedrec.tools.adversary_tools import (
    containment_rate,
    measure_server_damage,
    ResilienceReport,
    select_malicious_clients,
)
from tiered_fedrec.tools.aggregation_tools import direct_aggregate
from tiered_fedrec.tools.graph_tools import DatasetSplit, InteractionGraph, split_dataset
from tiered_fedrec.utils.validation_utils import ConfigError, FloatArray

logger = logging.getLogger(__name__)
del logging


SWEEP_ALIASES = {
    "lambda": "privacy.ldp_scale",
    "k": "fastgnn.embedding_dim",
    "T": "federation.trusted_nodes",
    "h": "fastgnn.item_update_multiplier",
    "p_pert": "privacy.perturbation_probability",
    "beta": "federation.beta",
}

SWEEP_COLUMNS = ["value", "hr", "ndcg", "final_loss", "item_ops", "user_ops", "wall_time"]


def load_split(config: ExperimentConfig, graph: InteractionGraph | None = None) -> DatasetSplit:
    if graph is None:
        graph = load_dataset(config)
    return split_dataset(graph, config.dataset.split_ratios, config.seed)


def trial_seed(seed: int, trial: int) -> int:
    """
    Derive the independent seed of one trial.
    """
    return int(np.random.default_rng([seed, trial]).integers(2**31))


@dataclass(frozen=True)
class TrialResult:
    trial: int
    direct_damage: float
    trusted_damage: float
    malicious_flagged: int
    malicious_total: int
    honest_flagged: int
    honest_total: int
    sigma_attack: float
    containment: float | None
    check_seconds: list[float]


def _server_shift(deltas: Sequence[FloatArray], participating: int) -> float:
    if not deltas or not participating:
        return 0.0
    return float(np.linalg.norm(np.sum(deltas, axis=0))) / participating


def run_attack_trial(config: ExperimentConfig, split: DatasetSplit, trial: int) -> TrialResult:
    """
    Run a single attacked round and compare both architectures on the same uploads.

    :param config: The validated configuration.
    :param split: The dataset split.
    :param trial: The trial index, deciding about the seeds.
    :return: The damages and detection counts of the trial.
    """
    seed = trial_seed(config.attack.seed, trial)
    trial_config = replace(
        config,
        seed=seed,
        federation=replace(config.federation, architecture="trusted", rounds=1),
        failure=replace(config.failure, failed_node_count=0, seed=seed),
    )
    num_clients = split.train.num_users
    malicious = select_malicious_clients(num_clients, config.attack.malicious_fraction, np.random.default_rng([seed, 1]))
    _, compromised = trial_config.failure.select_nodes(config.federation.trusted_nodes)
    federation = init_federation(trial_config, split, malicious_clients=malicious, compromised_nodes=compromised)
    outcome = run_round(federation)

    direct = direct_aggregate(outcome.uploads)
    flagged = set(outcome.report.flagged_clients)
    participants = [update.client_id for update in outcome.uploads]
    participating_nodes = sum(aggregate.payload is not None for aggregate in outcome.node_aggregates)
    return TrialResult(
        trial=trial,
        direct_damage=measure_server_damage(outcome.global_before.ravel(), direct),
        trusted_damage=outcome.report.server_damage,
        malicious_flagged=len(flagged & malicious),
        malicious_total=sum(client in malicious for client in participants),
        honest_flagged=len(flagged - malicious),
        honest_total=sum(client not in malicious for client in participants),
        sigma_attack=outcome.sigma_attack,
        containment=containment_rate(
            _server_shift(outcome.corrupt_deltas, participating_nodes),
            [float(np.linalg.norm(delta)) for delta in outcome.corrupt_deltas],
        ),
        check_seconds=outcome.check_seconds,
    )


def _rate(numerator: int, denominator: int) -> float | None:
    return numerator / denominator if denominator else None


def run_attack_experiment(
        config: ExperimentConfig,
        split: DatasetSplit | None = None,
        trials: int | None = None,
        jobs: int | None = None,
) -> ResilienceReport:
    """
    Measure the server damage with and without trusted nodes under attack.

    Both architectures aggregate the very same uploads of each trial, so
    the protection rate compares paired damages.

    :param config: The validated configuration.
    :param split: The dataset split, loaded from the configuration if unset.
    :param trials: The number of trials, from the attack configuration if unset.
    :param jobs: The number of parallel trials, from the configuration if unset.
    :return: The aggregated report.
    """
    trials = config.attack.trials if trials is None else trials
    if trials < 1:
        raise ConfigError(f"attack.trials: must be >= 1, got {trials}")
    split = split or load_split(config)
    sequential = replace(config, federation=replace(config.federation, jobs=1))
    results: list[TrialResult] = Parallel(n_jobs=jobs or config.federation.jobs)(
        delayed(run_attack_trial)(sequential, split, trial) for trial in range(trials)
    )
    results.sort(key=lambda result: result.trial)

    containments = [result.containment for result in results if result.containment is not None]
    report = ResilienceReport(
        direct_damage=[result.direct_damage for result in results],
        trusted_damage=[result.trusted_damage for result in results],
        detection_rate=_rate(sum(result.malicious_flagged for result in results), sum(result.malicious_total for result in results)),
        false_positive_rate=_rate(sum(result.honest_flagged for result in results), sum(result.honest_total for result in results)),
        containment_rate=float(np.mean(containments)) if containments else None,
        sigma_attack=float(np.mean([result.sigma_attack for result in results])),
        detection_latency_ms=[seconds * 1000 for result in results for seconds in result.check_seconds],
    )
    logger.info(
        "Attack over %d trials: damage %.4f direct vs %.4f trusted, protection %s.",
        trials, report.direct_damage_mean, report.server_damage_mean, report.protection_rate,
    )
    return report


def _scenario_row(config: ExperimentConfig, split: DatasetSplit, failed: int, compromised: int) -> dict[str, Any]:
    scenario_config = replace(
        config, failure=replace(config.failure, failed_node_count=failed, compromised_node_count=compromised),
    )
    result = run_federation(scenario_config, split=split, keep_outcomes=bool(compromised))
    metrics = result.final_metrics
    containments = []
    for outcome in result.outcomes:
        participating = sum(aggregate.payload is not None for aggregate in outcome.node_aggregates)
        rate = containment_rate(
            _server_shift(outcome.corrupt_deltas, participating),
            [float(np.linalg.norm(delta)) for delta in outcome.corrupt_deltas],
        )
        if rate is not None:
            containments.append(rate)
    return {
        "failed_nodes": failed,
        "compromised_nodes": compromised,
        "hr": metrics.hr_at_k if metrics else None,
        "ndcg": metrics.ndcg_at_k if metrics else None,
        "users_evaluated": metrics.users_evaluated if metrics else 0,
        "containment": float(np.mean(containments)) if containments else None,
    }


def run_failure_experiment(config: ExperimentConfig, split: DatasetSplit | None = None) -> list[dict[str, Any]]:
    """
    Train with 0 up to `failure.failed_node_count` failed nodes, plus the compromised-node variant.

    :param config: The validated configuration.
    :param split: The dataset split, loaded from the configuration if unset.
    :return: One row per scenario with the final metrics and, for compromised nodes, the containment.
    """
    scenario = config.failure
    scenario.validate(config.federation.trusted_nodes)
    split = split or load_split(config)
    rows = [_scenario_row(config, split, failed, 0) for failed in range(scenario.failed_node_count + 1)]
    if scenario.compromised_node_count:
        rows.append(_scenario_row(config, split, 0, scenario.compromised_node_count))
    baseline = rows[0]["ndcg"]
    for row in rows:
        row["relative_ndcg_drop"] = 1.0 - row["ndcg"] / baseline if baseline and row["ndcg"] is not None else None
    return rows


def resolve_axis(axis: str) -> str:
    """
    Map a sweep axis or alias to its dotted configuration key.

    :param axis: The alias or dotted key.
    :return: The dotted key.
    """
    key = SWEEP_ALIASES.get(axis, axis)
    valid = {name for name, _ in iter_keys()}
    if key not in valid:
        raise ConfigError(f"sweep.axis: unknown axis {axis!r}, valid axes: {', '.join([*SWEEP_ALIASES, *sorted(valid)])}")
    return key


def _sweep_point(config: ExperimentConfig, key: str, value: Any, output_directory: Path | None) -> dict[str, Any]:
    point_config = apply_overrides(config, {key: value})
    point_config.validate()
    start = time.perf_counter()
    result = run_federation(point_config, output_directory=output_directory)
    wall_time = time.perf_counter() - start
    metrics = result.final_metrics
    return {
        "value": value,
        "hr": metrics.hr_at_k if metrics else None,
        "ndcg": metrics.ndcg_at_k if metrics else None,
        "final_loss": result.history[-1].mean_loss if result.history else math.nan,
        "item_ops": sum(report.item_ops for report in result.history),
        "user_ops": sum(report.user_ops for report in result.history),
        "wall_time": wall_time,
    }


def run_sweep(
        config: ExperimentConfig,
        axis: str,
        values: Sequence[Any],
        output_directory: Path | None = None,
        jobs: int = 1,
) -> list[dict[str, Any]]:
    """
    Run one experiment per value of the axis, all sharing the base seed.

    :param config: The validated base configuration.
    :param axis: The alias or dotted key to vary.
    :param values: The values to use.
    :param output_directory: The parent of the isolated per-point directories, nothing is written if unset.
    :param jobs: The number of points to run in parallel.
    :return: One row per value.
    """
    key = resolve_axis(axis)
    return list(Parallel(n_jobs=jobs)(
        delayed(_sweep_point)(
            config, key, value, output_directory / f"{axis}={value}" if output_directory else None,
        )
        for value in values
    ))
