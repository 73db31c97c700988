# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
The three-tier round loop: client training, trusted node checks and partial
means, the server mean and the distribution back to the clients.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Collection
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from joblib import Parallel, delayed  # type: ignore[import-untyped]

from tiered_fedrec.config import ExperimentConfig, load_dataset
from tiered_fedrec.tools.adversary_tools import (
    calibrate_attack_sigma,
    corrupt_aggregate,
    corrupt_update,
    measure_server_damage,
)
from tiered_fedrec.tools.aggregation_tools import (
    AnomalyResult,
    assign_clients,
    blend_update,
    check_anomaly,
    check_partition,
    direct_aggregate,
    NodeAggregate,
    ParameterUpdate,
    reassign_clients,
    server_aggregate,
    trusted_aggregate,
)
from tiered_fedrec.tools.gnn_tools import EmbeddingState, init_embeddings, OpCounter, train_local
from tiered_fedrec.tools.graph_tools import DatasetSplit, LocalGraph, perturb_graph, split_dataset
from tiered_fedrec.tools.metric_tools import evaluate, RankingMetrics, SplitNameType
from tiered_fedrec.tools.privacy_tools import add_laplace_noise
from tiered_fedrec.utils.path_utils import get_client_checkpoints
from tiered_fedrec.utils.serialization_utils import (
    read_checkpoint,
    write_checkpoint,
    write_json,
    write_json_lines,
    write_split_manifest,
)
from tiered_fedrec.utils.validation_utils import EmptyEvaluationError, FloatArray, ProtocolError

logger = logging.getLogger(__name__)
del logging


STREAM_PERTURBATION = 0
STREAM_TRAINING = 1
STREAM_NOISE = 2
STREAM_ATTACK = 3
STREAM_PARTICIPATION = 4
STREAM_COMPROMISE = 5


def stream(seed: int, identifier: int, round_index: int, purpose: int) -> np.random.Generator:
    """
    Get the random stream of one party for one purpose in one round.

    Streams only depend on their key, never on the scheduling order.
    """
    return np.random.default_rng([seed, identifier, round_index, purpose])


class ClientRole(str, Enum):
    HONEST = "honest"
    MALICIOUS = "malicious"


class NodeStatus(str, Enum):
    HEALTHY = "healthy"
    FAILED = "failed"
    COMPROMISED = "compromised"


@dataclass
class ClientState:
    """
    One client holding the interactions of a single user.
    """

    client_id: int
    """
    The client ID, equal to the user ID.
    """

    graph: LocalGraph
    """
    The true local training graph.
    """

    state: EmbeddingState
    """
    The private user row and the local copy Θ_i of the shared block.
    """

    node_id: int
    """
    The trusted node the client uploads to.
    """

    role: ClientRole = ClientRole.HONEST

    perturbed: LocalGraph | None = None
    """
    The perturbed graph of the latest round trained.
    """

    consecutive_flags: int = 0
    banned: bool = False
    last_upload_round: int = -1


@dataclass
class TrustedNodeState:
    """
    One intermediate aggregator.
    """

    node_id: int
    client_ids: list[int]
    mu: float
    nu: float
    status: NodeStatus = NodeStatus.HEALTHY
    last_aggregate: FloatArray | None = None
    isolated: list[int] = field(default_factory=list)
    """
    The clients flagged in the latest round.
    """


@dataclass(frozen=True)
class ServerRecord:
    """
    What the server remembers about one round. Contains node IDs only.
    """

    round_index: int
    participating_nodes: tuple[int, ...]
    withheld_nodes: tuple[int, ...]


@dataclass
class ServerState:
    """
    The global shared block and the round counter.
    """

    global_block: FloatArray
    """
    W_s as an M x k matrix.
    """

    max_rounds: int
    beta: float
    round_index: int = 0
    history: list[ServerRecord] = field(default_factory=list)


@dataclass
class RoundReport:
    """
    The per-round line of the report stream.
    """

    round: int
    mean_loss: float
    hr: float | None
    ndcg: float | None
    flagged_clients: list[int]
    withheld_nodes: list[int]
    user_ops: int
    item_ops: int
    server_damage: float
    failed_nodes: list[int] = field(default_factory=list)
    banned_clients: list[int] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RoundOutcome:
    report: RoundReport
    uploads: list[ParameterUpdate]
    """
    The uploads as received by the trusted nodes, after noise and attacks.
    """

    clean_payloads: dict[int, FloatArray]
    """
    The noised uploads of all participants before any corruption.
    """

    anomaly_results: dict[int, AnomalyResult]
    node_aggregates: list[NodeAggregate]
    global_before: FloatArray
    global_after: FloatArray
    server_updated: bool
    sigma_attack: float
    corrupt_deltas: list[FloatArray]
    check_seconds: list[float]
    counter: OpCounter


@dataclass
class Federation:
    clients: list[ClientState]
    nodes: list[TrustedNodeState]
    server: ServerState
    split: DatasetSplit
    config: ExperimentConfig
    initial: EmbeddingState
    """
    The initialized global model, user rows included.
    """


@dataclass(frozen=True)
class _ClientResult:
    client_id: int
    state: EmbeddingState
    perturbed: LocalGraph
    loss: float
    counter: OpCounter
    payload: FloatArray


def _train_client(client: ClientState, config: ExperimentConfig, round_index: int) -> _ClientResult:
    seed = config.seed
    perturbed = perturb_graph(
        client.graph,
        config.privacy.perturbation(seed),
        stream(seed, client.client_id, round_index, STREAM_PERTURBATION),
    )
    counter = OpCounter()
    state, loss = train_local(
        graph=perturbed,
        state=client.state,
        fastgnn=config.fastgnn,
        training=config.training,
        rng=stream(seed, client.client_id, round_index, STREAM_TRAINING),
        start_epoch=round_index * config.training.local_epochs_per_round,
        counter=counter,
    )
    payload = add_laplace_noise(
        state.item_emb.ravel(),
        config.privacy.ldp(seed),
        stream(seed, client.client_id, round_index, STREAM_NOISE),
    )
    return _ClientResult(
        client_id=client.client_id, state=state, perturbed=perturbed, loss=loss, counter=counter, payload=payload,
    )


def init_federation(
        config: ExperimentConfig,
        split: DatasetSplit,
        malicious_clients: Collection[int] = (),
        failed_nodes: Collection[int] = (),
        compromised_nodes: Collection[int] = (),
) -> Federation:
    """
    Set up all parties: one client per user, balanced node groups and the initial global block.

    :param config: The validated configuration.
    :param split: The dataset split whose training graph the clients hold.
    :param malicious_clients: The clients corrupting their uploads.
    :param failed_nodes: The nodes producing no aggregate.
    :param compromised_nodes: The nodes corrupting their aggregate.
    :return: The federation before the first round.
    """
    graph = split.train
    federation_config = config.federation
    partition = assign_clients(graph.num_users, federation_config.trusted_nodes, config.seed)
    if failed_nodes and federation_config.reassign_on_failure:
        partition = reassign_clients(partition, failed_nodes)
    check_partition(partition, graph.num_users)

    nodes = []
    node_of_client = {}
    for node_id, client_ids in enumerate(partition):
        status = NodeStatus.HEALTHY
        if node_id in failed_nodes:
            status = NodeStatus.FAILED
        elif node_id in compromised_nodes:
            status = NodeStatus.COMPROMISED
        nodes.append(TrustedNodeState(
            node_id=node_id, client_ids=client_ids, mu=federation_config.mu, nu=federation_config.nu, status=status,
        ))
        node_of_client.update(dict.fromkeys(client_ids, node_id))

    initial = init_embeddings(graph.num_users, graph.num_items, config.fastgnn.embedding_dim, config.seed)
    clients = [
        ClientState(
            client_id=user,
            graph=graph.local_view([user]),
            state=EmbeddingState(user_emb=initial.user_emb[user:user + 1].copy(), item_emb=initial.item_emb.copy()),
            node_id=node_of_client[user],
            role=ClientRole.MALICIOUS if user in malicious_clients else ClientRole.HONEST,
        )
        for user in range(graph.num_users)
    ]
    server = ServerState(
        global_block=initial.item_emb.copy(), max_rounds=federation_config.rounds, beta=federation_config.beta,
    )
    return Federation(clients=clients, nodes=nodes, server=server, split=split, config=config, initial=initial)


def _select_participants(federation: Federation, round_index: int) -> list[ClientState]:
    failed = {node.node_id for node in federation.nodes if node.status == NodeStatus.FAILED}
    eligible = [
        client for client in federation.clients
        if not client.banned and (client.node_id not in failed or federation.config.federation.architecture == "direct")
    ]
    participation = federation.config.federation.participation
    if participation >= 1.0 or not eligible:
        return eligible
    count = max(1, int(math.floor(len(eligible) * participation + 0.5)))
    rng = stream(federation.config.seed, 0, round_index, STREAM_PARTICIPATION)
    chosen = sorted(int(index) for index in rng.choice(len(eligible), size=count, replace=False))
    return [eligible[index] for index in chosen]


def _update_bans(federation: Federation, participants: list[ClientState], flagged: set[int]) -> None:
    ban_after = federation.config.federation.ban_after
    for client in participants:
        if client.client_id in flagged:
            client.consecutive_flags += 1
        else:
            client.consecutive_flags = 0
        if ban_after and not client.banned and client.consecutive_flags >= ban_after:
            client.banned = True
            logger.warning("Banning client %d after %d consecutive flags.", client.client_id, client.consecutive_flags)


def run_round(federation: Federation, jobs: int | None = None) -> RoundOutcome:
    """
    Execute one round of the protocol.

    Participating clients perturb their graph, train locally, add Laplace
    noise and upload to their trusted node. Each node checks the uploads and
    forwards the mean of the unflagged ones. The server averages the node
    means and every participating client blends the result into its local
    copy. Without trusted nodes, the server averages all uploads directly.

    :param federation: The parties, updated in place.
    :param jobs: The number of parallel training workers, from the configuration if unset.
    :return: The report and the intermediate values of the round.
    """
    config = federation.config
    server = federation.server
    if server.round_index >= server.max_rounds:
        raise ProtocolError(f"Round {server.round_index} exceeds the maximum of {server.max_rounds} rounds.")
    round_index = server.round_index
    seed = config.seed
    shape = server.global_block.shape
    reference = server.global_block.ravel()

    participants = _select_participants(federation, round_index)
    for client in participants:
        if client.last_upload_round == round_index:
            raise ProtocolError(f"Client {client.client_id} already uploaded in round {round_index}.")
    results = Parallel(n_jobs=jobs or config.federation.jobs)(
        delayed(_train_client)(client, config, round_index) for client in participants
    )
    results_by_client: dict[int, _ClientResult] = {result.client_id: result for result in results}

    # Corrupt the malicious uploads.
    clean_payloads = {client_id: result.payload for client_id, result in sorted(results_by_client.items())}
    malicious = [client for client in participants if client.role == ClientRole.MALICIOUS]
    compromised = [node for node in federation.nodes if node.status == NodeStatus.COMPROMISED]
    attack = config.attack
    if (malicious or compromised) and not attack.sigma_attack:
        malicious_ids = {client.client_id for client in malicious}
        honest = [payload for client_id, payload in clean_payloads.items() if client_id not in malicious_ids]
        attack = replace(attack, sigma_attack=calibrate_attack_sigma(
            honest or list(clean_payloads.values()),
            reference,
            num_clients=len(participants),
            num_malicious=len(malicious),
            multiplier=attack.sigma_multiplier,
        ))
    uploads = []
    for client in participants:
        update = ParameterUpdate(client_id=client.client_id, payload=clean_payloads[client.client_id], round_index=round_index)
        if client.role == ClientRole.MALICIOUS:
            update = corrupt_update(update, attack, stream(seed, client.client_id, round_index, STREAM_ATTACK))
        uploads.append(update)
        client.last_upload_round = round_index

    # Trusted node tier.
    anomaly_results: dict[int, AnomalyResult] = {}
    node_aggregates: list[NodeAggregate] = []
    flagged: set[int] = set()
    withheld: list[int] = []
    corrupt_deltas: list[FloatArray] = []
    check_seconds: list[float] = []
    if config.federation.architecture == "trusted":
        uploads_by_node: dict[int, list[ParameterUpdate]] = {}
        for client, update in zip(participants, uploads):
            uploads_by_node.setdefault(client.node_id, []).append(update)
        for node in federation.nodes:
            node.isolated = []
            node_uploads = uploads_by_node.get(node.node_id, [])
            if node.status == NodeStatus.FAILED or not node_uploads:
                node.last_aggregate = None
                node_aggregates.append(NodeAggregate(node_id=node.node_id, payload=None))
                continue
            if config.federation.anomaly_detection:
                start = time.perf_counter()
                result = check_anomaly(node_uploads, reference, node.mu, node.nu)
                check_seconds.append(time.perf_counter() - start)
            else:
                result = AnomalyResult(
                    distances=np.zeros(len(node_uploads)),
                    z_scores=np.zeros(len(node_uploads)),
                    flags=(False,) * len(node_uploads),
                    node_trips=False,
                )
            anomaly_results[node.node_id] = result
            node.isolated = sorted(update.client_id for update, flag in zip(node_uploads, result.flags) if flag)
            flagged.update(node.isolated)
            payload = trusted_aggregate(node_uploads, result)
            if payload is None:
                withheld.append(node.node_id)
                logger.warning(
                    "Trusted node %d withholds round %d with %d of %d uploads flagged.",
                    node.node_id, round_index, len(node.isolated), len(node_uploads),
                )
            elif node.status == NodeStatus.COMPROMISED:
                corrupted = corrupt_aggregate(payload, attack.sigma_attack, stream(seed, node.node_id, round_index, STREAM_COMPROMISE))
                corrupt_deltas.append(corrupted - payload)
                payload = corrupted
            node.last_aggregate = payload
            node_aggregates.append(NodeAggregate(node_id=node.node_id, payload=payload))
        new_global = server_aggregate(node_aggregates)
    else:
        new_global = direct_aggregate(uploads) if uploads else None
        if new_global is None:
            logger.warning("No client uploaded in round %d, skipping the server update.", round_index)

    _update_bans(federation, participants, flagged)

    # Server and distribution.
    global_before = server.global_block
    if new_global is not None:
        server.global_block = new_global.reshape(shape)
    for client in participants:
        result = results_by_client[client.client_id]
        client.state = result.state.with_items(blend_update(result.state.item_emb, server.global_block, server.beta))
        client.perturbed = result.perturbed

    server.history.append(ServerRecord(
        round_index=round_index,
        participating_nodes=tuple(aggregate.node_id for aggregate in node_aggregates if aggregate.payload is not None),
        withheld_nodes=tuple(withheld),
    ))
    server.round_index += 1

    counter = OpCounter()
    for client_id in sorted(results_by_client):
        counter = counter.merge(results_by_client[client_id].counter)
    losses = [results_by_client[client_id].loss for client_id in sorted(results_by_client)]
    finite_losses = [loss for loss in losses if math.isfinite(loss)]
    report = RoundReport(
        round=round_index,
        mean_loss=math.fsum(finite_losses) / len(finite_losses) if finite_losses else math.nan,
        hr=None,
        ndcg=None,
        flagged_clients=sorted(flagged),
        withheld_nodes=withheld,
        user_ops=counter.user_update_ops,
        item_ops=counter.item_update_ops,
        server_damage=measure_server_damage(global_before, server.global_block),
        failed_nodes=[node.node_id for node in federation.nodes if node.status == NodeStatus.FAILED],
        banned_clients=sorted(client.client_id for client in federation.clients if client.banned),
    )
    return RoundOutcome(
        report=report,
        uploads=uploads,
        clean_payloads=clean_payloads,
        anomaly_results=anomaly_results,
        node_aggregates=node_aggregates,
        global_before=global_before,
        global_after=server.global_block,
        server_updated=new_global is not None,
        sigma_attack=attack.sigma_attack,
        corrupt_deltas=corrupt_deltas,
        check_seconds=check_seconds,
        counter=counter,
    )


def evaluate_federation(federation: Federation, split_name: SplitNameType = "test") -> RankingMetrics:
    """
    Score the local models of all reachable clients.

    Clients below a failed node are not evaluated. The false edges of the
    latest perturbed graph are excluded like the train edges.

    :param federation: The federation to evaluate.
    :param split_name: Whether to use the test or the validation edges.
    :return: The macro-averaged metrics.
    """
    failed = {node.node_id for node in federation.nodes if node.status == NodeStatus.FAILED}
    reachable = [
        client for client in federation.clients
        if client.node_id not in failed or federation.config.federation.architecture == "direct"
    ]
    return evaluate(
        {client.client_id: client.state for client in reachable},
        federation.split,
        k=federation.config.federation.top_k,
        exclusions={client.client_id: client.perturbed.added[0] for client in reachable if client.perturbed is not None},
        split_name=split_name,
        jobs=federation.config.federation.jobs,
    )


@dataclass
class FederationResult:
    history: list[RoundReport]
    federation: Federation
    final_metrics: RankingMetrics | None
    outcomes: list[RoundOutcome] = field(default_factory=list)


def write_artifacts(result: FederationResult, output_directory: Path) -> None:
    """
    Write all artifacts of a finished run below the run directory.

    :param result: The finished run.
    :param output_directory: The run directory.
    """
    federation = result.federation
    write_json_lines((report.to_dict() for report in result.history), output_directory / "rounds.jsonl")
    checkpoints = output_directory / "checkpoints"
    k = federation.server.global_block.shape[1]
    write_checkpoint(
        EmbeddingState(user_emb=np.zeros((0, k)), item_emb=federation.server.global_block), checkpoints / "global.bin",
    )
    for client in federation.clients:
        write_checkpoint(client.state, checkpoints / f"client_{client.client_id}.bin")
    summary: dict[str, Any] = {
        "rounds": len(result.history),
        "final_metrics": result.final_metrics.to_dict() if result.final_metrics else None,
        "final_loss": result.history[-1].mean_loss if result.history else None,
        "user_ops": sum(report.user_ops for report in result.history),
        "item_ops": sum(report.item_ops for report in result.history),
    }
    write_json(summary, output_directory / "summary.json")
    write_split_manifest(federation.split, output_directory / "split.json")
    logger.info("Wrote checkpoints to %s.", checkpoints)


def run_federation(
        config: ExperimentConfig,
        split: DatasetSplit | None = None,
        output_directory: Path | None = None,
        malicious_clients: Collection[int] = (),
        keep_outcomes: bool = False,
) -> FederationResult:
    """
    Run the configured number of rounds.

    Failed and compromised nodes are drawn from the failure scenario of the
    configuration. Evaluation happens every `eval_interval` rounds and after
    the final round.

    :param config: The validated configuration.
    :param split: The dataset split, loaded and split from the configuration if unset.
    :param output_directory: Where to write reports and checkpoints, nothing is written if unset.
    :param malicious_clients: The clients corrupting their uploads.
    :param keep_outcomes: Whether to keep the intermediate values of every round.
    :return: The report history and the final state.
    """
    if split is None:
        split = split_dataset(load_dataset(config), config.dataset.split_ratios, config.seed)
    failed, compromised = config.failure.select_nodes(config.federation.trusted_nodes)
    federation = init_federation(
        config, split, malicious_clients=malicious_clients, failed_nodes=failed, compromised_nodes=compromised,
    )

    history = []
    outcomes = []
    final_metrics = None
    rounds = config.federation.rounds
    for round_index in range(rounds):
        outcome = run_round(federation)
        report = outcome.report
        if (round_index + 1) % config.federation.eval_interval == 0 or round_index == rounds - 1:
            try:
                final_metrics = evaluate_federation(federation)
            except EmptyEvaluationError as exception:
                final_metrics = None
                logger.warning("Round %d: loss %.6f, evaluation skipped: %s", round_index, report.mean_loss, exception)
            else:
                report.hr, report.ndcg = final_metrics.hr_at_k, final_metrics.ndcg_at_k
                logger.info(
                    "Round %d: loss %.6f, HR@%d %.4f, NDCG@%d %.4f.",
                    round_index, report.mean_loss, final_metrics.k, report.hr, final_metrics.k, report.ndcg,
                )
        else:
            logger.info("Round %d: loss %.6f.", round_index, report.mean_loss)
        history.append(report)
        if keep_outcomes:
            outcomes.append(outcome)

    result = FederationResult(history=history, federation=federation, final_metrics=final_metrics, outcomes=outcomes)
    if output_directory is not None:
        write_artifacts(result, output_directory)
    return result


def restore_federation(config: ExperimentConfig, checkpoint_directory: Path) -> Federation:
    """
    Rebuild a finished federation from its configuration and checkpoints.

    The false edges of the final round are drawn again from their streams.

    :param config: The configuration of the run, usually loaded from its manifest.
    :param checkpoint_directory: The directory holding `global.bin` and the client checkpoints.
    :return: The federation after its last round.
    """
    split = split_dataset(load_dataset(config), config.dataset.split_ratios, config.seed)
    failed, compromised = config.failure.select_nodes(config.federation.trusted_nodes)
    federation = init_federation(config, split, failed_nodes=failed, compromised_nodes=compromised)
    checkpoints = get_client_checkpoints(checkpoint_directory)
    last_round = config.federation.rounds - 1
    for client in federation.clients:
        path = checkpoints.get(client.client_id)
        if path is None:
            raise ProtocolError(f"Missing checkpoint for client {client.client_id} in {checkpoint_directory}.")
        client.state = read_checkpoint(path)
        if last_round >= 0:
            client.perturbed = perturb_graph(
                client.graph,
                config.privacy.perturbation(config.seed),
                stream(config.seed, client.client_id, last_round, STREAM_PERTURBATION),
            )
    federation.server.global_block = read_checkpoint(checkpoint_directory / "global.bin").item_emb
    federation.server.round_index = config.federation.rounds
    return federation
