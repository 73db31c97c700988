# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, cast

from tiered_fedrec.constants import EXIT_CONFIG_ERROR, EXIT_RUNTIME_ERROR, EXIT_SUCCESS


def log_level_type(value: str | int) -> int:
    """
    Verify and convert a log level to an integer value.

    :param value: The value to validate/convert.
    :return: The corresponding integer value.
    """
    if isinstance(value, int):
        return value
    if value.isdigit():
        return int(value)
    return cast(int, getattr(logging, value.upper()))


def configure_logging(level: int) -> None:
    """
    Configure the logging for the application.

    :param level: The log level to use.
    """
    logging.basicConfig(level=level)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    from tiered_fedrec.config import iter_keys

    parser.add_argument(
        "--config",
        action="store",
        type=str,
        required=False,
        default=None,
        help="TOML configuration or manifest file to use.",
    )
    group = parser.add_argument_group("Configuration overrides")
    for key, default in iter_keys():
        group.add_argument(
            f"--{key}",
            dest=key,
            action="store",
            type=str,
            default=argparse.SUPPRESS,
            metavar=type(default).__name__.upper(),
            help=f"Override `{key}` (default: {default}).",
        )


def _overrides(arguments: argparse.Namespace) -> dict[str, Any]:
    from tiered_fedrec.config import iter_keys

    values = vars(arguments)
    return {key: values[key] for key, _ in iter_keys() if key in values}


def _prepare(arguments: argparse.Namespace, command: str) -> tuple[Any, Any, Path]:
    from tiered_fedrec import config as config_module
    from tiered_fedrec.utils.path_utils import resolve_output_directory

    config = config_module.load_config(arguments.config, _overrides(arguments))
    # Reject the run before the manifest exists.
    graph = config_module.load_dataset(config)
    config_module.check_dataset(config, graph)
    digest = config_module.input_hash(config)
    output_directory = resolve_output_directory(config.output_directory, name=f"{command}-{digest[:12]}")
    config_module.write_manifest(config, output_directory / "manifest.toml")
    return config, graph, output_directory


def cmd_run(arguments: argparse.Namespace) -> None:
    from tiered_fedrec.experiments import load_split
    from tiered_fedrec.federation import NodeStatus, run_federation
    from tiered_fedrec.utils.rendering_utils import render_dictionary

    config, graph, output_directory = _prepare(arguments, "run")
    result = run_federation(config, split=load_split(config, graph), output_directory=output_directory)
    federation = result.federation
    summary = {
        "output_directory": str(output_directory),
        "rounds": len(result.history),
        "final_loss": result.history[-1].mean_loss if result.history else None,
        **(result.final_metrics.to_dict() if result.final_metrics else {}),
        "failed_nodes": [node.node_id for node in federation.nodes if node.status == NodeStatus.FAILED],
        "banned_clients": [client.client_id for client in federation.clients if client.banned],
    }
    print(render_dictionary(
        summary,
        verbose_names_mapping={
            "output_directory": "Output directory",
            "rounds": "Rounds",
            "final_loss": "Final loss",
            "hr_at_k": "HR@K",
            "ndcg_at_k": "NDCG@K",
            "users_evaluated": "Users evaluated",
            "failed_nodes": "Failed nodes",
            "banned_clients": "Banned clients",
        },
        multi_value_keys={"failed_nodes", "banned_clients"},
    ))


def cmd_sweep(arguments: argparse.Namespace) -> None:
    from tiered_fedrec.experiments import run_sweep, SWEEP_COLUMNS
    from tiered_fedrec.utils.rendering_utils import render_table

    config, _, output_directory = _prepare(arguments, "sweep")
    values = [value.strip() for value in arguments.values.split(",") if value.strip()]
    rows = run_sweep(config, arguments.axis, values, output_directory=output_directory, jobs=arguments.jobs)
    table = render_table(rows, SWEEP_COLUMNS)
    (output_directory / "sweep.tsv").write_text(table, encoding="UTF-8")
    print(table, end="")


def cmd_attack(arguments: argparse.Namespace) -> None:
    from tiered_fedrec.experiments import load_split, run_attack_experiment, run_failure_experiment
    from tiered_fedrec.utils.rendering_utils import render_dictionary, render_table
    from tiered_fedrec.utils.serialization_utils import write_json

    config, graph, output_directory = _prepare(arguments, "attack")
    split = load_split(config, graph)
    report = run_attack_experiment(config, split=split)
    data = report.to_dict()
    architectures = ["direct", "trusted"] if arguments.architecture == "both" else [arguments.architecture]
    data["architectures"] = {
        "direct": {"damage_mean": report.direct_damage_mean, "damage_std": report.direct_damage_std, "damages": report.direct_damage},
        "trusted": {"damage_mean": report.server_damage_mean, "damage_std": report.server_damage_std, "damages": report.trusted_damage},
    }
    data["architectures"] = {name: data["architectures"][name] for name in architectures}
    write_json(data, output_directory / "resilience.json")

    summary = {
        "direct_damage": f"{report.direct_damage_mean:.4f} ± {report.direct_damage_std:.4f}",
        "trusted_damage": f"{report.server_damage_mean:.4f} ± {report.server_damage_std:.4f}",
        "protection_rate": report.protection_rate,
        "detection_rate": report.detection_rate,
        "false_positive_rate": report.false_positive_rate,
        "containment_rate": report.containment_rate,
    }
    names = {
        "direct_damage": "Direct damage",
        "trusted_damage": "Trusted damage",
        "protection_rate": "Protection rate",
        "detection_rate": "Detection rate",
        "false_positive_rate": "False positive rate",
        "containment_rate": "Containment rate",
    }
    if arguments.architecture == "direct":
        names = {"direct_damage": names["direct_damage"]}
    elif arguments.architecture == "trusted":
        del names["direct_damage"], names["protection_rate"]
    print(render_dictionary(summary, verbose_names_mapping=names))

    if not arguments.skip_failures:
        rows = run_failure_experiment(config, split=split)
        columns = ["failed_nodes", "compromised_nodes", "hr", "ndcg", "relative_ndcg_drop", "users_evaluated", "containment"]
        table = render_table(rows, columns)
        (output_directory / "failure.tsv").write_text(table, encoding="UTF-8")
        print(table, end="")


def cmd_eval(arguments: argparse.Namespace) -> None:
    from tiered_fedrec import config as config_module
    from tiered_fedrec.federation import evaluate_federation, restore_federation
    from tiered_fedrec.utils.rendering_utils import render_dictionary
    from tiered_fedrec.utils.serialization_utils import write_json

    run_directory = Path(arguments.run)
    config = config_module.load_config(run_directory / "manifest.toml", _overrides(arguments))
    federation = restore_federation(config, run_directory / "checkpoints")
    metrics = evaluate_federation(federation, split_name=arguments.split)
    write_json(metrics.to_dict(), run_directory / f"eval_{arguments.split}.json")
    print(render_dictionary(
        metrics.to_dict(),
        verbose_names_mapping={"hr_at_k": "HR@K", "ndcg_at_k": "NDCG@K", "k": "K", "users_evaluated": "Users evaluated"},
    ))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        description="Run three-tier federated recommendation experiments.",
    )
    parser.add_argument(
        "--log-level",
        type=log_level_type,
        required=False,
        default=logging.WARNING,
        help="Log level to use (name or integer). Defaults to ≥ warning."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Train the federation and write reports and checkpoints.")
    _add_config_arguments(run_parser)
    run_parser.set_defaults(handler=cmd_run)

    sweep_parser = subparsers.add_parser("sweep", help="Run one experiment per value of a parameter.")
    _add_config_arguments(sweep_parser)
    sweep_parser.add_argument(
        "--axis", action="store", type=str, required=True,
        help="Parameter to vary: an alias (lambda, k, T, h, p_pert, beta) or a dotted configuration key.",
    )
    sweep_parser.add_argument(
        "--values", action="store", type=str, required=True, help="Comma-separated values of the parameter.",
    )
    sweep_parser.add_argument(
        "--jobs", action="store", type=int, required=False, default=1, help="Sweep points to run in parallel.",
    )
    sweep_parser.set_defaults(handler=cmd_sweep)

    attack_parser = subparsers.add_parser("attack", help="Measure attack resilience and failure tolerance.")
    _add_config_arguments(attack_parser)
    attack_parser.add_argument(
        "--architecture",
        action="store",
        choices=["direct", "trusted", "both"],
        default="both",
        help="Architectures to report the damage for.",
    )
    attack_parser.add_argument(
        "--skip-failures",
        action="store_true",
        required=False,
        default=False,
        help="Skip the node failure and compromise runs.",
    )
    attack_parser.set_defaults(handler=cmd_attack)

    eval_parser = subparsers.add_parser("eval", help="Evaluate the checkpoints of a finished run.")
    _add_config_arguments(eval_parser)
    eval_parser.add_argument("--run", action="store", type=str, required=True, help="Run directory to evaluate.")
    eval_parser.add_argument(
        "--split", action="store", choices=["test", "validation"], default="test", help="Held-out edges to score.",
    )
    eval_parser.set_defaults(handler=cmd_eval)

    arguments = parser.parse_args(argv)
    configure_logging(level=arguments.log_level)

    from tiered_fedrec.utils.validation_utils import ConfigError, EmptyDatasetError, FedRecError, ParseError

    try:
        arguments.handler(arguments)
    except (ConfigError, ParseError, EmptyDatasetError) as exception:
        print(f"error: {exception}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (FedRecError, OSError) as exception:
        print(f"error: {exception}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    return EXIT_SUCCESS


if __name__ == "__main__":
    sys.exit(main())
