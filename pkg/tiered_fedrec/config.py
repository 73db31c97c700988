# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Experiment configuration: TOML files, dotted-key overrides, validation and
reproducibility manifests.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, cast, Literal

import tomli
import tomli_w

from tiered_fedrec.constants import (
    DEFAULT_BETA,
    DEFAULT_EVAL_INTERVAL,
    DEFAULT_LDP_SCALE,
    DEFAULT_MU,
    DEFAULT_NU,
    DEFAULT_PERTURBATION_PROBABILITY,
    DEFAULT_ROUNDS,
    DEFAULT_SEED,
    DEFAULT_SPLIT_RATIOS,
    DEFAULT_TOP_K,
    DEFAULT_TRUSTED_NODES,
    VERSION,
)
from tiered_fedrec.tools.adversary_tools import AttackConfig, check_synthetic_parameters, FailureScenario, make_synthetic_dataset
from tiered_fedrec.tools.gnn_tools import FastGnnConfig, TrainConfig
from tiered_fedrec.tools.graph_tools import FORMATS, FORMATS_TYPE, InteractionGraph, load_interactions_from_path, PerturbationConfig
from tiered_fedrec.tools.privacy_tools import LdpConfig
from tiered_fedrec.utils.serialization_utils import content_hash, file_hash
from tiered_fedrec.utils.validation_utils import check_range, ConfigError, raise_for_messages

logger = logging.getLogger(__name__)
del logging


ARCHITECTURES = ["trusted", "direct"]
ArchitectureType = Literal["trusted", "direct"]


@dataclass(frozen=True)
class DatasetConfig:
    """
    Where the interactions come from and how they are split.
    """

    path: str = ""
    """
    The interaction file to load.
    """

    format: str = ""
    """
    The record format, guessed from the file suffix if empty.
    """

    synthetic: bool = False
    """
    Whether to generate the planted low-rank benchmark instead of loading a file.
    """

    n_users: int = 200
    """
    The number of synthetic users.
    """

    m_items: int = 300
    """
    The number of synthetic items.
    """

    latent_rank: int = 8
    """
    The rank of the planted factors.
    """

    interactions_per_user: int = 20
    """
    The degree of every synthetic user.
    """

    noise_fraction: float = 0.1
    """
    The share of uniformly drawn edges per synthetic user.
    """

    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    """
    The train, validation and test fractions.
    """

    def validate(self) -> list[str | None]:
        messages: list[str | None] = []
        if self.synthetic:
            messages.extend(check_synthetic_parameters(
                self.n_users, self.m_items, self.latent_rank, self.interactions_per_user, self.noise_fraction,
            ))
        elif not self.path:
            messages.append("dataset.path: required unless dataset.synthetic is enabled")
        elif not Path(self.path).is_file():
            messages.append(f"dataset.path: file not found: {self.path}")
        if self.format and self.format not in FORMATS:
            messages.append(f"dataset.format: must be one of {FORMATS}, got {self.format!r}")
        if len(self.split_ratios) != 3 or any(ratio < 0 for ratio in self.split_ratios) or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            messages.append(f"dataset.split_ratios: must be three non-negative fractions summing to 1, got {list(self.split_ratios)}")
        return messages


@dataclass(frozen=True)
class PrivacyConfig:
    """
    Client-side protection of the uploads and the local graphs.
    """

    ldp_scale: float = DEFAULT_LDP_SCALE
    """
    The Laplace scale λ.
    """

    perturbation_probability: float = DEFAULT_PERTURBATION_PROBABILITY
    """
    The probability P_pert of a false edge per non-interacted item.
    """

    def ldp(self, seed: int) -> LdpConfig:
        return LdpConfig(scale=self.ldp_scale, seed=seed)

    def perturbation(self, seed: int) -> PerturbationConfig:
        return PerturbationConfig(probability=self.perturbation_probability, seed=seed)


@dataclass(frozen=True)
class FederationConfig:
    """
    The trusted node tier, the server and the round loop.
    """

    trusted_nodes: int = DEFAULT_TRUSTED_NODES
    """
    The number of trusted nodes T.
    """

    rounds: int = DEFAULT_ROUNDS
    """
    The number of rounds Q.
    """

    beta: float = DEFAULT_BETA
    """
    The blend factor β of the global block.
    """

    mu: float = DEFAULT_MU
    """
    The robust z-score threshold μ.
    """

    nu: float = DEFAULT_NU
    """
    The flagged fraction ν above which a node withholds.
    """

    top_k: int = DEFAULT_TOP_K
    """
    The ranking cutoff K.
    """

    eval_interval: int = DEFAULT_EVAL_INTERVAL
    """
    The number of rounds between two evaluations. The final round is always evaluated.
    """

    participation: float = 1.0
    """
    The share of clients training in each round.
    """

    ban_after: int = 0
    """
    The number of consecutive flags after which a client is excluded for good, 0 to disable.
    """

    architecture: ArchitectureType = "trusted"
    """
    Whether uploads pass the trusted nodes or go straight to the server mean.
    """

    anomaly_detection: bool = True
    """
    Whether the trusted nodes check the uploads.
    """

    reassign_on_failure: bool = False
    """
    Whether the clients of failed nodes move to the surviving ones.
    """

    jobs: int = 1
    """
    The number of parallel workers for the client training.
    """

    def validate(self) -> list[str | None]:
        return [
            check_range("federation.trusted_nodes", self.trusted_nodes, minimum=1),
            check_range("federation.rounds", self.rounds, minimum=0),
            check_range("federation.beta", self.beta, minimum=0.0, maximum=1.0, minimum_inclusive=False, maximum_inclusive=False),
            check_range("federation.mu", self.mu, minimum=0.0),
            check_range("federation.nu", self.nu, minimum=0.0, maximum=1.0, maximum_inclusive=False),
            check_range("federation.top_k", self.top_k, minimum=1),
            check_range("federation.eval_interval", self.eval_interval, minimum=1),
            check_range("federation.participation", self.participation, minimum=0.0, maximum=1.0, minimum_inclusive=False),
            check_range("federation.ban_after", self.ban_after, minimum=0),
            check_range("federation.jobs", self.jobs, minimum=-1),
            None if self.jobs else "federation.jobs: must not be 0",
            None if self.architecture in ARCHITECTURES else f"federation.architecture: must be one of {ARCHITECTURES}, got {self.architecture!r}",
        ]


@dataclass(frozen=True)
class ExperimentConfig:
    """
    The complete, validated description of one experiment.
    """

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    fastgnn: FastGnnConfig = field(default_factory=FastGnnConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    failure: FailureScenario = field(default_factory=FailureScenario)

    seed: int = DEFAULT_SEED
    """
    The base seed of every random stream.
    """

    output_directory: str = ""
    """
    Where to write the artifacts, below the output root if empty.
    """

    def validate(self) -> None:
        """
        Check every field and raise a single :class:`~ConfigError` listing all violations.
        """
        messages = [*self.dataset.validate(), *self.federation.validate()]
        for section in (self.fastgnn, self.training, self.attack, self.privacy.ldp(self.seed), self.privacy.perturbation(self.seed)):
            try:
                section.validate()
            except ConfigError as exception:
                messages.append(str(exception))
        try:
            self.failure.validate(num_nodes=self.federation.trusted_nodes)
        except ConfigError as exception:
            messages.append(str(exception))
        if self.dataset.synthetic and self.dataset.n_users < self.federation.trusted_nodes:
            messages.append(
                f"federation.trusted_nodes: cannot exceed the {self.dataset.n_users} clients, got {self.federation.trusted_nodes}"
            )
        raise_for_messages(messages)


SECTIONS = {dataclass_field.name: dataclass_field for dataclass_field in dataclasses.fields(ExperimentConfig)}


def iter_keys(config: ExperimentConfig | None = None) -> Iterator[tuple[str, Any]]:
    """
    Iterate over all dotted keys with their current values.

    :param config: The configuration to read the values from, the defaults if unset.
    :return: The dotted keys and values.
    """
    config = config or ExperimentConfig()
    for name in SECTIONS:
        value = getattr(config, name)
        if dataclasses.is_dataclass(value):
            for section_field in dataclasses.fields(value):
                yield f"{name}.{section_field.name}", getattr(value, section_field.name)
        else:
            yield name, value


_TRUE_STRINGS = {"1", "true", "yes", "on"}
_FALSE_STRINGS = {"0", "false", "no", "off"}


def convert_value(key: str, default: Any, value: Any) -> Any:
    """
    Convert a file or command line value to the type of the default.

    :param key: The dotted key, used inside the messages.
    :param default: The default value determining the target type.
    :param value: The value to convert.
    :return: The converted value.
    """
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in _TRUE_STRINGS | _FALSE_STRINGS:
                return value.lower() in _TRUE_STRINGS
            raise ValueError(value)
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(default, tuple):
            items = value.split(",") if isinstance(value, str) else value
            return tuple(float(item) for item in items)
        if isinstance(value, (dict, list)):
            raise ValueError(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None


def apply_overrides(config: ExperimentConfig, values: Mapping[str, Any]) -> ExperimentConfig:
    defaults = dict(iter_keys(config))
    section_updates: dict[str, dict[str, Any]] = {}
    top_level: dict[str, Any] = {}
    for key, value in values.items():
        if key not in defaults:
            raise ConfigError(f"{key}: unknown configuration key")
        converted = convert_value(key, defaults[key], value)
        if "." in key:
            section, name = key.split(".", 1)
            section_updates.setdefault(section, {})[name] = converted
        else:
            top_level[key] = converted
    for section, updates in section_updates.items():
        top_level[section] = dataclasses.replace(getattr(config, section), **updates)
    return dataclasses.replace(config, **top_level)


def flatten(data: Mapping[str, Any]) -> dict[str, Any]:
    """
    Turn the TOML tables into dotted keys.
    """
    result: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict) and key in SECTIONS and key not in {"seed", "output_directory"}:
            for name, item in value.items():
                result[f"{key}.{name}"] = item
        else:
            result[key] = value
    return result


def config_from_mapping(data: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """
    Build the configuration from parsed TOML data and dotted-key overrides.

    :param data: The nested TOML content.
    :param overrides: The dotted-key values taking precedence, usually command line flags.
    :return: The configuration, not validated yet.
    """
    config = apply_overrides(ExperimentConfig(), flatten(data))
    return apply_overrides(config, overrides or {})


def load_config(path: Path | str | None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """
    Load and validate the configuration.

    :param path: The TOML file, defaults only if unset.
    :param overrides: The dotted-key values taking precedence.
    :return: The validated configuration.
    """
    data: dict[str, Any] = {}
    if path:
        try:
            data = tomli.loads(Path(path).read_text(encoding="UTF-8"))
        except tomli.TOMLDecodeError as exception:
            raise ConfigError(f"{path}: invalid TOML: {exception}") from None
        except OSError as exception:
            raise ConfigError(f"{path}: cannot read the configuration: {exception.strerror}") from None
    config = config_from_mapping(data, overrides)
    config.validate()
    return config


def to_mapping(config: ExperimentConfig) -> dict[str, Any]:
    """
    Get the nested representation which :func:`~config_from_mapping` accepts again.
    """
    result: dict[str, Any] = {"seed": config.seed, "output_directory": config.output_directory}
    for key, value in iter_keys(config):
        if "." not in key:
            continue
        section, name = key.split(".", 1)
        result.setdefault(section, {})[name] = list(value) if isinstance(value, tuple) else value
    return result


def load_dataset(config: ExperimentConfig) -> InteractionGraph:
    """
    Generate or load the interaction graph described by the configuration.
    """
    dataset = config.dataset
    if dataset.synthetic:
        return make_synthetic_dataset(
            n_users=dataset.n_users,
            m_items=dataset.m_items,
            latent_rank=dataset.latent_rank,
            interactions_per_user=dataset.interactions_per_user,
            seed=config.seed,
            noise_fraction=dataset.noise_fraction,
        )
    try:
        return load_interactions_from_path(dataset.path, format=cast("FORMATS_TYPE | None", dataset.format or None))
    except OSError as exception:
        raise ConfigError(f"dataset.path: cannot read the interactions: {exception.strerror}") from None


def check_dataset(config: ExperimentConfig, graph: InteractionGraph) -> None:
    """
    Check the configuration against the loaded interactions.

    :param config: The validated configuration.
    :param graph: The graph returned by :func:`~load_dataset`.
    """
    if graph.num_users < config.federation.trusted_nodes:
        raise ConfigError(
            f"federation.trusted_nodes: cannot exceed the {graph.num_users} clients, got {config.federation.trusted_nodes}"
        )


def input_hash(config: ExperimentConfig) -> str:
    """
    Get the SHA-256 digest over the canonical configuration and the dataset file.
    """
    chunks = [tomli_w.dumps(to_mapping(config)).encode("UTF-8")]
    if not config.dataset.synthetic and config.dataset.path:
        chunks.append(file_hash(Path(config.dataset.path)).encode("ascii"))
    return content_hash(chunks)


def write_manifest(config: ExperimentConfig, path: Path) -> str:
    """
    Write the configuration as loadable TOML, preceded by the package version and the input hash.

    :param config: The configuration of the run.
    :param path: The manifest file.
    :return: The input hash.
    """
    digest = input_hash(config)
    header = f"# tiered_fedrec {VERSION}\n# sha256: {digest}\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(header + tomli_w.dumps(to_mapping(config)), encoding="UTF-8")
    logger.info("Wrote manifest %s.", path)
    return digest
