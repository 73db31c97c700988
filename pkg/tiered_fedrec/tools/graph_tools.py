# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Tools related to bipartite user-item interaction graphs: loading, splitting
and perturbing them as well as handing out the per-client local views.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, BinaryIO, Literal

import numpy as np

from tiered_fedrec.constants import DEFAULT_PERTURBATION_PROBABILITY, DEFAULT_SEED, DEFAULT_SPLIT_RATIOS
from tiered_fedrec.utils.validation_utils import (
    check_range,
    ConfigError,
    EmptyDatasetError,
    ParseError,
    raise_for_messages,
    ShapeError,
)

logger = logging.getLogger(__name__)
del logging


FORMAT_DELIMITED = "delimited-text"
FORMAT_JSON_LINES = "json-lines"
FORMATS = [FORMAT_DELIMITED, FORMAT_JSON_LINES]
FORMATS_TYPE = Literal["delimited-text", "json-lines"]

Edge = tuple[int, int]


@dataclass(frozen=True)
class InteractionGraph:
    """
    Bipartite user-item graph with implicit feedback, immutable after construction.
    """

    num_users: int
    """
    The number of users N.
    """

    num_items: int
    """
    The number of items M.
    """

    adjacency: tuple[tuple[int, ...], ...]
    """
    The sorted item IDs each user interacted with, indexed by user ID.
    """

    user_tokens: tuple[str, ...] = ()
    """
    The original user tokens by dense ID, if loaded from a file.
    """

    item_tokens: tuple[str, ...] = ()
    """
    The original item tokens by dense ID, if loaded from a file.
    """

    def __post_init__(self) -> None:
        if len(self.adjacency) != self.num_users:
            raise ShapeError(f"Got {len(self.adjacency)} adjacency lists for {self.num_users} users.")
        for user, items in enumerate(self.adjacency):
            if any(first >= second for first, second in zip(items, items[1:])):
                raise ShapeError(f"Adjacency of user {user} is not strictly ascending.")
            if items and (items[0] < 0 or items[-1] >= self.num_items):
                raise ShapeError(f"Adjacency of user {user} references items outside of [0, {self.num_items}).")

    @classmethod
    def from_edges(
            cls,
            num_users: int,
            num_items: int,
            edges: Iterable[Edge],
            user_tokens: Sequence[str] = (),
            item_tokens: Sequence[str] = (),
    ) -> InteractionGraph:
        """
        Build a graph from the given edges. Duplicate edges are dropped.

        :param num_users: The number of users.
        :param num_items: The number of items.
        :param edges: The (user, item) pairs.
        :param user_tokens: The original user tokens.
        :param item_tokens: The original item tokens.
        :return: The corresponding graph.
        """
        neighbors: list[set[int]] = [set() for _ in range(num_users)]
        for user, item in edges:
            if not 0 <= user < num_users:
                raise ShapeError(f"User {user} outside of [0, {num_users}).")
            neighbors[user].add(item)
        return cls(
            num_users=num_users,
            num_items=num_items,
            adjacency=tuple(tuple(sorted(items)) for items in neighbors),
            user_tokens=tuple(user_tokens),
            item_tokens=tuple(item_tokens),
        )

    @cached_property
    def num_edges(self) -> int:
        return sum(map(len, self.adjacency))

    @property
    def density(self) -> float:
        """
        The share of all possible user-item pairs which are edges.
        """
        if not self.num_users or not self.num_items:
            return 0.0
        return self.num_edges / (self.num_users * self.num_items)

    @cached_property
    def edges(self) -> frozenset[Edge]:
        return frozenset((user, item) for user, items in enumerate(self.adjacency) for item in items)

    def neighbors(self, user: int) -> tuple[int, ...]:
        """
        Get the items the given user interacted with.

        :param user: The user ID.
        :return: The sorted item IDs N(u).
        """
        return self.adjacency[user]

    def local_view(self, user_ids: Sequence[int]) -> LocalGraph:
        """
        Get the row slice for the given users, as held by a client.

        :param user_ids: The users to include.
        :return: The unperturbed local graph.
        """
        return LocalGraph(
            user_ids=tuple(user_ids),
            num_items=self.num_items,
            adjacency=tuple(self.adjacency[user] for user in user_ids),
            added=tuple(() for _ in user_ids),
        )

    def describe(self) -> dict[str, int | float]:
        """
        Get the basic graph statistics.

        :return: N, M, the edge count and the density.
        """
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_edges": self.num_edges,
            "density": self.density,
        }


@dataclass(frozen=True)
class LocalGraph:
    """
    The local graph G_{u,i} of a client, possibly including perturbed edges.
    """

    user_ids: tuple[int, ...]
    """
    The global IDs of the local user rows.
    """

    num_items: int
    """
    The size of the item catalog.
    """

    adjacency: tuple[tuple[int, ...], ...]
    """
    The sorted neighbor items N'(u) per local row, false edges included.
    """

    added: tuple[tuple[int, ...], ...]
    """
    The sorted false edges per local row, a subset of `adjacency`.
    """

    def __post_init__(self) -> None:
        if not len(self.user_ids) == len(self.adjacency) == len(self.added):
            raise ShapeError("Local graph rows do not match.")
        for items in self.adjacency:
            if items and (items[0] < 0 or items[-1] >= self.num_items):
                raise ShapeError(f"Local graph references items outside of [0, {self.num_items}).")

    @property
    def num_rows(self) -> int:
        return len(self.user_ids)

    @property
    def is_perturbed(self) -> bool:
        return any(self.added)

    def original(self, row: int) -> tuple[int, ...]:
        """
        Get the true neighbors of the given row.

        :param row: The local row index.
        :return: N(u), excluding any false edge.
        """
        added = set(self.added[row])
        return tuple(item for item in self.adjacency[row] if item not in added)

    def item_degrees(self) -> np.ndarray[Any, np.dtype[np.int64]]:
        """
        Count the local users interacting with each item.

        :return: |N(i)| for all items of the catalog.
        """
        degrees = np.zeros(self.num_items, dtype=np.int64)
        for items in self.adjacency:
            degrees[list(items)] += 1
        return degrees


@dataclass(frozen=True)
class PerturbationConfig:
    """
    Configuration of the graph perturbation.
    """

    probability: float = DEFAULT_PERTURBATION_PROBABILITY
    """
    The probability P_pert of adding a false edge for each non-interacted item.
    """

    seed: int = DEFAULT_SEED
    """
    The base seed for the per-client random streams.
    """

    def validate(self) -> None:
        raise_for_messages([
            check_range("privacy.perturbation_probability", self.probability, minimum=0.0, maximum=1.0),
        ])


@dataclass(frozen=True)
class DatasetSplit:
    """
    Per-user stratified train/validation/test split of one graph.
    """

    train: InteractionGraph
    """
    The training graph.
    """

    validation: frozenset[Edge]
    """
    The validation edges.
    """

    test: frozenset[Edge]
    """
    The test edges.
    """

    ratios: tuple[float, float, float]
    """
    The train, validation and test fractions.
    """

    seed: int
    """
    The seed used for shuffling.
    """

    @cached_property
    def test_items(self) -> dict[int, frozenset[int]]:
        return _group_by_user(self.test)

    @cached_property
    def validation_items(self) -> dict[int, frozenset[int]]:
        return _group_by_user(self.validation)

    def to_manifest(self) -> dict[str, Any]:
        """
        Get the JSON-serializable edge lists per split.

        :return: The split manifest.
        """
        return {
            "num_users": self.train.num_users,
            "num_items": self.train.num_items,
            "ratios": list(self.ratios),
            "seed": self.seed,
            "train": [list(edge) for edge in sorted(self.train.edges)],
            "validation": [list(edge) for edge in sorted(self.validation)],
            "test": [list(edge) for edge in sorted(self.test)],
        }


def _group_by_user(edges: Iterable[Edge]) -> dict[int, frozenset[int]]:
    grouped: dict[int, set[int]] = {}
    for user, item in edges:
        grouped.setdefault(user, set()).add(item)
    return {user: frozenset(items) for user, items in grouped.items()}


class _TokenIndex:
    """
    Densify tokens to contiguous IDs in first-seen order.
    """

    def __init__(self) -> None:
        self.ids: dict[str, int] = {}

    def get(self, token: str) -> int:
        identifier = self.ids.get(token)
        if identifier is None:
            identifier = len(self.ids)
            self.ids[token] = identifier
        return identifier

    @property
    def tokens(self) -> list[str]:
        return list(self.ids)


def _parse_delimited(line: str, line_number: int) -> tuple[str, str]:
    fields = line.split("\t")
    if len(fields) not in {2, 3}:
        raise ParseError(f"Expected 2 or 3 tab-separated fields, got {len(fields)}.", line_number=line_number)
    user, item = fields[0].strip(), fields[1].strip()
    if not user or not item:
        raise ParseError("Empty user or item token.", line_number=line_number)
    if len(fields) == 3:
        try:
            float(fields[2])
        except ValueError:
            raise ParseError(f"Invalid weight {fields[2]!r}.", line_number=line_number) from None
    return user, item


def _parse_json_line(line: str, line_number: int) -> tuple[str, str]:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exception:
        raise ParseError(f"Invalid JSON: {exception.msg}.", line_number=line_number) from None
    if not isinstance(record, dict) or "user" not in record or "item" not in record:
        raise ParseError("Expected an object with `user` and `item` keys.", line_number=line_number)
    return str(record["user"]), str(record["item"])


def load_interactions(source: BinaryIO, format: FORMATS_TYPE = FORMAT_DELIMITED) -> InteractionGraph:  # noqa: A002
    """
    Load an implicit-feedback interaction graph.

    Tokens are densified to contiguous IDs in first-seen order, duplicate
    records are dropped and weights are ignored.

    :param source: The binary stream to read UTF-8 records from.
    :param format: The record format, either `delimited-text` or `json-lines`.
    :return: The loaded graph.
    """
    if format not in FORMATS:
        raise ConfigError(f"dataset.format: must be one of {FORMATS}, got {format!r}")
    parse = _parse_delimited if format == FORMAT_DELIMITED else _parse_json_line

    users = _TokenIndex()
    items = _TokenIndex()
    edges: set[Edge] = set()
    for line_number, raw_line in enumerate(source, start=1):
        try:
            line = raw_line.decode("UTF-8").rstrip("\r\n")
        except UnicodeDecodeError:
            raise ParseError("Invalid UTF-8.", line_number=line_number) from None
        if not line.strip():
            continue
        user_token, item_token = parse(line, line_number)
        edges.add((users.get(user_token), items.get(item_token)))

    if not edges:
        raise EmptyDatasetError("The input does not contain any interaction.")

    graph = InteractionGraph.from_edges(
        num_users=len(users.ids),
        num_items=len(items.ids),
        edges=edges,
        user_tokens=users.tokens,
        item_tokens=items.tokens,
    )
    logger.info(
        "Loaded %d users, %d items and %d interactions (density %.4f%%).",
        graph.num_users, graph.num_items, graph.num_edges, graph.density * 100,
    )
    return graph


def guess_format(path: Path | str) -> FORMATS_TYPE:
    """
    Guess the record format from the file suffix.

    :param path: The interaction file.
    :return: `json-lines` for `.jsonl`/`.ndjson` files, `delimited-text` otherwise.
    """
    if Path(path).suffix.lower() in {".jsonl", ".ndjson"}:
        return FORMAT_JSON_LINES
    return FORMAT_DELIMITED


def load_interactions_from_path(path: Path | str, format: FORMATS_TYPE | None = None) -> InteractionGraph:  # noqa: A002
    """
    Load the interaction graph from the given file.

    :param path: The file to read.
    :param format: The record format. Guessed from the suffix if unset.
    :return: The loaded graph.
    """
    with open(path, mode="rb") as source:
        return load_interactions(source, format=format or guess_format(path))


def _split_count(total: int, ratio: float) -> int:
    return int(math.floor(total * ratio + 0.5))


def split_dataset(
        graph: InteractionGraph,
        ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
        seed: int = DEFAULT_SEED,
) -> DatasetSplit:
    """
    Split the edges of each user into train, validation and test parts.

    Every user keeps at least one training edge, thus users with too few
    interactions keep all of them for training.

    :param graph: The graph to split.
    :param ratios: The train, validation and test fractions summing to 1.
    :param seed: The seed for shuffling the edges of each user.
    :return: The deterministic split.
    """
    if len(ratios) != 3:
        raise ConfigError(f"dataset.split_ratios: expected 3 values, got {len(ratios)}")
    if any(ratio < 0 for ratio in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"dataset.split_ratios: must be non-negative and sum to 1, got {list(ratios)}")
    _, validation_ratio, test_ratio = ratios

    train: list[Edge] = []
    validation: list[Edge] = []
    test: list[Edge] = []
    for user, items in enumerate(graph.adjacency):
        total = len(items)
        test_count = _split_count(total, test_ratio)
        validation_count = _split_count(total, validation_ratio)
        # Keep at least one training edge by shrinking the validation part first.
        while total - test_count - validation_count < 1 and (test_count or validation_count):
            if validation_count:
                validation_count -= 1
            else:
                test_count -= 1

        rng = np.random.default_rng([seed, user])
        shuffled = [items[index] for index in rng.permutation(total)]
        test.extend((user, item) for item in shuffled[:test_count])
        validation.extend((user, item) for item in shuffled[test_count:test_count + validation_count])
        train.extend((user, item) for item in shuffled[test_count + validation_count:])

    return DatasetSplit(
        train=InteractionGraph.from_edges(
            num_users=graph.num_users,
            num_items=graph.num_items,
            edges=train,
            user_tokens=graph.user_tokens,
            item_tokens=graph.item_tokens,
        ),
        validation=frozenset(validation),
        test=frozenset(test),
        ratios=(float(ratios[0]), float(ratios[1]), float(ratios[2])),
        seed=seed,
    )


def perturb_graph(graph: LocalGraph, config: PerturbationConfig, rng: np.random.Generator) -> LocalGraph:
    """
    Add false edges to the given local graph.

    Each item a row has not interacted with gets one independent uniform draw
    τ and becomes a neighbor iff τ < P_pert. Existing edges are never removed.

    :param graph: The local graph to perturb.
    :param config: The perturbation configuration.
    :param rng: The random stream, seeded per (client, round).
    :return: The perturbed local graph G'_{u,i}, the false edges flagged.
    """
    if config.probability == 0.0:
        return graph

    catalog = np.arange(graph.num_items)
    adjacency = []
    added = []
    for items, previous in zip(graph.adjacency, graph.added):
        candidates = np.setdiff1d(catalog, np.asarray(items, dtype=np.int64), assume_unique=True)
        draws = rng.random(candidates.size)
        new_items = candidates[draws < config.probability].tolist()
        adjacency.append(tuple(sorted([*items, *new_items])))
        added.append(tuple(sorted([*previous, *new_items])))
    return LocalGraph(
        user_ids=graph.user_ids,
        num_items=graph.num_items,
        adjacency=tuple(adjacency),
        added=tuple(added),
    )
