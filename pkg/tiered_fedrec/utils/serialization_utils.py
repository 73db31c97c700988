# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Serialization utilities: the flat binary embedding layout, JSON artifacts
and content hashes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import numpy as np

from tiered_fedrec.tools.gnn_tools import EmbeddingState
from tiered_fedrec.tools.graph_tools import DatasetSplit
from tiered_fedrec.utils.validation_utils import ShapeError

logger = logging.getLogger(__name__)
del logging


HEADER_DTYPE = np.dtype("<i8")
VALUE_DTYPE = np.dtype("<f8")
HEADER_SIZE = 3 * HEADER_DTYPE.itemsize


def embedding_state_to_bytes(state: EmbeddingState) -> bytes:
    """
    Encode the state as header (N_local, M, k) followed by the row-major user
    and item rows, all little endian.

    :param state: The state to encode.
    :return: The encoded state.
    """
    header = np.array([state.num_users, state.num_items, state.k], dtype=HEADER_DTYPE)
    return header.tobytes() + state.user_emb.astype(VALUE_DTYPE).tobytes() + state.item_emb.astype(VALUE_DTYPE).tobytes()


def embedding_state_from_bytes(data: bytes) -> EmbeddingState:
    """
    Decode a state written by :func:`~embedding_state_to_bytes`.
    """
    if len(data) < HEADER_SIZE:
        raise ShapeError(f"Checkpoint too short for its header: {len(data)} bytes.")
    n_users, m_items, k = (int(value) for value in np.frombuffer(data[:HEADER_SIZE], dtype=HEADER_DTYPE))
    expected = HEADER_SIZE + (n_users + m_items) * k * VALUE_DTYPE.itemsize
    if len(data) != expected:
        raise ShapeError(f"Checkpoint has {len(data)} bytes, expected {expected} for {n_users}x{m_items}x{k}.")
    values = np.frombuffer(data[HEADER_SIZE:], dtype=VALUE_DTYPE).astype(np.float64)
    return EmbeddingState(
        user_emb=values[:n_users * k].reshape(n_users, k),
        item_emb=values[n_users * k:].reshape(m_items, k),
    )


def write_checkpoint(state: EmbeddingState, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(embedding_state_to_bytes(state))


def read_checkpoint(path: Path) -> EmbeddingState:
    return embedding_state_from_bytes(path.read_bytes())


def _sanitize(value: Any) -> Any:
    # JSON has no representation for NaN and infinity.
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Mapping):
        return {key: _sanitize(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(item) for item in value]
    return value


def dump_json_line(record: Mapping[str, Any]) -> str:
    """
    Serialize one record as a single compact JSON line, non-finite numbers becoming `null`.
    """
    return json.dumps(_sanitize(record), separators=(",", ":"))


def write_json_lines(records: Iterable[Mapping[str, Any]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode="w", encoding="UTF-8") as fd:
        for record in records:
            fd.write(dump_json_line(record) + "\n")
    logger.info("Wrote JSON lines to %s.", path)


def write_json(data: Mapping[str, Any], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_sanitize(data), indent=2) + "\n", encoding="UTF-8")
    logger.info("Wrote %s.", path)


def write_split_manifest(split: DatasetSplit, path: Path) -> None:
    """
    Export the edge lists of all split parts.

    :param split: The split to export.
    :param path: The JSON file to write.
    """
    write_json(split.to_manifest(), path)


def content_hash(chunks: Iterable[bytes]) -> str:
    """
    Get the SHA-256 hex digest over the given chunks.
    """
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


def file_hash(path: Path, chunk_size: int = 1 << 16) -> str:
    """
    Get the SHA-256 hex digest of the file content.
    """
    with open(path, mode="rb") as fd:
        return content_hash(iter(lambda: fd.read(chunk_size), b""))
