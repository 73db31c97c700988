# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

import os
import re
from pathlib import Path
from typing import Generator

from tiered_fedrec.constants import DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENVIRONMENT_VARIABLE


def get_output_root() -> Path:
    """
    Get the directory new runs are placed in.

    :return: The value of `TIERED_FEDREC_OUTPUT_ROOT`, `./runs` if unset.
    """
    return Path(os.environ.get(OUTPUT_ROOT_ENVIRONMENT_VARIABLE) or DEFAULT_OUTPUT_ROOT)


def resolve_output_directory(directory: str | Path | None, name: str) -> Path:
    """
    Get the output directory of a run.

    :param directory: The explicitly configured directory, if any.
    :param name: The run name to use below the output root otherwise.
    :return: The directory, not created yet.
    """
    if directory:
        return Path(directory)
    return get_output_root() / name


def get_files_from_directory(
    directory: str | Path,
    pattern: str = "*",
) -> Generator[tuple[Path, str], None, None]:
    """
    Get the files from the given directory, recursively.

    :param directory: The directory to walk through.
    :param pattern: The glob pattern the file names have to match.
    :return: For each file, the complete Path object as well as the path string
             relative to the given directory.
    """
    directory = Path(directory)
    for path in sorted(directory.rglob(pattern), key=str):
        if path.is_dir():
            continue
        yield path, path.relative_to(directory).as_posix()


_CLIENT_CHECKPOINT_PATTERN = re.compile(r"^client_(\d+)\.bin$")


def get_client_checkpoints(directory: str | Path) -> dict[int, Path]:
    """
    Find the per-client checkpoints of a finished run.

    :param directory: The checkpoint directory.
    :return: The checkpoint path by client ID.
    """
    result = {}
    for path, _ in get_files_from_directory(directory, pattern="client_*.bin"):
        match = _CLIENT_CHECKPOINT_PATTERN.match(path.name)
        if match:
            result[int(match.group(1))] = path
    return result
