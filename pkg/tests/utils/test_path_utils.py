# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

from __future__ import annotations

import os
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import mock, TestCase

from tiered_fedrec.utils.path_utils import (
    get_client_checkpoints,
    get_files_from_directory,
    get_output_root,
    resolve_output_directory,
)


class GetFilesFromDirectoryTestCase(TestCase):
    def test_get_files_from_directory(self) -> None:
        with TemporaryDirectory() as temporary_directory:
            directory = Path(temporary_directory)

            directory.joinpath("rounds.jsonl").touch()
            directory.joinpath("summary.json").touch()
            directory.joinpath("checkpoints").mkdir(parents=True)
            directory.joinpath("checkpoints").joinpath("global.bin").touch()
            directory.joinpath("empty").joinpath("sub").mkdir(parents=True)

            result = list(get_files_from_directory(temporary_directory))
            self.assertListEqual(
                [
                    (directory / "checkpoints" / "global.bin", "checkpoints/global.bin"),
                    (directory / "rounds.jsonl", "rounds.jsonl"),
                    (directory / "summary.json", "summary.json"),
                ],
                result,
            )

    def test_pattern(self) -> None:
        with TemporaryDirectory() as temporary_directory:
            directory = Path(temporary_directory)
            directory.joinpath("a.json").touch()
            directory.joinpath("b.jsonl").touch()

            result = [name for _, name in get_files_from_directory(directory, pattern="*.json")]
            self.assertListEqual(["a.json"], result)


class GetClientCheckpointsTestCase(TestCase):
    def test_get_client_checkpoints(self) -> None:
        with TemporaryDirectory() as temporary_directory:
            directory = Path(temporary_directory)
            for name in ["global.bin", "client_0.bin", "client_12.bin", "client_x.bin", "client_3.bin.tmp"]:
                directory.joinpath(name).touch()

            self.assertDictEqual(
                {0: directory / "client_0.bin", 12: directory / "client_12.bin"},
                get_client_checkpoints(directory),
            )


class OutputDirectoryTestCase(TestCase):
    def test_default_root(self) -> None:
        with mock.patch.dict(os.environ, {"TIERED_FEDREC_OUTPUT_ROOT": ""}):
            self.assertEqual(Path("runs"), get_output_root())

    def test_root_from_environment(self) -> None:
        with mock.patch.dict(os.environ, {"TIERED_FEDREC_OUTPUT_ROOT": "/tmp/experiments"}):
            self.assertEqual(Path("/tmp/experiments"), get_output_root())
            self.assertEqual(Path("/tmp/experiments/run-abc"), resolve_output_directory("", name="run-abc"))
            self.assertEqual(Path("/tmp/experiments/run-abc"), resolve_output_directory(None, name="run-abc"))

    def test_explicit_directory(self) -> None:
        self.assertEqual(Path("/data/out"), resolve_output_directory("/data/out", name="run-abc"))
