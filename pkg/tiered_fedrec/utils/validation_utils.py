# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Error types and small argument checks shared by all modules.
"""

from __future__ import annotations

from typing import Any

import numpy as np
import numpy.typing as npt


FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


class FedRecError(Exception):
    """
    Base class for all errors raised by this package.
    """

    pass


class ConfigError(FedRecError, ValueError):
    """
    Error indicating an invalid configuration value.
    """

    pass


class ShapeError(FedRecError, ValueError):
    """
    Error indicating mismatching array dimensions.
    """

    pass


class ParseError(FedRecError, ValueError):
    """
    Error indicating a malformed input record.
    """

    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"Line {line_number}: {message}")
        self.line_number = line_number


class EmptyDatasetError(FedRecError, ValueError):
    """
    Error indicating an input without any interaction.
    """

    pass


class EmptyBatchError(FedRecError, ValueError):
    """
    Error indicating a training step without any sample.
    """

    pass


class BoundsError(FedRecError, ValueError):
    """
    Error indicating a request for more items than available.
    """

    pass


class ProtocolError(FedRecError, RuntimeError):
    """
    Error indicating a violated precondition of the federation protocol.
    """

    pass


class EmptyEvaluationError(FedRecError, ValueError):
    """
    Error indicating that no user could be evaluated.
    """

    pass


class DivergenceError(FedRecError, ArithmeticError):
    """
    Error indicating non-finite parameters after a training step.
    """

    pass


def check_finite(values: np.ndarray[Any, Any], what: str) -> None:
    """
    Check that all entries are finite.

    :param values: The array to check.
    :param what: Description of the values for the error message.
    """
    if not np.all(np.isfinite(values)):
        raise DivergenceError(f"Non-finite values in {what}.")


def check_same_shape(first: np.ndarray[Any, Any], second: np.ndarray[Any, Any], what: str) -> None:
    """
    Check that both arrays have the same shape.

    Raises :class:`~ShapeError` otherwise.

    :param first: The first array.
    :param second: The second array.
    :param what: Description of the compared values for the error message.
    """
    if first.shape != second.shape:
        raise ShapeError(f"Shape mismatch for {what}: {first.shape} != {second.shape}")


def check_range(
        name: str,
        value: float,
        minimum: float | None = None,
        maximum: float | None = None,
        minimum_inclusive: bool = True,
        maximum_inclusive: bool = True,
) -> str | None:
    """
    Check that the given value lies inside the given interval.

    :param name: The dotted name of the value, used inside the message.
    :param value: The value to check.
    :param minimum: The lower bound, if any.
    :param maximum: The upper bound, if any.
    :param minimum_inclusive: Whether the lower bound itself is allowed.
    :param maximum_inclusive: Whether the upper bound itself is allowed.
    :return: An error message if the value is invalid, `None` otherwise.
    """
    if value != value:
        return f"{name}: must not be NaN"
    if minimum is not None:
        if value < minimum or (not minimum_inclusive and value == minimum):
            operator = ">=" if minimum_inclusive else ">"
            return f"{name}: must be {operator} {minimum}, got {value}"
    if maximum is not None:
        if value > maximum or (not maximum_inclusive and value == maximum):
            operator = "<=" if maximum_inclusive else "<"
            return f"{name}: must be {operator} {maximum}, got {value}"
    return None


def raise_for_messages(messages: list[str | None]) -> None:
    """
    Raise a single :class:`~ConfigError` for all non-empty messages.

    :param messages: The collected check results.
    """
    errors = [message for message in messages if message]
    if errors:
        raise ConfigError("; ".join(errors))
