# Copyright (c) stefan6419846. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
# See http://www.apache.org/licenses/LICENSE-2.0 for the license text.

"""
Rendering utilities.
"""

from __future__ import annotations

from collections.abc import Collection, Iterable, Mapping, Sequence
from typing import Any


def _format_value(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def render_dictionary(
        dictionary: Mapping[str, Any],
        verbose_names_mapping: dict[str, str],
        multi_value_keys: Collection[str] = (),
) -> str:
    """
    Render the given dictionary as string.

    :param dictionary: The dictionary to render.
    :param verbose_names_mapping: The mapping dictionary to use for the keys.
                                  Keys not available inside this dictionary will be skipped.
    :param multi_value_keys: Dictionary keys which could have multiple values.
    """
    maximum_length = max(map(len, verbose_names_mapping.values()))
    rendered = []
    for key, verbose_name in verbose_names_mapping.items():
        if key not in dictionary:
            continue
        value = dictionary[key]
        if key in multi_value_keys and isinstance(value, (list, set, tuple)):
            if not value:
                rendered.append(f"{verbose_name:>{maximum_length}}:")
            else:
                joined = ", ".join(map(_format_value, value))
                rendered.append(f"{verbose_name:>{maximum_length}}: {joined}")
        else:
            rendered.append(f"{verbose_name:>{maximum_length}}: {_format_value(value)}")
    return "\n".join(rendered)


def render_table(rows: Iterable[Mapping[str, Any]], columns: Sequence[str], delimiter: str = "\t") -> str:
    """
    Render the rows as delimited text with a header line.

    :param rows: The rows to render.
    :param columns: The keys to emit, in order.
    :param delimiter: The column separator.
    :return: The table, terminated by a newline.
    """
    lines = [delimiter.join(columns)]
    for row in rows:
        lines.append(delimiter.join(_format_value(row.get(column)) for column in columns))
    return "\n".join(lines) + "\n"
