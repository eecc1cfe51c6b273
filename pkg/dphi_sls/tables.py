"""CSV tables with a provenance comment header."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
import csv
from pathlib import Path

import numpy as np


def _cell(value: object) -> str:
    if isinstance(value, bool | np.bool_):
        return "true" if value else "false"
    if isinstance(value, float | np.floating):
        return repr(float(value))
    return str(value)


def write_table(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[object]],
    provenance: Mapping[str, object] | None = None,
) -> None:
    """Write `# key: value` lines, the column row, then one line per row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        for key, value in (provenance or {}).items():
            handle.write(f"# {key}: {value}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} cells, expected {len(columns)}")
            writer.writerow([_cell(value) for value in row])


def read_table(path: Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Return the provenance header and the rows of a table written by write_table."""
    provenance: dict[str, str] = {}
    body: list[str] = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("# ") and not body:
                key, _, value = line[2:].rstrip("\n").partition(": ")
                provenance[key] = value
            else:
                body.append(line)
    return provenance, list(csv.DictReader(body))
