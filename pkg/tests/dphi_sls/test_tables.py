"""Tests for CSV tables with provenance headers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from dphi_sls.tables import read_table, write_table


def test_table_keeps_provenance_and_cell_formats(tmp_path: Path) -> None:
    """Provenance lines precede the header; floats keep their repr."""
    path = tmp_path / "nested" / "table.csv"

    write_table(
        path,
        ["k", "beta", "feasible"],
        [[1, 0.1 + 0.2, True], [2, np.float64(2.5), np.bool_(False)]],
        {"seed": 7, "stab": "nu"},
    )

    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[:3] == ["# seed: 7", "# stab: nu", "k,beta,feasible"]
    assert "1,0.30000000000000004,true" in text
    provenance, rows = read_table(path)
    assert provenance == {"seed": "7", "stab": "nu"}
    assert rows[1] == {"k": "2", "beta": "2.5", "feasible": "false"}


def test_table_writes_infinity_readably(tmp_path: Path) -> None:
    """An unconstrained beta is written as inf."""
    path = tmp_path / "table.csv"

    write_table(path, ["beta"], [[float("inf")]])

    assert read_table(path)[1] == [{"beta": "inf"}]


def test_table_rejects_ragged_rows(tmp_path: Path) -> None:
    """Every row must have one cell per column."""
    with pytest.raises(ValueError):
        write_table(tmp_path / "table.csv", ["a", "b"], [[1]])
