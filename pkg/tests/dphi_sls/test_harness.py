"""Tests for the command implementations and the command line."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from dphi_sls.__main__ import main
from dphi_sls.config import dump_controller, dump_plant, load_controller, load_plant
from dphi_sls.dstep import minimize_scaling
from dphi_sls.harness import pattern_support, verify_controller
from dphi_sls.model import ClosedLoop, FirTransferMatrix, dhop_support, ring_plant
from dphi_sls.norms import NormKind, RegulationMap, magnitude_matrix
from dphi_sls.tables import read_table


def _build_deadbeat_files(
    tmp_path: Path, *, hops: int = 2, tamper: bool = False
) -> tuple[Path, Path]:
    """Store a six-node ring and its two-tap deadbeat loop with the nu margin."""
    plant = ring_plant(6, 2.0, 9)
    plant_path = tmp_path / "plant.json"
    dump_plant(plant, plant_path)
    first = np.eye(6)
    if tamper:
        first[0, 0] = 1.5
    loop = ClosedLoop(
        FirTransferMatrix.from_taps([first, plant.a]),
        FirTransferMatrix.from_taps([np.zeros((6, 6)), -plant.a @ plant.a]),
        dhop_support(plant, 2),
    )
    regulation = RegulationMap.diagonal(6, 6)
    best = minimize_scaling(magnitude_matrix(loop, regulation), NormKind.NU)
    controller_path = tmp_path / "controller.json"
    dump_controller(
        controller_path,
        loop,
        beta=best.beta,
        criterion=NormKind.NU,
        scaling=best.scaling,
        regulation=regulation,
    )
    if hops != 2:
        document = json.loads(controller_path.read_text(encoding="utf-8"))
        document["hops"] = hops
        controller_path.write_text(json.dumps(document), encoding="utf-8")
    return plant_path, controller_path


def _verify(plant_path: Path, controller_path: Path) -> dict[str, bool]:
    checks = verify_controller(
        load_controller(controller_path), load_plant(plant_path), seeds=2
    )
    return {check.name: check.passed for check in checks}


def _write_experiment(tmp_path: Path, plant_path: Path) -> Path:
    path = tmp_path / "experiment.json"
    path.write_text(
        json.dumps(
            {
                "plant": {"file": str(plant_path)},
                "horizon": 4,
                "hops": 1,
                "beta_max": 1e6,
                "record_timing": False,
                "output_dir": str(tmp_path / "out"),
            }
        ),
        encoding="utf-8",
    )
    return path


def test_verify_accepts_the_stored_certificate(tmp_path: Path) -> None:
    """An achievable loop with its own margin passes the certificate checks."""
    checks = _verify(*_build_deadbeat_files(tmp_path))

    assert checks["achievability"]
    assert checks["support"]
    assert checks["margin"]
    assert checks["best nu"]


def test_verify_flags_a_tampered_first_tap(tmp_path: Path) -> None:
    """Changing Phi_x(1) breaks achievability."""
    checks = _verify(*_build_deadbeat_files(tmp_path, tamper=True))

    assert not checks["achievability"]


def test_verify_flags_a_support_violation(tmp_path: Path) -> None:
    """-A^2 reaches two hops, so a 1-hop claim fails."""
    checks = _verify(*_build_deadbeat_files(tmp_path, hops=1))

    assert not checks["support"]
    assert checks["achievability"]


def test_pattern_support_is_symmetric() -> None:
    """The support holds every node reached by M in either direction."""
    m = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 3.0]])

    support = pattern_support(m)

    assert support.neighborhoods == ((0, 1), (0, 1), (2,))
    assert support.hops == 1


def test_ring_gen_is_byte_stable(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """The same seed writes the same plant file."""
    paths = [tmp_path / "first.json", tmp_path / "second.json"]
    for path in paths:
        args = ["ring-gen", "--n", "6", "--rho", "2", "--seed", "3"]
        assert main([*args, "--output", str(path)]) == 0

    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert "wrote" in capsys.readouterr().out


def test_verify_command_exit_codes(tmp_path: Path) -> None:
    """verify exits 1 when any check fails."""
    plant_path, controller_path = _build_deadbeat_files(tmp_path, hops=1)
    args = ["verify", "--plant", str(plant_path), "--seeds", "1"]

    assert main([*args, "--controller", str(controller_path)]) == 1


def test_missing_input_is_an_error_exit(tmp_path: Path) -> None:
    """Unreadable documents are reported and exit with 1."""
    missing = str(tmp_path / "missing.json")

    assert main(["verify", "--controller", missing, "--plant", missing]) == 1


def test_dstep_command_prints_every_variant(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """The nu comparison lists all steps and the consensus result."""
    matrix = tmp_path / "m.json"
    matrix.write_text('{"M": [[0, 2], [8, 0]]}', encoding="utf-8")

    code = main(["dstep", "--matrix", str(matrix), "--kind", "nu"])

    lines = capsys.readouterr().out.splitlines()
    assert code == 0
    assert [line.split()[1] for line in lines] == [
        "minimize",
        "iteratively_minimize",
        "randomize",
        "consensus",
    ]
    assert float(lines[0].rpartition("=")[2]) == pytest.approx(4.0, rel=1e-6)


def test_dphi_command_writes_trace_and_controller(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """A loose target exits 0 and leaves both output files."""
    plant_path = tmp_path / "plant.json"
    dump_plant(ring_plant(4, 1.5, 2), plant_path)
    config = _write_experiment(tmp_path, plant_path)

    assert main(["dphi", "--config", str(config)]) == 0

    out = tmp_path / "out"
    provenance, rows = read_table(out / "trace.csv")
    assert provenance["beta_max"] == "1000000.0"
    assert rows[0]["phase"] == "phi-step"
    assert load_controller(out / "controller.json").hops == 1
    assert "outcome=target_met" in capsys.readouterr().out


def test_lqr_command_prints_the_baseline(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """The baseline lists the cost and one beta per criterion."""
    plant_path = tmp_path / "plant.json"
    dump_plant(ring_plant(4, 1.5, 2), plant_path)
    config = _write_experiment(tmp_path, plant_path)

    assert main(["lqr", "--config", str(config)]) == 0

    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("cost=")
    assert [line.split()[0] for line in lines[1:]] == ["l1", "linf", "nu"]


def test_sweep_command_writes_normalized_rows(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """One row per beta_max with the LQR normalization in the header."""
    plant_path = tmp_path / "plant.json"
    dump_plant(ring_plant(4, 1.5, 2), plant_path)
    config = _write_experiment(tmp_path, plant_path)

    code = main(["sweep", "--config", str(config), "--beta-max", "1e6", "inf"])

    provenance, rows = read_table(tmp_path / "out" / "sweep.csv")
    assert code == 0
    assert [row["beta_max"] for row in rows] == ["1000000.0", "inf"]
    assert "cost_lqr" in provenance
    assert all(float(row["cost_norm"]) > 0 for row in rows)
    assert "2 points" in capsys.readouterr().out
