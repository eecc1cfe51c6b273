"""Tests for achievability, the controller realization and rollouts."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from dphi_sls.errors import DimensionError, PreconditionError
from dphi_sls.model import ClosedLoop, FirTransferMatrix, Plant, Support, ring_plant
from dphi_sls.norms import NormKind, RegulationMap
from dphi_sls.sls import (
    ControllerState,
    Uncertainty,
    achievability_residual,
    closed_loop_rollout,
    controller_step,
    full_control_residual,
    sample_uncertainty,
    uncertain_rollout,
    uncertainty_norm,
)
from dphi_sls.tables import read_table


def _build_deadbeat(plant: Plant) -> ClosedLoop:
    """Two-tap loop for B = I: Phi_x = I z^-1 + A z^-2, Phi_u = -A^2 z^-2."""
    n = plant.n
    phi_x = FirTransferMatrix.from_taps([np.eye(n), plant.a])
    phi_u = FirTransferMatrix.from_taps([np.zeros((n, n)), -plant.a @ plant.a])
    return ClosedLoop(phi_x, phi_u, Support.full(n, n))


def test_deadbeat_loop_is_achievable() -> None:
    """The two-tap loop satisfies the FIR achievability equations exactly."""
    plant = ring_plant(5, 2.0, 4)

    assert achievability_residual(plant, _build_deadbeat(plant)) < 1e-12


def test_residual_reports_a_perturbed_first_tap() -> None:
    """Changing Phi_x(1) shows up in the residual."""
    plant = ring_plant(4, 1.5, 2)
    loop = _build_deadbeat(plant)
    taps = loop.phi_x.taps.copy()
    taps[0, 1, 2] = 0.01
    tampered = ClosedLoop(FirTransferMatrix(taps), loop.phi_u, loop.support)

    assert achievability_residual(plant, tampered) == pytest.approx(0.01)


def test_residual_checks_dimensions() -> None:
    """The closed loop must match the plant."""
    plant = ring_plant(4, 1.0, 0)
    with pytest.raises(DimensionError):
        achievability_residual(ring_plant(5, 1.0, 0), _build_deadbeat(plant))


def test_full_control_residual_of_the_transposed_loop() -> None:
    """Transposing an achievable state-feedback loop solves the dual problem."""
    plant = ring_plant(4, 1.2, 6)
    loop = _build_deadbeat(plant)

    residual = full_control_residual(
        plant.a.T, plant.b.T, loop.phi_x.transpose(), loop.phi_u.transpose()
    )

    assert residual < 1e-12


def test_impulse_response_reproduces_phi_x() -> None:
    """The realized controller gives x[p] = Phi_x(p) w0 after an impulse."""
    plant = ring_plant(5, 2.5, 8)
    loop = _build_deadbeat(plant)
    w0 = np.array([1.0, -0.5, 0.0, 0.25, 2.0])

    trajectory = closed_loop_rollout(plant, loop, [w0], 6)

    assert np.allclose(trajectory.x[1], w0)
    assert np.allclose(trajectory.x[2], plant.a @ w0)
    assert np.allclose(trajectory.x[3:], 0.0)
    assert np.allclose(trajectory.u[2], -plant.a @ plant.a @ w0)


def _build_random_loop(plant: Plant, horizon: int, seed: int) -> ClosedLoop:
    """Random Phi_u taps; Phi_x follows the recursion and the last tap closes it."""
    n = plant.n
    rng = np.random.default_rng(seed)
    phi_x, phi_u = [np.eye(n)], []
    for _ in range(horizon - 1):
        phi_u.append(0.3 * rng.standard_normal((n, n)))
        phi_x.append(plant.a @ phi_x[-1] + phi_u[-1])
    phi_u.append(-plant.a @ phi_x[-1])
    return ClosedLoop(
        FirTransferMatrix.from_taps(phi_x),
        FirTransferMatrix.from_taps(phi_u),
        Support.full(n, n),
    )


@pytest.mark.parametrize("seed", range(10))
def test_realized_controller_reproduces_the_stored_taps(seed: int) -> None:
    """Every impulse response of the realized loop matches its column of taps."""
    plant = ring_plant(6, 1.5, seed)
    horizon = 8
    loop = _build_random_loop(plant, horizon, seed)
    assert achievability_residual(plant, loop) <= 1e-9

    for j in range(plant.n):
        trajectory = closed_loop_rollout(plant, loop, [np.eye(plant.n)[j]], horizon + 2)

        assert np.allclose(
            trajectory.x[1 : horizon + 1], loop.phi_x.taps[:, :, j], atol=1e-6
        )
        assert np.allclose(
            trajectory.u[1 : horizon + 1], loop.phi_u.taps[:, :, j], atol=1e-6
        )
        assert np.allclose(trajectory.x[horizon + 1 :], 0.0, atol=1e-6)


def test_controller_state_reset_clears_history() -> None:
    """After reset the controller behaves as freshly built."""
    plant = ring_plant(4, 1.0, 1)
    state = ControllerState(_build_deadbeat(plant))
    first = controller_step(state, np.ones(4))
    controller_step(state, np.zeros(4))

    state.reset()

    assert np.allclose(controller_step(state, np.ones(4)), first)
    with pytest.raises(DimensionError):
        controller_step(state, np.ones(3))


def test_trajectory_csv_columns(tmp_path: Path) -> None:
    """Trajectories are written with t, x_i and u_k columns."""
    plant = ring_plant(3, 1.0, 0)
    trajectory = closed_loop_rollout(plant, _build_deadbeat(plant), [np.ones(3)], 3)
    path = tmp_path / "trajectory.csv"

    trajectory.to_csv(path)

    _, rows = read_table(path)
    assert len(rows) == 4
    assert list(rows[0]) == ["t", "x_1", "x_2", "x_3", "u_1", "u_2", "u_3"]
    assert float(rows[1]["x_2"]) == 1.0


@pytest.mark.parametrize("kind", [NormKind.L1, NormKind.LINF, NormKind.NU])
def test_sampled_uncertainty_meets_its_bound(kind: NormKind) -> None:
    """Sampled gains are scaled to the declared bound."""
    uncertainty = sample_uncertainty(6, kind, 0.3, 5, 200)

    assert uncertainty.gains.shape == (200, 6)
    assert uncertainty_norm(uncertainty.gains, kind) == pytest.approx(0.3)


def test_uncertainty_rejects_gains_over_the_bound() -> None:
    """Declared bounds are checked against the gains."""
    with pytest.raises(PreconditionError):
        Uncertainty(gains=np.full((3, 2), 0.5), bound=0.4, kind=NormKind.LINF)


def test_uncertain_rollout_without_uncertainty_is_bounded() -> None:
    """With zero gains the deadbeat loop settles after the impulse."""
    plant = ring_plant(5, 3.0, 7)
    loop = _build_deadbeat(plant)
    uncertainty = sample_uncertainty(5, NormKind.NU, 0.0, 1, 50)

    rollout = uncertain_rollout(
        plant, loop, RegulationMap.diagonal(5, 5), uncertainty, 50, 3
    )

    assert rollout.bounded
    assert np.allclose(rollout.trajectory.x[3:], 0.0)


def test_uncertain_rollout_flags_divergence() -> None:
    """A large positive feedback gain makes the loop blow up."""
    plant = Plant(a=np.array([[0.0]]), b=np.array([[1.0]]))
    phi_x = FirTransferMatrix.from_taps([np.eye(1)])
    phi_u = FirTransferMatrix.from_taps([np.zeros((1, 1))])
    loop = ClosedLoop(phi_x, phi_u, Support.full(1, 1))
    uncertainty = Uncertainty(gains=np.full((1, 1), 3.0), bound=3.0, kind=NormKind.NU)

    rollout = uncertain_rollout(
        plant,
        loop,
        RegulationMap.diagonal(1, 1),
        uncertainty,
        400,
        0,
        impulse=[1.0],
    )

    assert not rollout.bounded
