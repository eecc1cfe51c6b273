"""Tests for the LQR baseline."""

from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg

from dphi_sls.baseline import (
    dare_solve,
    lqr_closed_loop,
    lqr_margin,
    riccati_residual,
)
from dphi_sls.errors import DimensionError, PreconditionError
from dphi_sls.model import Plant, ring_plant
from dphi_sls.norms import NormKind, RegulationMap, magnitude_matrix
from dphi_sls.sls import achievability_residual


def test_scalar_riccati_solution() -> None:
    """For a=2, b=1, q=1, r=50 the solution solves P^2 - 151 P - 50 = 0."""
    solution = dare_solve(2.0, 1.0, 1.0, 50.0)

    expected = (151.0 + math.sqrt(23001.0)) / 2.0
    assert solution.p[0, 0] == pytest.approx(expected, rel=1e-6)
    assert solution.k[0, 0] == pytest.approx(2 * expected / (50 + expected), rel=1e-6)
    assert solution.cost == pytest.approx(expected, rel=1e-6)
    assert solution.closed_loop_radius < 1


def test_riccati_matches_scipy_on_a_ring() -> None:
    """The fixed-point iteration agrees with the Schur-based solver."""
    plant = ring_plant(5, 1.8, 4)

    solution = dare_solve(plant.a, plant.b, 1.0, 50.0)

    reference = scipy.linalg.solve_discrete_are(
        plant.a, plant.b, np.eye(5), 50.0 * np.eye(5)
    )
    assert np.allclose(solution.p, reference, rtol=1e-6)
    assert riccati_residual(plant.a, plant.b, 1.0, 50.0, solution.p) < 1e-6


def test_riccati_of_the_zero_dynamics() -> None:
    """With A = 0 the solution is Qx and the gain vanishes."""
    qx = np.diag([1.0, 2.0])

    solution = dare_solve(np.zeros((2, 2)), np.eye(2), qx, 1.0)

    assert np.allclose(solution.p, qx)
    assert np.allclose(solution.k, 0.0)
    assert solution.closed_loop_radius == 0.0


def test_riccati_rejects_bad_penalties() -> None:
    """Qu must be positive definite and A must be square."""
    with pytest.raises(PreconditionError):
        dare_solve(2.0, 1.0, 1.0, -1.0)
    with pytest.raises(PreconditionError):
        dare_solve(2.0, 1.0, -1.0, 1.0)
    with pytest.raises(DimensionError):
        dare_solve(np.ones((2, 3)), np.ones((2, 1)), 1.0, 1.0)


def test_truncated_loop_is_the_gain_response() -> None:
    """Phi_x(p) = (A - BK)^(p-1) and the residual is the dropped tail."""
    plant = Plant(a=np.array([[2.0]]), b=np.array([[1.0]]))
    solution = dare_solve(plant.a, plant.b, 1.0, 50.0)
    closed = 2.0 - solution.k[0, 0]

    truncated = lqr_closed_loop(plant, solution.k, 4)

    taps = truncated.closed_loop.phi_x.taps[:, 0, 0]
    assert taps == pytest.approx([1.0, closed, closed**2, closed**3])
    assert truncated.tail == pytest.approx(abs(closed) ** 4)
    assert achievability_residual(plant, truncated.closed_loop) == pytest.approx(
        truncated.tail
    )


def test_truncated_loop_rejects_an_unstable_gain() -> None:
    """A - BK must be stable."""
    plant = Plant(a=np.array([[2.0]]), b=np.array([[1.0]]))

    with pytest.raises(PreconditionError):
        lqr_closed_loop(plant, [[0.5]], 4)
    with pytest.raises(DimensionError):
        lqr_closed_loop(plant, [[1.0, 1.0]], 4)


def test_lqr_margin_is_at_least_the_diagonal() -> None:
    """No scaling moves the diagonal of M, so it bounds the minimized beta."""
    plant = ring_plant(4, 1.5, 0)
    solution = dare_solve(plant.a, plant.b, 1.0, 50.0)
    truncated = lqr_closed_loop(plant, solution.k, 30)
    regulation = RegulationMap.diagonal(4, 4)

    beta = lqr_margin(truncated.closed_loop, regulation, NormKind.NU)

    diagonal = np.diag(magnitude_matrix(truncated.closed_loop, regulation))
    assert beta >= float(np.max(diagonal)) * (1 - 1e-6)
    assert math.isfinite(beta)
