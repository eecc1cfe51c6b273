"""Tests for induced norms, scalings and the magnitude matrix."""

from __future__ import annotations

import math

import numpy as np
import pytest

from dphi_sls.errors import DimensionError, PreconditionError
from dphi_sls.model import ClosedLoop, FirTransferMatrix, Support
from dphi_sls.norms import (
    DiagonalScaling,
    NormKind,
    RegulationMap,
    induced_norm,
    magnitude_matrix,
    margin,
    scale,
    scaled_norm,
)


def test_induced_norms_of_a_small_matrix() -> None:
    """L1 is the max row sum, Linf the max column sum, nu the max entry."""
    m = np.array([[1.0, -2.0], [3.0, 4.0]])

    assert induced_norm(m, NormKind.L1) == 7.0
    assert induced_norm(m, NormKind.LINF) == 6.0
    assert induced_norm(m, NormKind.NU) == 4.0
    assert induced_norm(np.zeros((0, 0)), NormKind.L1) == 0.0


def test_only_h2_is_not_a_stability_criterion() -> None:
    """H2 is a performance objective only."""
    assert not NormKind.H2.is_stability_criterion
    assert all(
        kind.is_stability_criterion
        for kind in (NormKind.L1, NormKind.LINF, NormKind.NU)
    )


def test_diagonal_scaling_fixes_the_gauge() -> None:
    """Log values are shifted to sum to zero."""
    scaling = DiagonalScaling(np.array([1.0, 3.0]))

    assert np.allclose(scaling.log_values, [-1.0, 1.0])
    assert scaling.log_values.sum() == pytest.approx(0.0)
    assert math.isinf(scaling.beta)


def test_diagonal_scaling_rejects_nonpositive_entries() -> None:
    """D must be positive."""
    with pytest.raises(PreconditionError):
        DiagonalScaling.from_diagonal([1.0, 0.0])


def test_scale_multiplies_by_the_diagonal_ratios() -> None:
    """D M D^-1 has entries M_ij d_i / d_j."""
    m = np.array([[0.0, 2.0], [8.0, 0.0]])
    scaling = DiagonalScaling.from_diagonal([1.0, 2.0])

    scaled = scale(m, scaling)

    assert scaled[0, 1] == pytest.approx(1.0)
    assert scaled[1, 0] == pytest.approx(16.0)
    assert scaled_norm(m, scaling.inverse(), NormKind.NU) == pytest.approx(4.0)


def test_scale_checks_dimensions() -> None:
    """The scaling must match the matrix size."""
    with pytest.raises(DimensionError):
        scale(np.eye(3), DiagonalScaling.identity(2))


def test_margin_is_the_reciprocal_of_beta() -> None:
    """The stability margin is 1 / beta, and zero for an unconstrained beta."""
    assert margin(4.0) == 0.25
    assert margin(math.inf) == 0.0
    with pytest.raises(PreconditionError):
        margin(0.0)


def test_magnitude_matrix_sums_absolute_taps() -> None:
    """M adds |Hx Phi_x(p) + Hu Phi_u(p)| over the taps."""
    second = np.array([[0.5, -0.25], [0.0, 0.5]])
    phi_x = FirTransferMatrix.from_taps([np.eye(2), second])
    phi_u = FirTransferMatrix.from_taps([-np.eye(2), np.zeros((2, 2))])
    loop = ClosedLoop(phi_x, phi_u, Support.full(2, 2))

    m = magnitude_matrix(loop, RegulationMap.diagonal(2, 2, hx=1.0, hu=2.0))

    assert np.allclose(m, [[1.5, 0.25], [0.0, 1.5]])


def test_regulation_map_copies_its_input() -> None:
    """Freezing the stored blocks leaves the caller's arrays writable."""
    hx = np.eye(2)
    regulation = RegulationMap(hx, np.eye(2))
    hx[0, 0] = 3.0

    assert regulation.hx[0, 0] == 1.0
    assert regulation.separably_diagonal


def test_diagonal_regulation_needs_square_input() -> None:
    """The diagonal regulation map needs one input per state."""
    with pytest.raises(DimensionError):
        RegulationMap.diagonal(3, 2)
