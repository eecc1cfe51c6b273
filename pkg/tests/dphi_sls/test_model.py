"""Tests for plants, supports and FIR transfer matrices."""

from __future__ import annotations

import numpy as np
import pytest

from dphi_sls.errors import DimensionError, PreconditionError
from dphi_sls.model import (
    ClosedLoop,
    FirTransferMatrix,
    Plant,
    Support,
    dhop_support,
    dualize_full_control,
    perron_eigenpair,
    ring_plant,
    spectral_radius,
)


def _build_identity_loop(n: int, horizon: int, support: Support) -> ClosedLoop:
    """Return Phi_x = I z^-1 and Phi_u = 0 on the given support."""
    taps_x = np.zeros((horizon, n, n))
    taps_x[0] = np.eye(n)
    return ClosedLoop(
        phi_x=FirTransferMatrix(taps_x),
        phi_u=FirTransferMatrix.zeros(horizon, n, n),
        support=support,
    )


def test_ring_plant_hits_the_requested_spectral_radius() -> None:
    """The generated A is scaled to rho exactly and B is the identity."""
    plant = ring_plant(10, 3.0, 7)

    assert spectral_radius(plant.a) == pytest.approx(3.0, rel=1e-9)
    assert np.array_equal(plant.b, np.eye(10))
    assert plant.graph.number_of_edges() == 10
    assert plant.seed == 7


def test_ring_plant_only_couples_ring_neighbors() -> None:
    """Entries off the ring are zero and the diagonal is empty."""
    plant = ring_plant(6, 2.0, 1)
    n = plant.n
    for i in range(n):
        for j in range(n):
            neighbors = j in ((i - 1) % n, (i + 1) % n)
            assert (plant.a[i, j] != 0) == neighbors


def test_ring_plant_is_deterministic_per_seed() -> None:
    """The same seed gives the same plant, another seed does not."""
    assert np.array_equal(ring_plant(8, 3.0, 11).a, ring_plant(8, 3.0, 11).a)
    assert not np.array_equal(ring_plant(8, 3.0, 11).a, ring_plant(8, 3.0, 12).a)


def test_ring_plant_rejects_tiny_rings() -> None:
    """A ring needs at least three nodes."""
    with pytest.raises(PreconditionError):
        ring_plant(2, 1.0, 0)


def test_dhop_support_on_a_ring() -> None:
    """One hop reaches both ring neighbors; zero hops is the diagonal."""
    plant = ring_plant(6, 1.5, 3)

    one_hop = dhop_support(plant, 1)
    assert one_hop.neighborhoods[0] == (0, 1, 5)
    assert np.array_equal(one_hop.mask, one_hop.mask.T)
    assert np.array_equal(one_hop.input_mask, one_hop.mask)

    local = dhop_support(plant, 0)
    assert np.array_equal(local.mask, np.eye(6, dtype=bool))

    wide = dhop_support(plant, 3)
    assert wide.mask.all()


def test_dhop_support_rejects_negative_hops() -> None:
    """Hop counts are nonnegative."""
    with pytest.raises(PreconditionError):
        dhop_support(ring_plant(4, 1.0, 0), -1)


def test_plant_document_keeps_every_field() -> None:
    """A plant survives its JSON document form."""
    plant = ring_plant(5, 2.5, 9)

    restored = Plant.from_document(plant.to_document())

    assert np.array_equal(restored.a, plant.a)
    assert np.array_equal(restored.b, plant.b)
    assert sorted(restored.graph.edges) == sorted(plant.graph.edges)
    assert restored.seed == 9


def test_plant_derives_graph_from_coupling() -> None:
    """Without an explicit graph, nonzero couplings define the edges."""
    a = np.array([[0.5, 0.1, 0.0], [0.0, 0.5, 0.0], [0.0, 0.2, 0.5]])
    plant = Plant(a=a, b=np.eye(3))

    edges = sorted(tuple(sorted(edge)) for edge in plant.graph.edges)
    assert edges == [(0, 1), (1, 2)]


def test_plant_rejects_mismatched_input_matrix() -> None:
    """B must have as many rows as A."""
    with pytest.raises(DimensionError):
        Plant(a=np.eye(3), b=np.ones((2, 1)))


def test_perron_eigenpair_of_a_periodic_matrix() -> None:
    """The shifted iteration converges on a 2-periodic matrix."""
    rho, v = perron_eigenpair(np.array([[0.0, 2.0], [8.0, 0.0]]))

    assert rho == pytest.approx(4.0, rel=1e-9)
    assert np.all(v > 0)
    assert v.sum() == pytest.approx(1.0)
    assert v[0] / v[1] == pytest.approx(0.5, rel=1e-6)


def test_fir_tap_indexing() -> None:
    """Taps are indexed from 1 to the horizon."""
    fir = FirTransferMatrix.from_taps([np.eye(2), 2 * np.eye(2)])

    assert fir.horizon == 2
    assert np.array_equal(fir.tap(2), 2 * np.eye(2))
    with pytest.raises(PreconditionError):
        fir.tap(3)


def test_fir_taps_are_read_only() -> None:
    """Stored taps cannot be modified in place."""
    fir = FirTransferMatrix.zeros(2, 2, 2)

    with pytest.raises(ValueError):
        fir.taps[0, 0, 0] = 1.0


def test_closed_loop_rejects_entries_off_support() -> None:
    """A closed loop may only be nonzero on its support."""
    plant = ring_plant(5, 1.0, 0)
    support = dhop_support(plant, 0)
    loop = _build_identity_loop(5, 3, support)
    assert loop.horizon == 3

    taps = np.zeros((3, 5, 5))
    taps[0] = np.eye(5)
    taps[1, 0, 2] = 0.1
    with pytest.raises(PreconditionError):
        ClosedLoop(
            phi_x=FirTransferMatrix(taps),
            phi_u=FirTransferMatrix.zeros(3, 5, 5),
            support=support,
        )


def test_full_control_dual_transposes_the_plant() -> None:
    """The dual plant is (A^T, C^T) with one input per measurement."""
    a = np.array([[1.0, 2.0], [0.0, 3.0]])
    c = np.array([[1.0, 0.0]])

    dual = dualize_full_control(a, c)

    assert np.array_equal(dual.a, a.T)
    assert np.array_equal(dual.b, [[1.0], [0.0]])
    assert dual.m == 1
    with pytest.raises(DimensionError):
        dualize_full_control(a, np.ones((1, 3)))
