"""Tests for the neighborhood consensus nu D step."""

from __future__ import annotations

import math
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from dphi_sls.dstep import dstep_min_nu_consensus, dstep_min_nu_lp
from dphi_sls.dstep.consensus import metropolis_weights
from dphi_sls.errors import DimensionError, PreconditionError
from dphi_sls.model import Support, dhop_support, ring_plant
from dphi_sls.norms import NormKind, scaled_norm
from dphi_sls.phistep import AdmmConfig
from dphi_sls.tables import read_table

_ADMM = AdmmConfig(max_iter=5000)


def _build_ring_magnitude(n: int, seed: int) -> np.ndarray:
    """Magnitude matrix supported on the 1-hop ring pattern."""
    rng = np.random.default_rng(seed)
    m = np.zeros((n, n))
    for i in range(n):
        for j in (i - 1, i, i + 1):
            m[i, j % n] = rng.uniform(0.2, 1.5)
    return m


def test_metropolis_weights_are_doubly_stochastic() -> None:
    """Rows and columns of the averaging matrix sum to one."""
    weights = metropolis_weights(nx.path_graph(4))

    assert np.allclose(weights.sum(axis=0), 1.0)
    assert np.allclose(weights.sum(axis=1), 1.0)
    assert np.allclose(weights, weights.T)
    assert weights[0, 3] == 0.0


def test_single_node_consensus() -> None:
    """One node reduces to its own diagonal entry."""
    result = dstep_min_nu_consensus(
        np.array([[0.7]]), Support.full(1, 1), _ADMM, 0
    )

    assert result.scaling.beta == pytest.approx(0.7, rel=1e-6)


def test_two_node_consensus_matches_the_central_lp() -> None:
    """Two neighbors agree on the centralized optimum 4."""
    m = np.array([[0.0, 2.0], [8.0, 0.0]])

    result = dstep_min_nu_consensus(m, Support.full(2, 2), _ADMM, 1, threads=2)

    assert result.scaling.beta >= 4.0 * (1 - 1e-6)
    assert result.scaling.beta == pytest.approx(4.0, rel=1e-2)


def test_ring_consensus_certifies_its_level(tmp_path: Path) -> None:
    """On a ring the agreed scaling certifies the returned level."""
    plant = ring_plant(5, 1.0, 3)
    support = dhop_support(plant, 1)
    m = _build_ring_magnitude(5, 3)
    csv = tmp_path / "consensus.csv"

    result = dstep_min_nu_consensus(m, support, _ADMM, 2, disagreement_csv=csv)

    central = dstep_min_nu_lp(m).scaling.beta
    assert scaled_norm(m, result.scaling, NormKind.NU) == pytest.approx(
        result.scaling.beta
    )
    assert central * (1 - 1e-6) <= result.scaling.beta <= central * 1.01
    _, rows = read_table(csv)
    assert list(rows[0]) == ["iter", "max_eta_spread", "max_l_spread"]
    assert int(rows[0]["iter"]) == 1


def test_consensus_of_the_zero_matrix() -> None:
    """Without entries the identity scaling is returned at once."""
    result = dstep_min_nu_consensus(np.zeros((3, 3)), Support.full(3, 3), _ADMM, 0)

    assert result.eta == -math.inf
    assert result.scaling.beta == 0.0


def test_consensus_needs_local_rows() -> None:
    """Row i of M may only reach the neighborhood of node i."""
    plant = ring_plant(5, 1.0, 0)
    m = np.zeros((5, 5))
    m[0, 2] = 1.0

    with pytest.raises(PreconditionError):
        dstep_min_nu_consensus(m, dhop_support(plant, 1), _ADMM, 0)


def test_consensus_checks_the_support_size() -> None:
    """The support must have one neighborhood per row of M."""
    with pytest.raises(DimensionError):
        dstep_min_nu_consensus(np.eye(3), Support.full(2, 2), _ADMM, 0)
