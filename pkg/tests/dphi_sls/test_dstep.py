"""Tests for the minimizing, randomizing and iterative D steps."""

from __future__ import annotations

import math

import numpy as np
import pytest

from dphi_sls.dstep import (
    ConsensusDStep,
    DStepMode,
    MinimizingDStep,
    RandomizingDStep,
    build_dstep,
    dstep_iterative_min,
    dstep_min_l1,
    dstep_min_linf,
    dstep_min_nu_lp,
    dstep_randomize,
    minimize_scaling,
)
from dphi_sls.errors import ConfigError, PreconditionError, UnsupportedError
from dphi_sls.model import Support, dhop_support, ring_plant
from dphi_sls.norms import NormKind, scaled_norm

_SWAP = np.array([[0.0, 2.0], [8.0, 0.0]])


def _build_sparse_matrix(seed: int, n: int = 5) -> np.ndarray:
    """Random nonnegative matrix with a ring so that a cycle always exists."""
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.1, 2.0, size=(n, n)) * (rng.random((n, n)) < 0.4)
    for i in range(n):
        m[i, (i + 1) % n] = rng.uniform(0.1, 2.0)
    return m


def _build_ring_magnitude(seed: int) -> np.ndarray:
    """Random magnitudes on the two-hop pattern of a ten-node ring."""
    support = dhop_support(ring_plant(10, 3.0, seed), 2)
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 3.0, size=(10, 10)) * support.mask


def _karp_max_cycle_mean(m: np.ndarray) -> float:
    """Karp's recursion on heaviest walks of every length, arc weights log M_ij."""
    n = m.shape[0]
    weights = np.full((n, n), -np.inf)
    weights[m > 0] = np.log(m[m > 0])
    walks = np.full((n + 1, n), -np.inf)
    walks[0] = 0.0
    for k in range(1, n + 1):
        walks[k] = np.max(walks[k - 1][:, None] + weights, axis=0)
    best = -math.inf
    for v in np.flatnonzero(np.isfinite(walks[n])):
        means = [
            (walks[n, v] - walks[k, v]) / (n - k)
            for k in range(n)
            if np.isfinite(walks[k, v])
        ]
        best = max(best, min(means))
    return best


@pytest.mark.parametrize(
    ("m", "expected"),
    [
        (_SWAP, 4.0),
        (np.diag([1.0, 3.0]), 3.0),
        (np.ones((3, 3)), 1.0),
    ],
)
def test_nu_lp_on_small_matrices(m: np.ndarray, expected: float) -> None:
    """The nu level is the geometric mean around the heaviest cycle."""
    result = dstep_min_nu_lp(m)

    assert result.scaling.beta == pytest.approx(expected, rel=1e-6)
    assert scaled_norm(m, result.scaling, NormKind.NU) == pytest.approx(
        expected, rel=1e-6
    )
    assert not result.clamped


@pytest.mark.parametrize("seed", range(50))
def test_nu_lp_matches_the_max_cycle_mean(seed: int) -> None:
    """The LP optimum is the maximum cycle mean of log M."""
    m = _build_ring_magnitude(seed)

    result = dstep_min_nu_lp(m)

    assert result.eta == pytest.approx(_karp_max_cycle_mean(m), abs=1e-8)


def test_nu_lp_of_the_zero_matrix() -> None:
    """With no entries the level is zero and the scaling is the identity."""
    result = dstep_min_nu_lp(np.zeros((3, 3)))

    assert result.scaling.beta == 0.0
    assert result.eta == -math.inf
    assert np.allclose(result.scaling.log_values, 0.0)


def test_nu_lp_clamps_an_acyclic_pattern() -> None:
    """A strictly triangular M can be scaled towards zero and is clamped."""
    result = dstep_min_nu_lp(np.array([[0.0, 1.0], [0.0, 0.0]]))

    assert result.clamped
    assert result.scaling.beta <= 1e-9


def test_nu_lp_rejects_negative_entries() -> None:
    """Magnitude matrices are nonnegative."""
    with pytest.raises(PreconditionError):
        dstep_min_nu_lp(np.array([[1.0, -1.0], [0.0, 1.0]]))


def test_perron_scalings_of_the_swap_matrix() -> None:
    """Both Perron steps reach the spectral radius 4."""
    l1 = dstep_min_l1(_SWAP)
    linf = dstep_min_linf(_SWAP)

    assert l1.beta == pytest.approx(4.0)
    assert scaled_norm(_SWAP, l1, NormKind.L1) == pytest.approx(4.0)
    assert linf.beta == pytest.approx(4.0)
    assert scaled_norm(_SWAP, linf, NormKind.LINF) == pytest.approx(4.0)


@pytest.mark.parametrize("seed", range(50))
def test_perron_scaling_reaches_the_spectral_radius(seed: int) -> None:
    """On an irreducible matrix both scaled norms equal the spectral radius."""
    m = _build_sparse_matrix(seed, n=3 + seed % 8)
    radius = float(np.max(np.abs(np.linalg.eigvals(m))))

    scaling = dstep_min_l1(m)
    transposed = dstep_min_linf(m)

    assert scaled_norm(m, transposed, NormKind.LINF) == pytest.approx(
        radius, rel=1e-6
    )

    assert scaling.beta == pytest.approx(radius, rel=1e-6)
    assert scaled_norm(m, scaling, NormKind.L1) == pytest.approx(radius, rel=1e-6)


def test_perron_step_without_couplings() -> None:
    """A diagonal M needs no scaling."""
    scaling = dstep_min_l1(np.diag([1.0, 3.0]))

    assert scaling.beta == 3.0
    assert np.allclose(scaling.log_values, 0.0)


def test_perron_step_handles_a_reducible_matrix() -> None:
    """A triangular M is perturbed into an irreducible one."""
    m = np.array([[1.0, 0.5], [0.0, 2.0]])

    scaling = dstep_min_l1(m)

    assert scaled_norm(m, scaling, NormKind.L1) <= scaling.beta * (1 + 1e-6)
    assert scaling.beta == pytest.approx(2.0, rel=1e-3)


def test_minimize_scaling_rejects_h2() -> None:
    """H2 has no minimizing D step."""
    with pytest.raises(UnsupportedError):
        minimize_scaling(_SWAP, NormKind.H2)


@pytest.mark.parametrize("kind", [NormKind.L1, NormKind.LINF, NormKind.NU])
def test_randomize_finds_a_scaling_above_the_minimum(kind: NormKind) -> None:
    """Any beta above the optimum 4 is certified by some scaling."""
    scaling = dstep_randomize(_SWAP, 5.0, kind, 7)

    assert scaling is not None
    assert scaled_norm(_SWAP, scaling, kind) <= 5.0 * (1 + 1e-7)


@pytest.mark.parametrize("kind", [NormKind.L1, NormKind.LINF, NormKind.NU])
def test_randomize_reports_an_unreachable_beta(kind: NormKind) -> None:
    """Below the optimum there is no scaling."""
    assert dstep_randomize(_SWAP, 3.0, kind, 7) is None


def test_randomize_with_an_unconstrained_beta() -> None:
    """An infinite beta needs no search."""
    scaling = dstep_randomize(_SWAP, math.inf, NormKind.NU, 0)

    assert scaling is not None
    assert np.allclose(scaling.log_values, 0.0)


def test_randomize_is_reproducible() -> None:
    """The same seed gives the same scaling."""
    first = dstep_randomize(_SWAP, 6.0, NormKind.NU, 11)
    second = dstep_randomize(_SWAP, 6.0, NormKind.NU, 11)

    assert first is not None and second is not None
    assert np.array_equal(first.log_values, second.log_values)


def test_randomize_rejects_a_nonpositive_beta() -> None:
    """Beta must be positive."""
    with pytest.raises(PreconditionError):
        dstep_randomize(_SWAP, 0.0, NormKind.NU, 0)


def test_iterative_min_brackets_the_optimum() -> None:
    """Bisection stops within beta_step of the optimum."""
    scaling, level = dstep_iterative_min(_SWAP, NormKind.NU, 0.01, 3)

    assert 4.0 * (1 - 1e-6) <= level <= 4.01 + 1e-6
    assert scaled_norm(_SWAP, scaling, NormKind.NU) <= level * (1 + 1e-6)


def test_build_dstep_selects_the_implementation() -> None:
    """The factory returns the step matching mode and consensus."""
    support = Support.full(2, 2)

    assert isinstance(build_dstep(mode="minimize", kind=NormKind.L1), MinimizingDStep)
    assert isinstance(
        build_dstep(mode=DStepMode.RANDOMIZE, kind=NormKind.LINF), RandomizingDStep
    )
    consensus = build_dstep(
        mode="minimize", kind=NormKind.NU, consensus=True, support=support
    )
    assert isinstance(consensus, ConsensusDStep)
    assert consensus.distributed


def test_build_dstep_rejects_bad_requests() -> None:
    """Unknown modes, H2 and centralized consensus requests are refused."""
    with pytest.raises(ConfigError):
        build_dstep(mode="anneal", kind=NormKind.NU)
    with pytest.raises(UnsupportedError):
        build_dstep(mode="minimize", kind=NormKind.H2)
    with pytest.raises(ConfigError):
        build_dstep(mode="minimize", kind=NormKind.L1, consensus=True)
    with pytest.raises(ConfigError):
        build_dstep(mode="minimize", kind=NormKind.NU, consensus=True)


async def test_minimizing_step_runs_off_the_event_loop() -> None:
    """The async step returns the same level as the direct call."""
    step = build_dstep(mode="minimize", kind=NormKind.NU)

    result = await step.async_step(_SWAP, beta=math.inf, seed=0)

    assert result is not None
    assert result.beta == pytest.approx(4.0, rel=1e-6)
