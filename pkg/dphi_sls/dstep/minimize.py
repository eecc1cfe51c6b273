"""Centralized minimizing D steps: the nu linear program and the Perron scalings."""

from __future__ import annotations

import logging
import math
from typing import NamedTuple

import networkx as nx
import numpy as np
from numpy.typing import ArrayLike

from ..const import (
    BETA_FLOOR,
    LOG_SCALING_BOUND,
    PERRON_CERTIFICATE_SLACK,
    PERRON_PERTURBATION,
)
from ..errors import ConvergenceError, DStepError, PreconditionError
from ..model import BoolArray, FloatArray, perron_eigenpair
from ..norms import DiagonalScaling, NormKind, scaled_norm
from ..subsolver import ConvexSubproblem, solve

_LOGGER = logging.getLogger(__name__)


class NuScaling(NamedTuple):
    """Optimal nu scaling, its log-level eta and whether eta was clamped."""

    scaling: DiagonalScaling
    eta: float
    clamped: bool


def magnitude_input(m: ArrayLike) -> FloatArray:
    """Validate a nonnegative square magnitude matrix."""
    matrix = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if matrix.shape[0] != matrix.shape[1]:
        raise PreconditionError(f"magnitude matrix must be square, got {matrix.shape}")
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise PreconditionError("magnitude matrix must be finite and nonnegative")
    return matrix


def pattern_graph(pattern: BoolArray) -> nx.DiGraph:
    """Directed graph with an arc i -> j for every nonzero entry (i, j)."""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(pattern.shape[0]))
    rows, cols = np.nonzero(pattern)
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return graph


def nu_level(m: FloatArray, log_values: FloatArray) -> float:
    """Return max over nonzero entries of log M_ij + l_i - l_j."""
    rows, cols = np.nonzero(m)
    if not rows.size:
        return -math.inf
    return float(np.max(np.log(m[rows, cols]) + log_values[rows] - log_values[cols]))


def dstep_min_nu_lp(m: ArrayLike) -> NuScaling:
    """Minimize eta s.t. log M_ij + l_i - l_j <= eta over the nonzero entries of M."""
    matrix = magnitude_input(m)
    n = matrix.shape[0]
    rows, cols = np.nonzero(matrix)
    if not rows.size:
        return NuScaling(DiagonalScaling.identity(n, 0.0), -math.inf, False)

    clamped = nx.is_directed_acyclic_graph(pattern_graph(matrix > 0))
    if clamped:
        _LOGGER.warning(
            "Acyclic magnitude pattern: nu level is unbounded below, clamping scaling"
        )
    # Variables (l_1..l_n, eta).
    constraints = np.zeros((rows.size, n + 1))
    np.add.at(constraints, (np.arange(rows.size), rows), 1.0)
    np.add.at(constraints, (np.arange(rows.size), cols), -1.0)
    constraints[:, n] = -1.0
    bounds = -np.log(matrix[rows, cols])
    box = np.hstack([np.eye(n), np.zeros((n, 1))])
    floor = np.zeros((1, n + 1))
    floor[0, n] = -1.0
    q = np.zeros(n + 1)
    q[n] = 1.0
    report = solve(
        ConvexSubproblem.build(
            q=q,
            a_eq=np.hstack([np.ones((1, n)), np.zeros((1, 1))]),
            b_eq=[0.0],
            a_in=np.vstack([constraints, box, -box, floor]),
            b_in=np.concatenate(
                [
                    bounds,
                    np.full(n, LOG_SCALING_BOUND),
                    np.full(n, LOG_SCALING_BOUND),
                    [-math.log(BETA_FLOOR)],
                ]
            ),
        )
    )
    if not report.ok:
        raise ConvergenceError(
            f"nu scaling LP ended with status {report.status}",
            iterations=report.iterations,
            residual=max(report.primal_residual, report.dual_residual),
        )
    log_values = report.x[:n] - report.x[:n].mean()
    eta = nu_level(matrix, log_values)
    if clamped:
        eta = max(eta, math.log(BETA_FLOOR))
    return NuScaling(DiagonalScaling(log_values, math.exp(eta)), eta, clamped)


def _irreducible(pattern: BoolArray) -> bool:
    return nx.is_strongly_connected(pattern_graph(pattern))


def dstep_min_l1(m: ArrayLike, support: ArrayLike | None = None) -> DiagonalScaling:
    """Return D = diag(v)^-1 for the Perron vector v of M; ||D M D^-1||_L1 = rho(M)."""
    matrix = magnitude_input(m)
    n = matrix.shape[0]
    off_diagonal = matrix - np.diag(np.diag(matrix))
    if not np.any(off_diagonal):
        return DiagonalScaling.identity(n, float(np.max(np.diag(matrix), initial=0.0)))

    perturbed = matrix
    if not _irreducible(matrix > 0):
        pattern = None if support is None else np.asarray(support, dtype=bool)
        if pattern is None or not _irreducible(pattern):
            pattern = np.ones((n, n), dtype=bool)
        _LOGGER.warning(
            "Reducible magnitude matrix: perturbing by %.0e", PERRON_PERTURBATION
        )
        perturbed = matrix + PERRON_PERTURBATION * pattern

    radius, vector = perron_eigenpair(perturbed)
    if np.any(vector <= 0):
        raise DStepError("Perron vector is not positive after perturbation")
    scaling = DiagonalScaling(-np.log(vector))
    achieved = scaled_norm(matrix, scaling, NormKind.L1)
    if achieved > (1 + PERRON_CERTIFICATE_SLACK) * radius:
        raise DStepError(
            f"Perron scaling achieves {achieved:.6g}, above rho = {radius:.6g}"
        )
    return scaling.with_beta(achieved)


def dstep_min_linf(m: ArrayLike, support: ArrayLike | None = None) -> DiagonalScaling:
    """Apply the L1 step to M^T and invert the scaling."""
    matrix = magnitude_input(m)
    transposed_support = None if support is None else np.asarray(support, dtype=bool).T
    scaling = dstep_min_l1(matrix.T, transposed_support).inverse()
    return scaling.with_beta(scaled_norm(matrix, scaling, NormKind.LINF))
