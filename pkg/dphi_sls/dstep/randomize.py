"""Randomizing D step and the bisection built on it."""

from __future__ import annotations

import logging
import math

import numpy as np
from numpy.typing import ArrayLike

from ..const import (
    LOG_SCALING_BOUND,
    RANDOMIZE_MARGIN,
    RANDOMIZE_TOLERANCE,
    RANDOMIZE_VECTOR_BOUND,
)
from ..errors import PreconditionError, UnsupportedError
from ..model import FloatArray
from ..norms import DiagonalScaling, NormKind, scaled_norm
from ..subsolver import ConvexSubproblem, SolveStatus, solve
from .minimize import magnitude_input

_LOGGER = logging.getLogger(__name__)


def _nu_feasibility(
    matrix: FloatArray, level: float, rng: np.random.Generator
) -> FloatArray | None:
    """log M_ij + l_i - l_j <= log(level) with a random objective on the gauge plane."""
    n = matrix.shape[0]
    off_diagonal = matrix * (1 - np.eye(n))
    rows, cols = np.nonzero(off_diagonal)
    direction = rng.standard_normal(n)
    direction -= direction.mean()
    box = np.eye(n)
    a_in = [box, -box]
    b_in = [np.full(n, LOG_SCALING_BOUND), np.full(n, LOG_SCALING_BOUND)]
    if rows.size:
        constraints = np.zeros((rows.size, n))
        constraints[np.arange(rows.size), rows] = 1.0
        constraints[np.arange(rows.size), cols] = -1.0
        a_in.insert(0, constraints)
        b_in.insert(0, math.log(level) - np.log(matrix[rows, cols]))
    report = solve(
        ConvexSubproblem.build(
            q=direction,
            a_eq=np.ones((1, n)),
            b_eq=[0.0],
            a_in=np.vstack(a_in),
            b_in=np.concatenate(b_in),
        )
    )
    return _accept(report.status, report.x)


def _vector_feasibility(
    matrix: FloatArray, level: float, rng: np.random.Generator
) -> FloatArray | None:
    """(M - level I) w <= 0 with 1 <= w <= bound and a random positive objective."""
    n = matrix.shape[0]
    weights = rng.uniform(0.5, 1.5, size=n)
    box = np.eye(n)
    report = solve(
        ConvexSubproblem.build(
            q=weights,
            a_in=np.vstack([matrix - level * np.eye(n), -box, box]),
            b_in=np.concatenate(
                [np.zeros(n), -np.ones(n), np.full(n, RANDOMIZE_VECTOR_BOUND)]
            ),
        )
    )
    solution = _accept(report.status, report.x)
    return None if solution is None else np.maximum(solution, 1.0)


def _accept(status: SolveStatus, x: FloatArray) -> FloatArray | None:
    if status is SolveStatus.OPTIMAL:
        return x
    if status is not SolveStatus.INFEASIBLE:
        _LOGGER.warning("Randomizing D step ended with status %s", status)
    return None


def dstep_randomize(
    m: ArrayLike, beta: float, kind: NormKind, seed: int
) -> DiagonalScaling | None:
    """Return a random D with ||D M D^-1|| <= beta, or None when there is none."""
    if not beta > 0:
        raise PreconditionError(f"beta must be positive, got {beta}")
    if kind is NormKind.H2:
        raise UnsupportedError("randomizing D step needs L1, Linf or nu")
    matrix = magnitude_input(m)
    n = matrix.shape[0]
    if math.isinf(beta):
        return DiagonalScaling.identity(n, beta)
    if np.max(np.diag(matrix), initial=0.0) > beta:
        return None

    rng = np.random.default_rng(seed)
    for level in (beta * (1 - RANDOMIZE_MARGIN), beta):
        if kind is NormKind.NU:
            solution = _nu_feasibility(matrix, level, rng)
            log_values = solution
        elif kind is NormKind.L1:
            # w = diag(D)^-1 satisfies M w <= beta w.
            solution = _vector_feasibility(matrix, level, rng)
            log_values = None if solution is None else -np.log(solution)
        else:
            # v = diag(D) satisfies M^T v <= beta v.
            solution = _vector_feasibility(matrix.T, level, rng)
            log_values = None if solution is None else np.log(solution)
        if log_values is None:
            continue
        scaling = DiagonalScaling(log_values)
        achieved = scaled_norm(matrix, scaling, kind)
        if achieved <= beta * (1 + RANDOMIZE_TOLERANCE):
            return scaling.with_beta(achieved)
        _LOGGER.debug(
            "Randomized scaling misses beta=%s by %.3e", beta, achieved - beta
        )
    return None


def dstep_iterative_min(
    m: ArrayLike, kind: NormKind, beta_step: float, seed: int
) -> tuple[DiagonalScaling, float]:
    """Bisect on beta with the randomizing step until the bracket is beta_step."""
    if not beta_step > 0:
        raise PreconditionError(f"beta_step must be positive, got {beta_step}")
    matrix = magnitude_input(m)
    n = matrix.shape[0]
    best = DiagonalScaling.identity(n)
    upper = scaled_norm(matrix, best, kind)
    lower = float(np.max(np.diag(matrix), initial=0.0))
    attempt = 0
    while upper - lower > beta_step:
        middle = 0.5 * (lower + upper)
        if (scaling := dstep_randomize(matrix, middle, kind, seed + attempt)) is None:
            lower = middle
        else:
            best = scaling
            upper = min(scaling.beta, middle)
        attempt += 1
    _LOGGER.debug("Iterative D step: beta %.6g after %s attempts", upper, attempt)
    return best.with_beta(upper), upper
