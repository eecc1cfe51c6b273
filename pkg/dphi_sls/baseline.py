"""Discrete-time LQR baseline used to normalize cost and margin."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike
import scipy.linalg

from .const import DARE_DIVERGENCE_LIMIT, DARE_MAX_ITER, DARE_TOLERANCE
from .dstep import minimize_scaling
from .errors import ConvergenceError, DimensionError, PreconditionError
from .model import (
    ClosedLoop,
    FirTransferMatrix,
    FloatArray,
    Plant,
    Support,
    spectral_radius,
)
from .norms import NormKind, RegulationMap, magnitude_matrix

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, eq=False)
class LqrSolution:
    """Riccati solution P and the gain K of u = -K x."""

    p: FloatArray
    k: FloatArray
    closed_loop_radius: float

    @property
    def cost(self) -> float:
        """H2 cost trace(P) for unit impulses on every state."""
        return float(np.trace(self.p))


class TruncatedClosedLoop(NamedTuple):
    """LQR closed loop cut at the horizon and the norm of the dropped tail."""

    closed_loop: ClosedLoop
    tail: float


def _gain(a: FloatArray, b: FloatArray, qu: FloatArray, p: FloatArray) -> FloatArray:
    return scipy.linalg.solve(qu + b.T @ p @ b, b.T @ p @ a, assume_a="pos")


def riccati_residual(
    a: ArrayLike, b: ArrayLike, qx: ArrayLike, qu: ArrayLike, p: ArrayLike
) -> float:
    """Max-row-sum norm of P - Qx - A'PA + A'PB (Qu + B'PB)^-1 B'PA."""
    a_matrix, b_matrix, p_matrix = (
        np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (a, b, p)
    )
    n, m = b_matrix.shape
    gain = _gain(a_matrix, b_matrix, _penalty(qu, m), p_matrix)
    update = _penalty(qx, n) + a_matrix.T @ p_matrix @ (a_matrix - b_matrix @ gain)
    return float(np.linalg.norm(p_matrix - update, ord=np.inf))


def dare_solve(a: ArrayLike, b: ArrayLike, qx: ArrayLike, qu: ArrayLike) -> LqrSolution:
    """Iterate the Riccati map from P = Qx until its residual is below tolerance."""
    a_matrix = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b_matrix = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, m = b_matrix.shape
    qx_matrix = _penalty(qx, n)
    qu_matrix = _penalty(qu, m)
    if a_matrix.shape != (n, n):
        raise DimensionError(f"A must be {n}x{n}, got {a_matrix.shape}")
    try:
        scipy.linalg.cholesky(qu_matrix)
    except np.linalg.LinAlgError as err:
        raise PreconditionError("Qu must be positive definite") from err
    if np.min(scipy.linalg.eigvalsh(qx_matrix)) < -DARE_TOLERANCE:
        raise PreconditionError("Qx must be positive semidefinite")

    p = qx_matrix.copy()
    for iteration in range(1, DARE_MAX_ITER + 1):
        gain = _gain(a_matrix, b_matrix, qu_matrix, p)
        update = qx_matrix + a_matrix.T @ p @ (a_matrix - b_matrix @ gain)
        update = 0.5 * (update + update.T)
        residual = float(np.linalg.norm(update - p, ord=np.inf))
        p = update
        diverged = np.linalg.norm(p, ord=np.inf) > DARE_DIVERGENCE_LIMIT
        if diverged or not np.all(np.isfinite(p)):
            raise ConvergenceError(
                "Riccati iteration diverged; (A, B) is likely not stabilizable",
                iterations=iteration,
                residual=residual,
            )
        if residual <= DARE_TOLERANCE:
            break
    else:
        raise ConvergenceError(
            f"Riccati iteration did not converge in {DARE_MAX_ITER} iterations",
            iterations=DARE_MAX_ITER,
            residual=residual,
        )

    gain = _gain(a_matrix, b_matrix, qu_matrix, p)
    radius = spectral_radius(a_matrix - b_matrix @ gain)
    _LOGGER.debug(
        "Riccati converged after %s iterations, rho(A - BK)=%.6g", iteration, radius
    )
    if radius >= 1:
        raise ConvergenceError(
            f"LQR closed loop is not stable (spectral radius {radius:.6g})",
            iterations=iteration,
            residual=residual,
        )
    return LqrSolution(p=p, k=gain, closed_loop_radius=radius)


def _penalty(value: ArrayLike, size: int) -> FloatArray:
    matrix = np.asarray(value, dtype=np.float64)
    if matrix.ndim == 0:
        return float(matrix) * np.eye(size)
    matrix = np.atleast_2d(matrix)
    if matrix.shape != (size, size):
        raise DimensionError(f"penalty must be {size}x{size}, got {matrix.shape}")
    return matrix


def lqr_closed_loop(plant: Plant, k: ArrayLike, horizon: int) -> TruncatedClosedLoop:
    """Phi_x(p) = (A - BK)^(p-1), Phi_u(p) = -K Phi_x(p) for p = 1..horizon."""
    gain = np.atleast_2d(np.asarray(k, dtype=np.float64))
    if gain.shape != (plant.m, plant.n):
        raise DimensionError(f"K must be {plant.m}x{plant.n}, got {gain.shape}")
    if horizon < 1:
        raise PreconditionError(f"horizon must be at least 1, got {horizon}")
    closed = plant.a - plant.b @ gain
    if (radius := spectral_radius(closed)) >= 1:
        raise PreconditionError(f"A - BK is not stable (spectral radius {radius:.6g})")

    taps_x = np.empty((horizon, plant.n, plant.n))
    taps_x[0] = np.eye(plant.n)
    for p in range(1, horizon):
        taps_x[p] = closed @ taps_x[p - 1]
    taps_u = -np.einsum("ij,pjk->pik", gain, taps_x)
    tail = float(np.linalg.norm(closed @ taps_x[-1], ord=np.inf))
    closed_loop = ClosedLoop(
        phi_x=FirTransferMatrix(taps_x),
        phi_u=FirTransferMatrix(taps_u),
        support=Support.full(plant.n, plant.m),
    )
    return TruncatedClosedLoop(closed_loop, tail)


def lqr_margin(
    closed_loop: ClosedLoop, regulation: RegulationMap, kind: NormKind
) -> float:
    """Beta of the LQR loop after the minimizing D step."""
    return minimize_scaling(magnitude_matrix(closed_loop, regulation), kind).beta
