"""Induced norms, the magnitude matrix and diagonally scaled margins."""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
import math

import numpy as np
from numpy.typing import ArrayLike

from .const import CRITERION_H2, CRITERION_L1, CRITERION_LINF, CRITERION_NU
from .errors import DimensionError, PreconditionError
from .model import ClosedLoop, FloatArray


class Separability(StrEnum):
    """How a norm decomposes over the entries of its argument."""

    ROW = "row"
    COLUMN = "column"
    ELEMENT = "element"


class NormKind(StrEnum):
    """Matrix norms used for performance and robust stability."""

    L1 = CRITERION_L1
    LINF = CRITERION_LINF
    NU = CRITERION_NU
    H2 = CRITERION_H2

    @property
    def separability(self) -> Separability:
        return _SEPARABILITY[self]

    @property
    def is_stability_criterion(self) -> bool:
        return self is not NormKind.H2


_SEPARABILITY = {
    NormKind.L1: Separability.ROW,
    NormKind.LINF: Separability.COLUMN,
    NormKind.NU: Separability.ELEMENT,
    NormKind.H2: Separability.ELEMENT,
}


@dataclass(frozen=True, slots=True, eq=False)
class DiagonalScaling:
    """Positive diagonal D = diag(exp(l)) with sum(l) = 0, and the beta it certifies."""

    log_values: FloatArray
    beta: float = math.inf

    def __post_init__(self) -> None:
        values = np.asarray(self.log_values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise PreconditionError("log scaling must be finite")
        values = values - values.mean() if values.size else values
        values.setflags(write=False)
        object.__setattr__(self, "log_values", values)
        if math.isnan(self.beta) or self.beta < 0:
            raise PreconditionError(
                f"certified beta must be nonnegative, got {self.beta}"
            )

    @classmethod
    def identity(cls, n: int, beta: float = math.inf) -> DiagonalScaling:
        return cls(np.zeros(n), beta)

    @classmethod
    def from_diagonal(cls, d: ArrayLike, beta: float = math.inf) -> DiagonalScaling:
        """Build from the positive diagonal of D."""
        diagonal = np.asarray(d, dtype=np.float64)
        if np.any(diagonal <= 0):
            raise PreconditionError("diagonal scaling must be positive")
        return cls(np.log(diagonal), beta)

    @property
    def n(self) -> int:
        return int(self.log_values.size)

    @property
    def diagonal(self) -> FloatArray:
        return np.exp(self.log_values)

    def inverse(self) -> DiagonalScaling:
        return DiagonalScaling(-self.log_values, self.beta)

    def with_beta(self, beta: float) -> DiagonalScaling:
        return DiagonalScaling(self.log_values, beta)


@dataclass(frozen=True, slots=True, eq=False)
class RegulationMap:
    """Regulated output z = Hx x + Hu u."""

    hx: FloatArray
    hu: FloatArray

    def __post_init__(self) -> None:
        hx = np.atleast_2d(np.array(self.hx, dtype=np.float64))
        hu = np.atleast_2d(np.array(self.hu, dtype=np.float64))
        if hx.shape[0] != hu.shape[0]:
            raise DimensionError("Hx and Hu must have the same number of rows")
        hx.setflags(write=False)
        hu.setflags(write=False)
        object.__setattr__(self, "hx", hx)
        object.__setattr__(self, "hu", hu)

    @classmethod
    def diagonal(
        cls, n: int, m: int, *, hx: float = 1.0, hu: float = 1.0
    ) -> RegulationMap:
        """Return z = hx x + hu u for square B (n == m)."""
        if n != m:
            raise DimensionError("diagonal regulation needs as many inputs as states")
        return cls(hx * np.eye(n), hu * np.eye(m))

    @property
    def outputs(self) -> int:
        return int(self.hx.shape[0])

    @property
    def separably_diagonal(self) -> bool:
        """True when both blocks are square and diagonal."""
        return all(
            block.shape[0] == block.shape[1]
            and not np.any(block - np.diag(np.diag(block)))
            for block in (self.hx, self.hu)
        )


def induced_norm(m: ArrayLike, kind: NormKind) -> float:
    """Return the kind-norm of a matrix."""
    matrix = np.abs(np.atleast_2d(np.asarray(m, dtype=np.float64)))
    if matrix.size == 0:
        return 0.0
    match kind:
        case NormKind.L1:
            return float(matrix.sum(axis=1).max())
        case NormKind.LINF:
            return float(matrix.sum(axis=0).max())
        case NormKind.NU:
            return float(matrix.max())
        case NormKind.H2:
            return float(np.sqrt(np.sum(matrix**2)))
    raise PreconditionError(f"Unsupported norm: {kind}")


def magnitude_matrix(cl: ClosedLoop, regulation: RegulationMap) -> FloatArray:
    """Return M = sum_p |Hx Phi_x(p) + Hu Phi_u(p)|."""
    if regulation.hx.shape[1] != cl.n or regulation.hu.shape[1] != cl.m:
        raise DimensionError(
            f"regulation map {regulation.hx.shape}/{regulation.hu.shape} does not "
            f"match closed loop n={cl.n} m={cl.m}"
        )
    response = np.einsum("ij,pjk->pik", regulation.hx, cl.phi_x.taps) + np.einsum(
        "ij,pjk->pik", regulation.hu, cl.phi_u.taps
    )
    return np.abs(response).sum(axis=0)


def scale(m: ArrayLike, scaling: DiagonalScaling) -> FloatArray:
    """Return D M D^-1."""
    matrix = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if matrix.shape != (scaling.n, scaling.n):
        raise DimensionError(
            f"scaling of size {scaling.n} does not match matrix {matrix.shape}"
        )
    ratio = np.exp(scaling.log_values[:, None] - scaling.log_values[None, :])
    return matrix * ratio


def scaled_norm(m: ArrayLike, scaling: DiagonalScaling, kind: NormKind) -> float:
    """Return ||D M D^-1|| for the given kind."""
    return induced_norm(scale(m, scaling), kind)


def margin(beta: float) -> float:
    """Return the robust stability margin 1/beta."""
    if not beta > 0:
        raise PreconditionError(f"beta must be positive, got {beta}")
    return 0.0 if math.isinf(beta) else 1.0 / beta
