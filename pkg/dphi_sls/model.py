"""Plants, supports, FIR transfer matrices and the ring test system."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
import logging
from typing import Any

import networkx as nx
import numpy as np
from numpy.typing import ArrayLike, NDArray
import scipy.linalg

from .const import (
    POWER_ITERATION_MAX_ITER,
    POWER_ITERATION_TOLERANCE,
    RING_MAGNITUDE_HIGH,
    RING_MAGNITUDE_LOW,
)
from .errors import ConvergenceError, DimensionError, PreconditionError

_LOGGER = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]


def _frozen(value: ArrayLike, *, dtype: Any = np.float64) -> NDArray[Any]:
    array = np.array(value, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, slots=True, eq=False)
class FirTransferMatrix:
    """Strictly causal FIR transfer matrix; taps[p - 1] is the z^-p coefficient."""

    taps: FloatArray

    def __post_init__(self) -> None:
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 3 or taps.shape[0] < 1:
            raise DimensionError(
                "FIR taps must have shape (T, rows, cols) with T >= 1, "
                f"got {taps.shape}"
            )
        object.__setattr__(self, "taps", _frozen(taps))

    @classmethod
    def from_taps(cls, taps: Sequence[ArrayLike]) -> FirTransferMatrix:
        """Build from a sequence of equally shaped tap matrices."""
        matrices = [np.atleast_2d(np.asarray(tap, dtype=np.float64)) for tap in taps]
        if not matrices:
            raise DimensionError("FIR transfer matrix needs at least one tap")
        shape = matrices[0].shape
        if any(matrix.shape != shape for matrix in matrices):
            raise DimensionError("FIR taps do not share dimensions")
        return cls(np.stack(matrices))

    @classmethod
    def zeros(cls, horizon: int, rows: int, cols: int) -> FirTransferMatrix:
        """Return the zero transfer matrix."""
        return cls(np.zeros((horizon, rows, cols)))

    @property
    def horizon(self) -> int:
        return int(self.taps.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.taps.shape[1]), int(self.taps.shape[2])

    def tap(self, p: int) -> FloatArray:
        """Return the coefficient of z^-p, 1 <= p <= T."""
        if not 1 <= p <= self.horizon:
            raise PreconditionError(f"tap index {p} outside 1..{self.horizon}")
        return self.taps[p - 1]

    def transpose(self) -> FirTransferMatrix:
        """Return the tap-wise transpose."""
        return FirTransferMatrix(np.transpose(self.taps, (0, 2, 1)))

    def scaled(self, factor: float) -> FirTransferMatrix:
        return FirTransferMatrix(self.taps * factor)


@dataclass(frozen=True, slots=True, eq=False)
class Plant:
    """Discrete-time plant x+ = A x + B u + w with its interconnection graph."""

    a: FloatArray
    b: FloatArray
    graph: nx.Graph = field(default_factory=nx.Graph)
    seed: int | None = None

    def __post_init__(self) -> None:
        a = np.atleast_2d(np.asarray(self.a, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        n = a.shape[0]
        if n < 1 or a.shape != (n, n):
            raise DimensionError(f"A must be square and non-empty, got {a.shape}")
        if b.ndim != 2 or b.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {b.shape}")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", _frozen(b))
        graph = self.graph
        if graph.number_of_nodes() == 0:
            graph = _coupling_graph(a)
        elif set(graph.nodes) != set(range(n)):
            raise DimensionError(f"graph nodes must be 0..{n - 1}")
        if graph.is_directed():
            raise PreconditionError("interconnection graph must be undirected")
        object.__setattr__(self, "graph", nx.freeze(nx.Graph(graph)))

    @property
    def n(self) -> int:
        return int(self.a.shape[0])

    @property
    def m(self) -> int:
        return int(self.b.shape[1])

    def to_document(self) -> dict[str, Any]:
        """Return the JSON document form of the plant."""
        return {
            "n": self.n,
            "m": self.m,
            "A": self.a.tolist(),
            "B": self.b.tolist(),
            "graph": sorted([min(u, v), max(u, v)] for u, v in self.graph.edges),
            "seed": self.seed,
        }

    @classmethod
    def from_document(cls, document: dict[str, Any]) -> Plant:
        """Build a plant from a validated JSON document."""
        n = int(document["n"])
        graph = nx.empty_graph(n)
        graph.add_edges_from(tuple(edge) for edge in document.get("graph", ()))
        if graph.number_of_nodes() != n:
            raise DimensionError("graph references nodes outside the plant")
        plant = cls(
            a=np.asarray(document["A"], dtype=np.float64).reshape(n, n),
            b=np.asarray(document["B"], dtype=np.float64).reshape(n, -1),
            graph=graph,
            seed=document.get("seed"),
        )
        if plant.m != int(document.get("m", plant.m)):
            raise DimensionError(
                f"B has {plant.m} columns, document says {document['m']}"
            )
        return plant


def _coupling_graph(a: FloatArray) -> nx.Graph:
    n = a.shape[0]
    graph = nx.empty_graph(n)
    rows, cols = np.nonzero(a)
    graph.add_edges_from((int(i), int(j)) for i, j in zip(rows, cols) if i != j)
    return graph


@dataclass(frozen=True, slots=True, eq=False)
class Support:
    """Locality pattern N_d(i) shared by Phi_x and Phi_u."""

    mask: BoolArray
    input_mask: BoolArray
    hops: int
    neighborhoods: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "mask", _frozen(self.mask, dtype=np.bool_))
        object.__setattr__(self, "input_mask", _frozen(self.input_mask, dtype=np.bool_))

    @classmethod
    def full(cls, n: int, m: int) -> Support:
        """Return the unconstrained support."""
        every = tuple(range(n))
        return cls(
            mask=np.ones((n, n), dtype=bool),
            input_mask=np.ones((m, n), dtype=bool),
            hops=n,
            neighborhoods=tuple(every for _ in range(n)),
        )

    @property
    def n(self) -> int:
        return int(self.mask.shape[0])

    def column_rows(self, j: int) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
        """Return the admissible state and input rows of column j."""
        return np.flatnonzero(self.mask[:, j]), np.flatnonzero(self.input_mask[:, j])


@dataclass(frozen=True, slots=True, eq=False)
class ClosedLoop:
    """Closed-loop response pair (Phi_x, Phi_u) on a support."""

    phi_x: FirTransferMatrix
    phi_u: FirTransferMatrix
    support: Support

    def __post_init__(self) -> None:
        if self.phi_x.horizon != self.phi_u.horizon:
            raise DimensionError("Phi_x and Phi_u horizons differ")
        n, cols = self.phi_x.shape
        if n != cols or self.phi_u.shape[1] != n:
            raise DimensionError("Phi_x must be n x n and Phi_u m x n")
        if self.support.mask.shape != (n, n) or (
            self.support.input_mask.shape != self.phi_u.shape
        ):
            raise DimensionError("support does not match the closed loop")
        if np.any(self.phi_x.taps[:, ~self.support.mask]) or np.any(
            self.phi_u.taps[:, ~self.support.input_mask]
        ):
            raise PreconditionError("closed loop has nonzero entries off its support")

    @property
    def horizon(self) -> int:
        return self.phi_x.horizon

    @property
    def n(self) -> int:
        return self.phi_x.shape[0]

    @property
    def m(self) -> int:
        return self.phi_u.shape[0]


def ring_plant(n: int, rho_target: float, seed: int) -> Plant:
    """Return a random ring plant with spectral radius rho_target and B = I."""
    if n < 3:
        raise PreconditionError(f"ring needs at least 3 nodes, got {n}")
    if not rho_target > 0:
        raise PreconditionError(f"spectral radius must be positive, got {rho_target}")
    rng = np.random.default_rng(seed)
    a = np.zeros((n, n))
    for i in range(n):
        for j in ((i - 1) % n, (i + 1) % n):
            magnitude = rng.uniform(RING_MAGNITUDE_LOW, RING_MAGNITUDE_HIGH)
            sign = 1.0 if rng.integers(0, 2) else -1.0
            a[i, j] = sign * magnitude
    radius = spectral_radius(a)
    if radius == 0:
        # Nilpotent draw; perturb deterministically through the same generator.
        a[0, 0] = rng.uniform(RING_MAGNITUDE_LOW, RING_MAGNITUDE_HIGH)
        radius = spectral_radius(a)
    a *= rho_target / radius
    _LOGGER.debug("Generated ring plant n=%s rho=%s seed=%s", n, rho_target, seed)
    return Plant(a=a, b=np.eye(n), graph=nx.cycle_graph(n), seed=seed)


def dhop_support(plant: Plant, hops: int) -> Support:
    """Return the d-hop support of the plant's interconnection graph."""
    if hops < 0:
        raise PreconditionError(f"hop count must be nonnegative, got {hops}")
    n = plant.n
    mask = np.zeros((n, n), dtype=bool)
    neighborhoods: list[tuple[int, ...]] = []
    for i in range(n):
        reach = nx.single_source_shortest_path_length(plant.graph, i, cutoff=hops)
        members = tuple(sorted(reach))
        neighborhoods.append(members)
        mask[i, list(members)] = True
    return Support(
        mask=mask,
        input_mask=actuator_mask(plant.b, mask),
        hops=hops,
        neighborhoods=tuple(neighborhoods),
    )


def actuator_mask(b: FloatArray, mask: BoolArray) -> BoolArray:
    """Actuator k inherits the union of the node rows it drives."""
    drives = np.asarray(b) != 0
    return (drives.T.astype(np.int64) @ mask.astype(np.int64)) > 0


def spectral_radius(a: ArrayLike) -> float:
    """Return the largest eigenvalue magnitude of a square matrix."""
    matrix = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(
            f"spectral radius needs a square matrix, got {matrix.shape}"
        )
    return float(np.max(np.abs(scipy.linalg.eigvals(matrix))))


def perron_eigenpair(
    m: ArrayLike,
    *,
    tol: float = POWER_ITERATION_TOLERANCE,
    max_iter: int = POWER_ITERATION_MAX_ITER,
) -> tuple[float, FloatArray]:
    """Return (rho, v) for a nonnegative irreducible matrix by shifted power iteration.

    The shift by the largest entry makes the iteration primitive, so it converges
    for periodic matrices too. v is positive and normalized to unit 1-norm.
    """
    matrix = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if np.any(matrix < 0):
        raise PreconditionError("Perron iteration needs a nonnegative matrix")
    n = matrix.shape[0]
    shift = float(matrix.max()) if matrix.size else 0.0
    if shift == 0:
        return 0.0, np.full(n, 1.0 / n)
    shifted = matrix + shift * np.eye(n)
    v = np.full(n, 1.0 / n)
    value = 0.0
    for iteration in range(1, max_iter + 1):
        w = shifted @ v
        norm = float(w.sum())
        w /= norm
        if np.max(np.abs(w - v)) <= tol * np.max(np.abs(w)):
            v = w
            value = norm
            _LOGGER.debug("Power iteration converged in %s iterations", iteration)
            break
        v = w
    else:
        raise ConvergenceError(
            "power iteration did not converge",
            iterations=max_iter,
            residual=float(np.max(np.abs(shifted @ v / (shifted @ v).sum() - v))),
        )
    return value - shift, v


def dualize_full_control(a: ArrayLike, c: ArrayLike) -> Plant:
    """Return the state-feedback plant (A^T, C^T) dual to the full-control problem."""
    a_matrix = np.atleast_2d(np.asarray(a, dtype=np.float64))
    c_matrix = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if c_matrix.shape[1] != a_matrix.shape[0]:
        raise DimensionError(
            f"C must have {a_matrix.shape[0]} columns, got {c_matrix.shape}"
        )
    return Plant(a=a_matrix.T, b=c_matrix.T, graph=_coupling_graph(a_matrix))
