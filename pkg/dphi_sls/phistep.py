"""The Phi step: closed-loop synthesis for a fixed scaling D and level beta."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, replace
from enum import StrEnum
import logging
import math
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray
import scipy.linalg

from .const import (
    ADMM_GAMMA,
    ADMM_MAX_ITER,
    ADMM_STALL_WINDOW,
    ADMM_TOL_CONSENSUS,
    ADMM_TOL_PROGRESS,
    DEFAULT_THREADS,
    PROBLEM_FULL_CONTROL,
    PROBLEM_OUTPUT_FEEDBACK,
    PROBLEM_STATE_FEEDBACK,
    SOUNDNESS_TOLERANCE,
)
from .dispatch import classify_phi_step
from .errors import (
    ConvergenceError,
    DimensionError,
    InfeasibleError,
    PreconditionError,
    UnsupportedError,
)
from .model import (
    BoolArray,
    ClosedLoop,
    FirTransferMatrix,
    FloatArray,
    Plant,
    Support,
    actuator_mask,
    dualize_full_control,
)
from .norms import (
    DiagonalScaling,
    NormKind,
    RegulationMap,
    induced_norm,
    magnitude_matrix,
    scaled_norm,
)
from .pool import gather_limited
from .subsolver import (
    AffineMap,
    ConvexSubproblem,
    SolveReport,
    SolveStatus,
    solve,
    transcribe_abs,
)

_LOGGER = logging.getLogger(__name__)


def _weight(value: ArrayLike, size: int) -> FloatArray:
    matrix = np.array(value, dtype=np.float64)
    if matrix.ndim == 0:
        matrix = float(matrix) * np.eye(size)
    if matrix.shape != (size, size):
        raise DimensionError(f"weight must be {size}x{size}, got {matrix.shape}")
    matrix.setflags(write=False)
    return matrix


def _is_diagonal(matrix: FloatArray) -> bool:
    return not np.any(matrix - np.diag(np.diag(matrix)))


def _weight_root(q: FloatArray) -> FloatArray:
    """Symmetric square root of a PSD weight."""
    if _is_diagonal(q):
        return np.diag(np.sqrt(np.maximum(np.diag(q), 0.0)))
    values, vectors = scipy.linalg.eigh(q)
    return (vectors * np.sqrt(np.maximum(values, 0.0))) @ vectors.T


@dataclass(frozen=True, slots=True, eq=False)
class PhiStepSpec:
    """Data of one Phi step: minimize ||Q Phi|| s.t. ||D M D^-1|| <= beta."""

    plant: Plant
    support: Support
    horizon: int
    qx: FloatArray
    qu: FloatArray
    regulation: RegulationMap
    stab: NormKind
    scaling: DiagonalScaling
    beta: float = math.inf
    perf: NormKind = NormKind.H2
    problem: str = PROBLEM_STATE_FEEDBACK
    threads: int = DEFAULT_THREADS

    def __post_init__(self) -> None:
        n, m = self.plant.n, self.plant.m
        object.__setattr__(self, "qx", _weight(self.qx, n))
        object.__setattr__(self, "qu", _weight(self.qu, m))
        if self.horizon < 1:
            raise PreconditionError(f"horizon must be at least 1, got {self.horizon}")
        if math.isnan(self.beta) or self.beta <= 0:
            raise PreconditionError(
                f"beta must be positive or infinite, got {self.beta}"
            )
        if not self.stab.is_stability_criterion:
            raise UnsupportedError(f"{self.stab} is not a robust stability criterion")
        if self.problem == PROBLEM_OUTPUT_FEEDBACK:
            raise UnsupportedError("output-feedback synthesis is not implemented")
        if self.problem != PROBLEM_STATE_FEEDBACK:
            raise UnsupportedError(
                f"problem class {self.problem!r}; "
                "use phi_step_full_control for full control"
            )
        if self.support.mask.shape != (n, n) or self.support.input_mask.shape != (m, n):
            raise DimensionError("support does not match the plant")
        if self.regulation.outputs != n or self.regulation.hx.shape[1] != n or (
            self.regulation.hu.shape[1] != m
        ):
            raise DimensionError(
                "regulation map must be n x (n + m) for diagonal uncertainty"
            )
        if self.scaling.n != n:
            raise DimensionError(f"scaling has size {self.scaling.n}, expected {n}")
        if self.threads < 1:
            raise PreconditionError("at least one worker thread is required")

    @property
    def weights_separably_diagonal(self) -> bool:
        return _is_diagonal(self.qx) and _is_diagonal(self.qu)

    @property
    def constrained(self) -> bool:
        return math.isfinite(self.beta)

    def at_level(self, scaling: DiagonalScaling, beta: float) -> PhiStepSpec:
        """Return the same synthesis problem at another (D, beta)."""
        return replace(self, scaling=scaling, beta=beta)


@dataclass(frozen=True, slots=True)
class AdmmConfig:
    """Penalty weight and stopping rule of the row/column ADMM."""

    gamma: float = ADMM_GAMMA
    tol_consensus: float = ADMM_TOL_CONSENSUS
    tol_progress: float = ADMM_TOL_PROGRESS
    max_iter: int = ADMM_MAX_ITER

    def __post_init__(self) -> None:
        tolerances = (self.gamma, self.tol_consensus, self.tol_progress)
        if min(tolerances) <= 0 or self.max_iter < 1:
            raise PreconditionError("ADMM parameters must be positive")


class PhiStepStatus(StrEnum):
    """Outcome of a Phi step."""

    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, slots=True, eq=False)
class PhiStepResult:
    """Minimizing closed loop, its magnitude matrix and nominal cost."""

    status: PhiStepStatus
    closed_loop: ClosedLoop | None = None
    magnitude: FloatArray | None = None
    cost: float = math.inf
    admm_iterations: int = 0

    @property
    def feasible(self) -> bool:
        return self.status is PhiStepStatus.OPTIMAL


def nominal_cost(cl: ClosedLoop, qx: ArrayLike, qu: ArrayLike, kind: NormKind) -> float:
    """Return the kind-norm of the weighted response; H2 is reported squared."""
    qx_matrix, qu_matrix = _weight(qx, cl.n), _weight(qu, cl.m)
    phi_x, phi_u = cl.phi_x.taps, cl.phi_u.taps
    if kind is NormKind.H2:
        return float(
            np.einsum("pij,ik,pkj->", phi_x, qx_matrix, phi_x)
            + np.einsum("pij,ik,pkj->", phi_u, qu_matrix, phi_u)
        )
    weighted = np.concatenate(
        [
            np.einsum("ij,pjk->pik", _weight_root(qx_matrix), phi_x),
            np.einsum("ij,pjk->pik", _weight_root(qu_matrix), phi_u),
        ],
        axis=1,
    )
    return induced_norm(np.abs(weighted).sum(axis=0), kind)


# Column subproblems ---------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class _ColumnBlock:
    """Decision variables of column j of the stacked response [Phi_x; Phi_u]."""

    column: int
    active: BoolArray
    equalities: FloatArray
    rhs: FloatArray
    regulated: FloatArray
    regulated_rows: NDArray[np.intp]
    cost: FloatArray
    weighted: FloatArray
    weighted_rows: NDArray[np.intp]

    @property
    def size(self) -> int:
        return int(self.active.sum())

    def gather(self, column: FloatArray) -> FloatArray:
        return column[self.active]

    def scatter(self, values: FloatArray) -> FloatArray:
        column = np.zeros(self.active.shape)
        column[self.active] = values
        return column


def _nonzero_rows(
    matrix: FloatArray, row_ids: NDArray[np.intp]
) -> tuple[FloatArray, NDArray[np.intp]]:
    keep = np.any(matrix != 0, axis=1)
    return matrix[keep], row_ids[keep]


def _column_block(spec: PhiStepSpec, j: int) -> _ColumnBlock:
    plant = spec.plant
    n, m, horizon = plant.n, plant.m, spec.horizon
    width = n + m
    active = np.zeros((horizon, width), dtype=bool)
    rows_x, rows_u = spec.support.column_rows(j)
    active[:, rows_x] = True
    active[:, n + rows_u] = True
    flat = active.ravel()

    # Rows: Phi_x(1) = e_j, then Phi_x(p + 1) - A Phi_x(p) - B Phi_u(p) = 0 with
    # Phi_x(T + 1) = 0 closing the FIR response.
    equalities = np.zeros((n * (horizon + 1), horizon * width))
    rhs = np.zeros(n * (horizon + 1))
    equalities[np.arange(n), np.arange(n)] = 1.0
    rhs[j] = 1.0
    for p in range(horizon):
        rows = slice(n * (p + 1), n * (p + 2))
        equalities[rows, p * width : p * width + n] = -plant.a
        equalities[rows, p * width + n : (p + 1) * width] = -plant.b
        if p < horizon - 1:
            equalities[rows, (p + 1) * width : (p + 1) * width + n] += np.eye(n)
    equalities = equalities[:, flat]
    keep = np.any(equalities != 0, axis=1)
    if np.any(rhs[~keep]):
        raise PreconditionError(
            f"column {j} cannot satisfy Phi_x(1) = I on its support"
        )

    outputs = spec.regulation.outputs
    tap_map = np.hstack([spec.regulation.hx, spec.regulation.hu])
    regulated = scipy.linalg.block_diag(*([tap_map] * horizon))[:, flat]
    regulated, regulated_rows = _nonzero_rows(
        regulated, np.tile(np.arange(outputs), horizon)
    )

    blocks = scipy.linalg.block_diag(spec.qx, spec.qu)
    cost = 2.0 * scipy.linalg.block_diag(*([blocks] * horizon))[np.ix_(flat, flat)]
    roots = scipy.linalg.block_diag(_weight_root(spec.qx), _weight_root(spec.qu))
    weighted = scipy.linalg.block_diag(*([roots] * horizon))[:, flat]
    weighted, weighted_rows = _nonzero_rows(
        weighted, np.tile(np.arange(width), horizon)
    )
    return _ColumnBlock(
        column=j,
        active=active,
        equalities=equalities[keep],
        rhs=rhs[keep],
        regulated=regulated,
        regulated_rows=regulated_rows,
        cost=cost,
        weighted=weighted,
        weighted_rows=weighted_rows,
    )


def _column_subproblem(
    spec: PhiStepSpec, block: _ColumnBlock, budgets: FloatArray | None
) -> ConvexSubproblem:
    """Transcribe column j; budgets, when given, bound each M_rj directly."""
    n_v = block.size
    constrained = spec.constrained or budgets is not None
    n_s = block.regulated.shape[0] if constrained else 0
    perf_linear = spec.perf is not NormKind.H2
    if spec.perf is NormKind.L1:
        raise UnsupportedError(
            "row-separable performance objectives need the ADMM path"
        )
    n_e = block.weighted.shape[0] if perf_linear else 0
    total = n_v + n_s + n_e + (1 if perf_linear else 0)

    p_matrix = np.zeros((total, total))
    q_vector = np.zeros(total)
    if perf_linear:
        q_vector[-1] = 1.0
    else:
        p_matrix[:n_v, :n_v] = block.cost

    a_eq = np.zeros((block.equalities.shape[0], total))
    a_eq[:, :n_v] = block.equalities
    rows: list[FloatArray] = []
    bounds: list[FloatArray] = []

    if n_s:
        coefficients = np.zeros((n_s, total))
        coefficients[:, :n_v] = block.regulated
        abs_rows, abs_rhs = transcribe_abs(
            AffineMap(coefficients, np.zeros(n_s)), np.arange(n_v, n_v + n_s)
        )
        rows.append(abs_rows)
        bounds.append(abs_rhs)
        log_d = spec.scaling.log_values
        j = block.column
        outputs = np.unique(block.regulated_rows)
        if budgets is not None:
            limits = budgets[outputs]
        elif spec.stab is NormKind.NU:
            limits = spec.beta * np.exp(log_d[j] - log_d[outputs])
        else:
            limits = None
        if limits is not None:
            budget_rows = np.zeros((outputs.size, total))
            for index, r in enumerate(outputs):
                columns = n_v + np.flatnonzero(block.regulated_rows == r)
                budget_rows[index, columns] = 1.0
            rows.append(budget_rows)
            bounds.append(limits)
        elif spec.stab is NormKind.LINF:
            column_row = np.zeros((1, total))
            column_row[0, n_v : n_v + n_s] = np.exp(
                log_d[block.regulated_rows] - log_d[j]
            )
            rows.append(column_row)
            bounds.append(np.array([spec.beta]))
        else:
            raise UnsupportedError(f"{spec.stab} constraints are not column separable")

    if n_e:
        offset = n_v + n_s
        coefficients = np.zeros((n_e, total))
        coefficients[:, :n_v] = block.weighted
        abs_rows, abs_rhs = transcribe_abs(
            AffineMap(coefficients, np.zeros(n_e)), np.arange(offset, offset + n_e)
        )
        rows.append(abs_rows)
        bounds.append(abs_rhs)
        if spec.perf is NormKind.NU:
            weighted_outputs = np.unique(block.weighted_rows)
            epigraph = np.zeros((weighted_outputs.size, total))
            for index, r in enumerate(weighted_outputs):
                epigraph[index, offset + np.flatnonzero(block.weighted_rows == r)] = 1.0
        else:
            epigraph = np.zeros((1, total))
            epigraph[0, offset : offset + n_e] = 1.0
        epigraph[:, -1] = -1.0
        rows.append(epigraph)
        bounds.append(np.zeros(epigraph.shape[0]))

    return ConvexSubproblem.build(
        q=q_vector,
        p=p_matrix,
        a_eq=a_eq,
        b_eq=block.rhs,
        a_in=np.vstack(rows) if rows else None,
        b_in=np.concatenate(bounds) if bounds else None,
    )


def _solve_column(
    spec: PhiStepSpec, block: _ColumnBlock, budgets: FloatArray | None = None
) -> FloatArray | None:
    """Return column j as a (T, n + m) array, or None when infeasible."""
    report = solve(_column_subproblem(spec, block, budgets))
    if report.status is SolveStatus.INFEASIBLE:
        _LOGGER.debug("Column %s is infeasible at beta=%s", block.column, spec.beta)
        return None
    if not report.ok:
        raise ConvergenceError(
            f"column {block.column} subproblem ended with status {report.status}",
            iterations=report.iterations,
            residual=max(report.primal_residual, report.dual_residual),
        )
    return block.scatter(report.x[: block.size])


def _assemble(spec: PhiStepSpec, columns: list[FloatArray]) -> ClosedLoop:
    n = spec.plant.n
    stacked = np.stack(columns, axis=2)
    return ClosedLoop(
        phi_x=FirTransferMatrix(stacked[:, :n, :]),
        phi_u=FirTransferMatrix(stacked[:, n:, :]),
        support=spec.support,
    )


def _result(
    spec: PhiStepSpec, cl: ClosedLoop, admm_iterations: int = 0
) -> PhiStepResult:
    return PhiStepResult(
        status=PhiStepStatus.OPTIMAL,
        closed_loop=cl,
        magnitude=magnitude_matrix(cl, spec.regulation),
        cost=nominal_cost(cl, spec.qx, spec.qu, spec.perf),
        admm_iterations=admm_iterations,
    )


async def _async_column_path(spec: PhiStepSpec) -> PhiStepResult:
    blocks = [_column_block(spec, j) for j in range(spec.plant.n)]
    columns = await gather_limited(
        len(blocks), spec.threads, lambda j: _solve_column(spec, blocks[j])
    )
    if any(column is None for column in columns):
        return PhiStepResult(status=PhiStepStatus.INFEASIBLE)
    return _result(spec, _assemble(spec, [c for c in columns if c is not None]))


# Row/column ADMM ------------------------------------------------------------


class SplitProblem(Protocol):
    """One half of a row/column splitting over the stacked response (T, n + m, n)."""

    support: Support

    async def async_prox(self, center: FloatArray, gamma: float) -> FloatArray:
        """Return argmin f(Z) + gamma/2 ||Z - center||_F^2 on this half's set."""
        ...


@dataclass(slots=True, eq=False)
class AdmmState:
    """Iterates (Phi, Psi, Lambda) of the row/column ADMM."""

    phi: FloatArray
    psi: FloatArray
    lam: FloatArray
    iterations: int = 0


@dataclass(frozen=True, slots=True, eq=False)
class AdmmResult:
    """Converged row iterate as a closed loop, plus the full ADMM state."""

    closed_loop: ClosedLoop
    state: AdmmState


def _stacked_closed_loop(stacked: FloatArray, support: Support) -> ClosedLoop:
    n = stacked.shape[2]
    return ClosedLoop(
        phi_x=FirTransferMatrix(stacked[:, :n, :]),
        phi_u=FirTransferMatrix(stacked[:, n:, :]),
        support=support,
    )


async def async_admm_phi(
    rows: SplitProblem,
    columns: SplitProblem,
    cfg: AdmmConfig,
    *,
    initial: AdmmState,
) -> AdmmResult:
    """Alternate row, column and dual updates until the two halves agree.

    Raises InfeasibleError when the iterates stop moving while the halves stay
    apart: the row and column sets do not intersect and only the dual grows.
    """
    phi, psi, lam = initial.phi.copy(), initial.psi.copy(), initial.lam.copy()
    stalled = 0
    for iteration in range(1, cfg.max_iter + 1):
        phi_next = await rows.async_prox(psi - lam, cfg.gamma)
        psi = await columns.async_prox(phi_next + lam, cfg.gamma)
        lam = lam + phi_next - psi
        consensus = float(np.linalg.norm(phi_next - psi))
        progress = float(np.linalg.norm(phi_next - phi))
        phi = phi_next
        if iteration % 100 == 0:
            _LOGGER.debug(
                "ADMM iteration %s: consensus %.3e progress %.3e",
                iteration,
                consensus,
                progress,
            )
        if consensus <= cfg.tol_consensus and progress <= cfg.tol_progress:
            state = AdmmState(phi=phi, psi=psi, lam=lam, iterations=iteration)
            return AdmmResult(_stacked_closed_loop(phi, rows.support), state)
        stalled = stalled + 1 if progress <= cfg.tol_progress else 0
        if stalled >= ADMM_STALL_WINDOW:
            raise InfeasibleError(
                f"row and column halves stay {consensus:.3e} apart after "
                f"{iteration} iterations"
            )
    raise ConvergenceError(
        f"row/column ADMM did not reach consensus in {cfg.max_iter} iterations "
        f"(consensus {consensus:.3e}, progress {progress:.3e})",
        iterations=cfg.max_iter,
        residual=consensus,
    )


def admm_phi(
    rows: SplitProblem,
    columns: SplitProblem,
    cfg: AdmmConfig,
    *,
    initial: AdmmState,
) -> AdmmResult:
    """Synchronous wrapper of async_admm_phi."""
    return asyncio.run(async_admm_phi(rows, columns, cfg, initial=initial))


@dataclass(frozen=True, slots=True, eq=False)
class _RowBlock:
    """Row r of Phi_x and Phi_u with the slacks of row r of M."""

    row: int
    x_cols: NDArray[np.intp]
    u_cols: NDArray[np.intp]
    m_cols: NDArray[np.intp]


class RowSubproblems:
    """Row half for L1 constraints: sum_j e^(l_r - l_j) M_rj <= beta per row r."""

    def __init__(self, spec: PhiStepSpec) -> None:
        if spec.plant.n != spec.plant.m:
            raise UnsupportedError("the row splitting needs one actuator per node")
        separable = spec.weights_separably_diagonal
        if not spec.regulation.separably_diagonal or not separable:
            raise UnsupportedError("the row splitting needs separably diagonal Q and H")
        if spec.perf is not NormKind.H2:
            raise UnsupportedError("the row splitting supports the H2 objective only")
        self.spec = spec
        self.support = spec.support
        self._blocks = [
            _RowBlock(
                row=r,
                x_cols=np.flatnonzero(spec.support.mask[r]),
                u_cols=np.flatnonzero(spec.support.input_mask[r]),
                m_cols=np.flatnonzero(
                    spec.support.mask[r] | spec.support.input_mask[r]
                ),
            )
            for r in range(spec.plant.n)
        ]
        self._warm: dict[int, SolveReport] = {}

    def _subproblem(
        self, block: _RowBlock, center: FloatArray, gamma: float
    ) -> ConvexSubproblem:
        spec = self.spec
        n, horizon, r = spec.plant.n, spec.horizon, block.row
        hx, hu = spec.regulation.hx[r, r], spec.regulation.hu[r, r]
        n_x, n_u, n_m = block.x_cols.size, block.u_cols.size, block.m_cols.size
        per_tap = n_x + n_u
        n_v = horizon * per_tap
        n_s = horizon * n_m
        total = n_v + n_s

        diagonal = np.concatenate(
            [
                np.full(n_x, 2 * spec.qx[r, r] + gamma),
                np.full(n_u, 2 * spec.qu[r, r] + gamma),
            ]
        )
        p_matrix = np.zeros((total, total))
        p_matrix[:n_v, :n_v] = np.diag(np.tile(diagonal, horizon))
        target = np.concatenate(
            [center[:, r, block.x_cols], center[:, n + r, block.u_cols]], axis=1
        ).ravel()
        q_vector = np.zeros(total)
        q_vector[:n_v] = -gamma * target

        coefficients = np.zeros((n_s, total))
        for p in range(horizon):
            for k, j in enumerate(block.m_cols):
                row = p * n_m + k
                if (hit := np.flatnonzero(block.x_cols == j)).size:
                    coefficients[row, p * per_tap + hit[0]] = hx
                if (hit := np.flatnonzero(block.u_cols == j)).size:
                    coefficients[row, p * per_tap + n_x + hit[0]] = hu
        abs_rows, abs_rhs = transcribe_abs(
            AffineMap(coefficients, np.zeros(n_s)), np.arange(n_v, total)
        )
        log_d = spec.scaling.log_values
        row_sum = np.zeros((1, total))
        row_sum[0, n_v:] = np.tile(np.exp(log_d[r] - log_d[block.m_cols]), horizon)
        return ConvexSubproblem.build(
            q=q_vector,
            p=p_matrix,
            a_in=np.vstack([abs_rows, row_sum]),
            b_in=np.concatenate([abs_rhs, [spec.beta]]),
        )

    def _solve_row(self, r: int, center: FloatArray, gamma: float) -> FloatArray:
        block = self._blocks[r]
        report = solve(
            self._subproblem(block, center, gamma), warm_start=self._warm.get(r)
        )
        if report.status is SolveStatus.INFEASIBLE:
            raise InfeasibleError(
                f"row {r} admits no response at beta={self.spec.beta}"
            )
        if not report.ok:
            raise ConvergenceError(
                f"row {r} subproblem ended with status {report.status}",
                iterations=report.iterations,
                residual=max(report.primal_residual, report.dual_residual),
            )
        self._warm[r] = report
        n_x, n_u = block.x_cols.size, block.u_cols.size
        return report.x[: self.spec.horizon * (n_x + n_u)].reshape(
            self.spec.horizon, n_x + n_u
        )

    async def async_prox(self, center: FloatArray, gamma: float) -> FloatArray:
        n = self.spec.plant.n
        rows = await gather_limited(
            n, self.spec.threads, lambda r: self._solve_row(r, center, gamma)
        )
        out = np.zeros_like(center)
        for block, values in zip(self._blocks, rows):
            out[:, block.row, block.x_cols] = values[:, : block.x_cols.size]
            out[:, n + block.row, block.u_cols] = values[:, block.x_cols.size :]
        return out


class ColumnProjections:
    """Column half: Euclidean projection onto achievability and locality."""

    def __init__(self, spec: PhiStepSpec) -> None:
        self.spec = spec
        self.support = spec.support
        self.blocks = [_column_block(spec, j) for j in range(spec.plant.n)]
        self._pseudo_inverses = [
            scipy.linalg.pinv(block.equalities) for block in self.blocks
        ]

    def _project(self, j: int, center: FloatArray) -> FloatArray:
        block = self.blocks[j]
        values = block.gather(center[:, :, j])
        residual = block.equalities @ values - block.rhs
        values = values - self._pseudo_inverses[j] @ residual
        return block.scatter(values)

    async def async_prox(self, center: FloatArray, gamma: float) -> FloatArray:
        columns = await gather_limited(
            len(self.blocks), self.spec.threads, lambda j: self._project(j, center)
        )
        return np.stack(columns, axis=2)


def _repair_budgets(spec: PhiStepSpec, magnitude: FloatArray) -> FloatArray:
    """Spread each row's unused L1 budget over its support entries."""
    log_d = spec.scaling.log_values
    ratio = np.exp(log_d[:, None] - log_d[None, :])
    spare = np.maximum(spec.beta - (ratio * magnitude).sum(axis=1), 0.0)
    mask = spec.support.mask
    share = spare / np.maximum(mask.sum(axis=1), 1)
    return np.where(mask, magnitude + share[:, None] / ratio, 0.0)


async def _async_admm_path(
    spec: PhiStepSpec, cfg: AdmmConfig, initial: AdmmState | None
) -> PhiStepResult:
    entry = classify_phi_step(spec.problem, spec.stab)
    if not entry.balanced:
        _LOGGER.debug("Unbalanced %s splitting for %s", spec.problem, spec.stab)
    rows = RowSubproblems(spec)
    columns = ColumnProjections(spec)
    n, m = spec.plant.n, spec.plant.m
    if initial is None:
        zeros = np.zeros((spec.horizon, n + m, n))
        initial = AdmmState(phi=zeros, psi=zeros, lam=zeros)
    try:
        outcome = await async_admm_phi(rows, columns, cfg, initial=initial)
    except InfeasibleError as err:
        _LOGGER.debug("Split Phi step infeasible at beta=%s: %s", spec.beta, err)
        return PhiStepResult(status=PhiStepStatus.INFEASIBLE)

    magnitude = magnitude_matrix(outcome.closed_loop, spec.regulation)
    budgets = _repair_budgets(spec, magnitude)
    blocks = columns.blocks
    repaired = await gather_limited(
        n, spec.threads, lambda j: _solve_column(spec, blocks[j], budgets[:, j])
    )
    if any(column is None for column in repaired):
        _LOGGER.warning(
            "Column repair infeasible after ADMM; returning the column iterate"
        )
        cl = _stacked_closed_loop(outcome.state.psi, spec.support)
        level = scaled_norm(
            magnitude_matrix(cl, spec.regulation), spec.scaling, NormKind.L1
        )
        if level > spec.beta * (1 + SOUNDNESS_TOLERANCE):
            _LOGGER.debug("Column iterate exceeds beta=%s (%.6g)", spec.beta, level)
            return PhiStepResult(status=PhiStepStatus.INFEASIBLE)
    else:
        cl = _assemble(spec, [c for c in repaired if c is not None])
    return _result(spec, cl, outcome.state.iterations)


async def async_phi_step(
    spec: PhiStepSpec,
    *,
    admm: AdmmConfig | None = None,
    initial: AdmmState | None = None,
) -> PhiStepResult:
    """Solve the Phi step along the path its separability class allows."""
    entry = classify_phi_step(spec.problem, spec.stab)
    if entry.needs_admm and spec.constrained:
        return await _async_admm_path(spec, admm or AdmmConfig(), initial)
    _LOGGER.debug("Column-separable Phi step (%s, beta=%s)", spec.stab, spec.beta)
    return await _async_column_path(spec)


def phi_step(
    spec: PhiStepSpec,
    *,
    admm: AdmmConfig | None = None,
    initial: AdmmState | None = None,
) -> PhiStepResult:
    """Synchronous wrapper of async_phi_step."""
    return asyncio.run(async_phi_step(spec, admm=admm, initial=initial))


# Full control ---------------------------------------------------------------


_DUAL_CRITERION = {
    NormKind.L1: NormKind.LINF,
    NormKind.LINF: NormKind.L1,
    NormKind.NU: NormKind.NU,
}


@dataclass(frozen=True, slots=True, eq=False)
class FullControlResult:
    """Full-control responses (Phi_w, Phi_v) with M = sum_p |Phi_w Hw + Phi_v Hv|."""

    status: PhiStepStatus
    phi_w: FirTransferMatrix | None = None
    phi_v: FirTransferMatrix | None = None
    magnitude: FloatArray | None = None
    cost: float = math.inf


@dataclass(frozen=True, slots=True, eq=False)
class FullControlSpec:
    """Full-control Phi step for x+ = A x + w, y = C x."""

    a: FloatArray
    c: FloatArray
    support: Support
    horizon: int
    qw: FloatArray
    qv: FloatArray
    hw: FloatArray
    hv: FloatArray
    stab: NormKind
    scaling: DiagonalScaling
    beta: float = math.inf
    perf: NormKind = NormKind.H2
    threads: int = DEFAULT_THREADS

    def dual(self) -> PhiStepSpec:
        """Return the transposed state-feedback problem."""
        if self.stab not in _DUAL_CRITERION:
            raise UnsupportedError(f"{self.stab} is not a robust stability criterion")
        plant = dualize_full_control(self.a, self.c)
        mask = self.support.mask.T
        support = Support(
            mask=mask,
            input_mask=actuator_mask(plant.b, mask),
            hops=self.support.hops,
            neighborhoods=tuple(tuple(np.flatnonzero(row)) for row in mask),
        )
        return PhiStepSpec(
            plant=plant,
            support=support,
            horizon=self.horizon,
            qx=self.qw,
            qu=self.qv,
            regulation=RegulationMap(np.asarray(self.hw).T, np.asarray(self.hv).T),
            stab=_DUAL_CRITERION[self.stab],
            scaling=self.scaling.inverse(),
            beta=self.beta,
            perf=self.perf,
            threads=self.threads,
        )


async def async_phi_step_full_control(
    spec: FullControlSpec, *, admm: AdmmConfig | None = None
) -> FullControlResult:
    """Solve the full-control Phi step on the dual plant and transpose back."""
    entry = classify_phi_step(PROBLEM_FULL_CONTROL, spec.stab)
    _LOGGER.debug("Full-control Phi step: %s separability", entry.separability)
    result = await async_phi_step(spec.dual(), admm=admm)
    if not result.feasible or result.closed_loop is None or result.magnitude is None:
        return FullControlResult(status=PhiStepStatus.INFEASIBLE)
    return FullControlResult(
        status=PhiStepStatus.OPTIMAL,
        phi_w=result.closed_loop.phi_x.transpose(),
        phi_v=result.closed_loop.phi_u.transpose(),
        magnitude=result.magnitude.T,
        cost=result.cost,
    )


def phi_step_full_control(
    spec: FullControlSpec, *, admm: AdmmConfig | None = None
) -> FullControlResult:
    """Synchronous wrapper of async_phi_step_full_control."""
    return asyncio.run(async_phi_step_full_control(spec, admm=admm))
