"""Small dense convex QP/LP solver used by the Phi and D steps.

Problems have the form

    minimize    1/2 x'Px + q'x
    subject to  Aeq x = beq,  Ain x <= bin

and are solved by an operator-splitting iteration on the equilibrated problem
(x-update through a cached Cholesky factor, projection of the constraint values,
over-relaxation, scaled dual ascent). Converged iterates are polished on the
guessed active set and accepted only when the KKT conditions check out.
Multipliers follow Px + q + Aeq'y_eq + Ain'y_in = 0 with y_in >= 0.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum
import logging

import numpy as np
from numpy.typing import ArrayLike
import scipy.linalg

from .const import (
    SOLVER_ADAPT_INTERVAL,
    SOLVER_ALPHA,
    SOLVER_CHECK_INTERVAL,
    SOLVER_DIVERGENCE_LIMIT,
    SOLVER_EQUALITY_RHO_SCALE,
    SOLVER_INFEASIBLE_TOL,
    SOLVER_MAX_ITER,
    SOLVER_POLISH_GATE,
    SOLVER_POLISH_INTERVAL,
    SOLVER_PSD_FLOOR,
    SOLVER_RHO,
    SOLVER_RHO_MAX,
    SOLVER_RHO_MIN,
    SOLVER_SCALING_ITER,
    SOLVER_SIGMA,
    SOLVER_STAGNATION_WINDOW,
    SOLVER_TOL_ABS,
    SOLVER_TOL_REL,
)
from .errors import DimensionError, PreconditionError
from .model import FloatArray

_LOGGER = logging.getLogger(__name__)

_RCOND = 1e-10


def _matrix(value: ArrayLike | None, cols: int) -> FloatArray:
    if value is None:
        return np.zeros((0, cols))
    matrix = np.array(value, dtype=np.float64)
    if matrix.size == 0:
        return np.zeros((0, cols))
    return np.atleast_2d(matrix)


def _vector(value: ArrayLike | None, size: int) -> FloatArray:
    if value is None:
        return np.zeros(size)
    return np.array(value, dtype=np.float64).reshape(-1)


def _inf_norm(value: FloatArray) -> float:
    return float(np.max(np.abs(value))) if value.size else 0.0


@dataclass(frozen=True, slots=True, eq=False)
class ConvexSubproblem:
    """Convex QP data; P may be zero for linear programs."""

    p: FloatArray
    q: FloatArray
    a_eq: FloatArray
    b_eq: FloatArray
    a_in: FloatArray
    b_in: FloatArray

    def __post_init__(self) -> None:
        q = _vector(self.q, 0)
        n = q.size
        p = np.array(self.p, dtype=np.float64)
        if p.shape != (n, n):
            raise DimensionError(f"P must be {n}x{n}, got {p.shape}")
        a_eq, a_in = _matrix(self.a_eq, n), _matrix(self.a_in, n)
        b_eq, b_in = _vector(self.b_eq, 0), _vector(self.b_in, 0)
        if a_eq.shape[1] != n or a_in.shape[1] != n:
            raise DimensionError("constraint matrices do not match the variable count")
        if b_eq.size != a_eq.shape[0] or b_in.size != a_in.shape[0]:
            raise DimensionError("constraint right-hand sides do not match their rows")
        if not np.array_equal(p, p.T):
            if _inf_norm(p - p.T) > SOLVER_PSD_FLOOR:
                raise PreconditionError("P must be symmetric")
            p = 0.5 * (p + p.T)
        if np.any(p - np.diag(np.diag(p))):
            floor = float(np.min(scipy.linalg.eigvalsh(p))) if n else 0.0
        else:
            floor = float(np.min(np.diag(p))) if n else 0.0
        if floor < -SOLVER_PSD_FLOOR:
            raise PreconditionError(
                f"P is not positive semidefinite (eigenvalue {floor})"
            )
        for name, value in (
            ("p", p),
            ("q", q),
            ("a_eq", a_eq),
            ("b_eq", b_eq),
            ("a_in", a_in),
            ("b_in", b_in),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def build(
        cls,
        *,
        q: ArrayLike,
        p: ArrayLike | None = None,
        a_eq: ArrayLike | None = None,
        b_eq: ArrayLike | None = None,
        a_in: ArrayLike | None = None,
        b_in: ArrayLike | None = None,
    ) -> ConvexSubproblem:
        """Build a subproblem, filling omitted blocks with empty data."""
        q_vector = _vector(q, 0)
        n = q_vector.size
        return cls(
            p=np.zeros((n, n)) if p is None else np.asarray(p, dtype=np.float64),
            q=q_vector,
            a_eq=_matrix(a_eq, n),
            b_eq=_vector(b_eq, 0),
            a_in=_matrix(a_in, n),
            b_in=_vector(b_in, 0),
        )

    @property
    def variables(self) -> int:
        return int(self.q.size)

    def objective(self, x: FloatArray) -> float:
        return float(0.5 * x @ self.p @ x + self.q @ x)


class SolveStatus(StrEnum):
    """Outcome of a solve."""

    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True, slots=True, eq=False)
class SolveReport:
    """Result of a subproblem solve."""

    status: SolveStatus
    x: FloatArray
    y: FloatArray
    primal_residual: float
    dual_residual: float
    iterations: int
    objective: float
    polished: bool = False

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def _guard(norms: FloatArray) -> FloatArray:
    return np.clip(np.where(norms < 1e-4, 1.0, norms), 1e-4, 1e4)


def _col_max(matrix: FloatArray) -> FloatArray:
    if matrix.shape[0] == 0:
        return np.zeros(matrix.shape[1])
    return np.max(np.abs(matrix), axis=0)


def _row_max(matrix: FloatArray) -> FloatArray:
    if matrix.shape[1] == 0:
        return np.zeros(matrix.shape[0])
    return np.max(np.abs(matrix), axis=1)


def _tolerances(
    problem: ConvexSubproblem,
    x: FloatArray,
    y: FloatArray,
    tol_abs: float,
    tol_rel: float,
) -> tuple[float, float]:
    constraints = np.vstack([problem.a_eq, problem.a_in])
    eps_prim = tol_abs + tol_rel * max(
        _inf_norm(constraints @ x), _inf_norm(problem.b_eq), _inf_norm(problem.b_in)
    )
    eps_dual = tol_abs + tol_rel * max(
        _inf_norm(problem.p @ x), _inf_norm(problem.q), _inf_norm(constraints.T @ y)
    )
    return eps_prim, eps_dual


def _kkt_residuals(
    problem: ConvexSubproblem, x: FloatArray, y: FloatArray
) -> tuple[float, float]:
    n_eq = problem.a_eq.shape[0]
    primal = max(
        _inf_norm(problem.a_eq @ x - problem.b_eq),
        float(np.max(problem.a_in @ x - problem.b_in, initial=0.0)),
    )
    gradient = problem.p @ x + problem.q + problem.a_eq.T @ y[:n_eq]
    gradient = gradient + problem.a_in.T @ y[n_eq:]
    return primal, _inf_norm(gradient)


def _polish(
    problem: ConvexSubproblem,
    x: FloatArray,
    y: FloatArray,
    tol_abs: float,
    tol_rel: float,
) -> tuple[FloatArray, FloatArray] | None:
    """Refine (x, y) on the guessed active set; None when KKT checks fail."""
    n_eq = problem.a_eq.shape[0]
    slack = problem.b_in - problem.a_in @ x
    active = y[n_eq:] > slack
    a_act = np.vstack([problem.a_eq, problem.a_in[active]])
    b_act = np.concatenate([problem.b_eq, problem.b_in[active]])
    eps_prim, eps_dual = _tolerances(problem, x, y, tol_abs, tol_rel)

    if a_act.shape[0]:
        correction = scipy.linalg.lstsq(a_act, a_act @ x - b_act, cond=_RCOND)[0]
        x0 = x - correction
        if _inf_norm(a_act @ x0 - b_act) > eps_prim:
            return None
        null = scipy.linalg.null_space(a_act, rcond=_RCOND)
    else:
        x0 = x
        null = np.eye(problem.variables)
    polished = x0
    if null.shape[1]:
        reduced = null.T @ problem.p @ null
        rhs = -null.T @ (problem.p @ x0 + problem.q)
        step = scipy.linalg.lstsq(reduced, rhs, cond=_RCOND)[0]
        if _inf_norm(reduced @ step - rhs) > eps_dual:
            return None
        polished = x0 + null @ step

    gradient = problem.p @ polished + problem.q
    multipliers = (
        scipy.linalg.lstsq(a_act.T, -gradient, cond=_RCOND)[0]
        if a_act.shape[0]
        else np.zeros(0)
    )
    if multipliers[n_eq:].size and np.min(multipliers[n_eq:]) < -eps_dual:
        return None
    y_polished = np.zeros_like(y)
    y_polished[:n_eq] = multipliers[:n_eq]
    y_polished[n_eq:][active] = np.maximum(multipliers[n_eq:], 0.0)
    primal, dual = _kkt_residuals(problem, polished, y_polished)
    if primal > eps_prim or dual > eps_dual:
        return None
    return polished, y_polished


def _report(
    problem: ConvexSubproblem,
    status: SolveStatus,
    x: FloatArray,
    y: FloatArray,
    iterations: int,
    *,
    polished: bool = False,
) -> SolveReport:
    primal, dual = _kkt_residuals(problem, x, y)
    return SolveReport(
        status=status,
        x=x,
        y=y,
        primal_residual=primal,
        dual_residual=dual,
        iterations=iterations,
        objective=problem.objective(x),
        polished=polished,
    )


def _solve_equality_only(
    problem: ConvexSubproblem, tol_abs: float, tol_rel: float
) -> SolveReport:
    n, n_eq = problem.variables, problem.a_eq.shape[0]
    kkt = np.block(
        [[problem.p, problem.a_eq.T], [problem.a_eq, np.zeros((n_eq, n_eq))]]
    )
    rhs = np.concatenate([-problem.q, problem.b_eq])
    solution = scipy.linalg.lstsq(kkt, rhs, cond=_RCOND)[0]
    x, y = solution[:n], solution[n:]
    eps_prim, eps_dual = _tolerances(problem, x, y, tol_abs, tol_rel)
    primal, dual = _kkt_residuals(problem, x, y)
    if primal > eps_prim:
        status = SolveStatus.INFEASIBLE
    elif dual > eps_dual:
        status = SolveStatus.UNBOUNDED
    else:
        status = SolveStatus.OPTIMAL
    return _report(problem, status, x, y, 0, polished=True)


class _OperatorSplitting:
    """Solver state on the equilibrated problem."""

    def __init__(
        self, problem: ConvexSubproblem, tol_abs: float, tol_rel: float
    ) -> None:
        self.problem = problem
        self.tol_abs = tol_abs
        self.tol_rel = tol_rel
        n_eq, n_in = problem.a_eq.shape[0], problem.a_in.shape[0]
        constraints = np.vstack([problem.a_eq, problem.a_in])
        lower = np.concatenate([problem.b_eq, np.full(n_in, -np.inf)])
        upper = np.concatenate([problem.b_eq, problem.b_in])
        self.equality = np.arange(n_eq + n_in) < n_eq

        p, q, c = problem.p.copy(), problem.q.copy(), constraints.copy()
        d = np.ones(problem.variables)
        e = np.ones(c.shape[0])
        cost = 1.0
        for _ in range(SOLVER_SCALING_ITER):
            d_step = 1.0 / np.sqrt(_guard(np.maximum(_col_max(p), _col_max(c))))
            e_step = 1.0 / np.sqrt(_guard(_row_max(c)))
            p = d_step[:, None] * p * d_step[None, :]
            c = e_step[:, None] * c * d_step[None, :]
            q = d_step * q
            d *= d_step
            e *= e_step
            p_scale = float(np.mean(_col_max(p))) if p.size else 0.0
            gamma = 1.0 / float(_guard(np.array([max(p_scale, _inf_norm(q))]))[0])
            p *= gamma
            q *= gamma
            cost *= gamma
        self.p, self.q, self.c = p, q, c
        self.d, self.e, self.cost = d, e, cost
        self.lower, self.upper = e * lower, e * upper
        self.rho = SOLVER_RHO
        self._factor()

    def _factor(self) -> None:
        self.rho_vector = np.where(
            self.equality, SOLVER_EQUALITY_RHO_SCALE * self.rho, self.rho
        )
        kkt = self.p + SOLVER_SIGMA * np.eye(self.p.shape[0])
        kkt = kkt + self.c.T @ (self.rho_vector[:, None] * self.c)
        self.factor = scipy.linalg.cho_factor(kkt)

    def unscale(self, x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
        return self.d * x, self.e * y / self.cost

    def residuals(
        self, x: FloatArray, z: FloatArray, y: FloatArray
    ) -> tuple[float, float, float, float]:
        cx = self.c @ x
        primal = _inf_norm((cx - z) / self.e)
        px, cty = self.p @ x, self.c.T @ y
        dual = _inf_norm((px + self.q + cty) / self.d) / self.cost
        eps_prim = self.tol_abs + self.tol_rel * max(
            _inf_norm(cx / self.e), _inf_norm(z / self.e)
        )
        eps_dual = self.tol_abs + self.tol_rel * max(
            _inf_norm(px / self.d), _inf_norm(cty / self.d), _inf_norm(self.q / self.d)
        ) / self.cost
        return primal, dual, eps_prim, eps_dual

    def primal_infeasible(self, delta_y: FloatArray) -> bool:
        dy = self.e * delta_y / self.cost
        norm = _inf_norm(dy)
        if norm == 0:
            return False
        eps = SOLVER_INFEASIBLE_TOL * norm
        if _inf_norm((self.c.T @ delta_y) / self.d) / self.cost > eps:
            return False
        lower = self.lower / self.e
        upper = self.upper / self.e
        if np.any(dy[~np.isfinite(lower)] < -eps) or np.any(
            dy[~np.isfinite(upper)] > eps
        ):
            return False
        finite_upper = np.where(np.isfinite(upper), upper, 0.0)
        finite_lower = np.where(np.isfinite(lower), lower, 0.0)
        support = np.sum(finite_upper * np.maximum(dy, 0.0))
        support += np.sum(finite_lower * np.minimum(dy, 0.0))
        return bool(support < -eps)

    def dual_infeasible(self, delta_x: FloatArray) -> bool:
        dx = self.d * delta_x
        norm = _inf_norm(dx)
        if norm == 0:
            return False
        eps = SOLVER_INFEASIBLE_TOL * norm
        if _inf_norm((self.p @ delta_x) / self.d) / self.cost > eps:
            return False
        if float(self.q @ delta_x) / self.cost >= -eps:
            return False
        cdx = (self.c @ delta_x) / self.e
        if np.any(np.abs(cdx[self.equality]) > eps):
            return False
        return not np.any(cdx[~self.equality] > eps)

    def run(
        self, max_iter: int, warm_start: SolveReport | None
    ) -> SolveReport:
        problem = self.problem
        n, k = self.p.shape[0], self.c.shape[0]
        x, y = np.zeros(n), np.zeros(k)
        if warm_start is not None and warm_start.x.size == n and warm_start.y.size == k:
            x = warm_start.x / self.d
            y = warm_start.y * self.cost / self.e
        z = np.clip(self.c @ x, self.lower, self.upper)

        best_primal = np.inf
        last_improvement = 0
        last_active: bytes | None = None
        for iteration in range(1, max_iter + 1):
            x_prev, y_prev = x, y
            rhs = SOLVER_SIGMA * x - self.q + self.c.T @ (self.rho_vector * z - y)
            x_tilde = scipy.linalg.cho_solve(self.factor, rhs)
            z_tilde = self.c @ x_tilde
            x = SOLVER_ALPHA * x_tilde + (1 - SOLVER_ALPHA) * x
            z_relaxed = SOLVER_ALPHA * z_tilde + (1 - SOLVER_ALPHA) * z
            z = np.clip(z_relaxed + y / self.rho_vector, self.lower, self.upper)
            y = y + self.rho_vector * (z_relaxed - z)

            if iteration % SOLVER_CHECK_INTERVAL and iteration != max_iter:
                continue
            primal, dual, eps_prim, eps_dual = self.residuals(x, z, y)
            x_out, y_out = self.unscale(x, y)
            if primal <= eps_prim and dual <= eps_dual:
                if report := self._polished(x_out, y_out, iteration):
                    return report
                return _report(problem, SolveStatus.OPTIMAL, x_out, y_out, iteration)
            if (
                iteration % SOLVER_POLISH_INTERVAL == 0
                and primal <= SOLVER_POLISH_GATE * eps_prim
                and dual <= SOLVER_POLISH_GATE * eps_dual
            ):
                active = (y_out[~self.equality] > 0).tobytes()
                if active != last_active:
                    last_active = active
                    if report := self._polished(x_out, y_out, iteration):
                        return report
            if self.primal_infeasible(y - y_prev):
                _LOGGER.debug("Primal infeasibility certificate at %s", iteration)
                return _report(problem, SolveStatus.INFEASIBLE, x_out, y_out, iteration)
            if self.dual_infeasible(x - x_prev):
                _LOGGER.debug("Dual infeasibility certificate at %s", iteration)
                return _report(problem, SolveStatus.UNBOUNDED, x_out, y_out, iteration)
            if primal < 0.99 * best_primal:
                best_primal = primal
                last_improvement = iteration
            elif (
                _inf_norm(y_out) > SOLVER_DIVERGENCE_LIMIT
                and iteration - last_improvement >= SOLVER_STAGNATION_WINDOW
            ):
                _LOGGER.debug("Dual divergence with a stalled primal at %s", iteration)
                return _report(problem, SolveStatus.INFEASIBLE, x_out, y_out, iteration)
            if iteration % SOLVER_ADAPT_INTERVAL == 0:
                self._adapt(primal / eps_prim, dual / eps_dual)

        x_out, y_out = self.unscale(x, y)
        _LOGGER.debug("Subproblem hit the iteration limit (%s)", max_iter)
        return _report(problem, SolveStatus.ITERATION_LIMIT, x_out, y_out, max_iter)

    def _polished(
        self, x: FloatArray, y: FloatArray, iteration: int
    ) -> SolveReport | None:
        if polished := _polish(self.problem, x, y, self.tol_abs, self.tol_rel):
            return _report(
                self.problem, SolveStatus.OPTIMAL, *polished, iteration, polished=True
            )
        return None

    def _adapt(self, primal_ratio: float, dual_ratio: float) -> None:
        ratio = primal_ratio / max(dual_ratio, 1e-12)
        if ratio > 10 and self.rho < SOLVER_RHO_MAX:
            self.rho = min(self.rho * 10, SOLVER_RHO_MAX)
        elif ratio < 0.1 and self.rho > SOLVER_RHO_MIN:
            self.rho = max(self.rho / 10, SOLVER_RHO_MIN)
        else:
            return
        self._factor()


def solve(
    problem: ConvexSubproblem,
    *,
    tol_abs: float = SOLVER_TOL_ABS,
    tol_rel: float = SOLVER_TOL_REL,
    max_iter: int = SOLVER_MAX_ITER,
    warm_start: SolveReport | None = None,
) -> SolveReport:
    """Solve a convex subproblem; the status is always explicit."""
    if problem.a_in.shape[0] == 0:
        return _solve_equality_only(problem, tol_abs, tol_rel)
    return _OperatorSplitting(problem, tol_abs, tol_rel).run(max_iter, warm_start)


@dataclass(frozen=True, slots=True, eq=False)
class AffineMap:
    """Affine expressions coefficients @ x + constant, one per row."""

    coefficients: FloatArray
    constant: FloatArray

    def __post_init__(self) -> None:
        coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=np.float64))
        constant = np.asarray(self.constant, dtype=np.float64).reshape(-1)
        if constant.size != coefficients.shape[0]:
            raise DimensionError("affine map constant does not match its rows")
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "constant", constant)


def transcribe_abs(
    expr: AffineMap, slacks: Sequence[int] | int
) -> tuple[FloatArray, FloatArray]:
    """Rows (A, b) of A x <= b encoding s >= expr and s >= -expr per component."""
    slack_index = np.atleast_1d(np.asarray(slacks, dtype=np.intp))
    rows = expr.coefficients.shape[0]
    if slack_index.size != rows:
        raise DimensionError("one slack index per affine component is required")
    if np.any(slack_index >= expr.coefficients.shape[1]) or np.any(slack_index < 0):
        raise DimensionError("slack index outside the variable range")
    upper = expr.coefficients.copy()
    lower = -expr.coefficients
    upper[np.arange(rows), slack_index] -= 1.0
    lower[np.arange(rows), slack_index] -= 1.0
    return np.vstack([upper, lower]), np.concatenate([-expr.constant, expr.constant])
