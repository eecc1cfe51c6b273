"""Distributed nu D step: each node keeps (eta_i, l_{j@i}) and agrees with neighbors."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path

import networkx as nx
import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..const import BETA_FLOOR, DEFAULT_THREADS, LOG_SCALING_BOUND
from ..errors import ConvergenceError, DimensionError, PreconditionError
from ..model import FloatArray, Support
from ..norms import DiagonalScaling
from ..phistep import AdmmConfig
from ..pool import gather_limited
from ..subsolver import ConvexSubproblem, SolveReport, solve
from ..tables import write_table
from .minimize import NuScaling, magnitude_input, nu_level, pattern_graph

_LOGGER = logging.getLogger(__name__)

_INITIAL_SPREAD = 1e-3


@dataclass(slots=True, eq=False)
class ConsensusNodeState:
    """Local iterate of node i: x = (eta_i, l_{j@i} for j in the neighborhood)."""

    node: int
    neighborhood: tuple[int, ...]
    x: FloatArray
    y: FloatArray
    xbar: FloatArray
    warm: SolveReport | None = field(default=None)

    def __post_init__(self) -> None:
        size = 1 + len(self.neighborhood)
        if self.node not in self.neighborhood:
            raise PreconditionError(
                f"node {self.node} is missing from its own neighborhood"
            )
        for name in ("x", "y", "xbar"):
            if getattr(self, name).shape != (size,):
                raise DimensionError(
                    f"{name} of node {self.node} must have length {size}"
                )

    @property
    def eta(self) -> float:
        return float(self.x[0])

    @property
    def copies(self) -> FloatArray:
        return self.x[1:]

    @property
    def own(self) -> int:
        """Position of l_{i@i} among the copies."""
        return self.neighborhood.index(self.node)


@dataclass(frozen=True, slots=True)
class Disagreement:
    """Largest deviation of any node from its neighborhood averages."""

    iteration: int
    eta_spread: float
    l_spread: float
    progress: float


def _neighborhood_graph(support: Support) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(support.n))
    for i, members in enumerate(support.neighborhoods):
        graph.add_edges_from((i, j) for j in members if j != i)
    return graph


def metropolis_weights(graph: nx.Graph) -> FloatArray:
    """Doubly stochastic averaging weights 1 / (1 + max(deg_i, deg_k)) on the edges."""
    n = graph.number_of_nodes()
    weights = np.zeros((n, n))
    for i, k in graph.edges:
        weight = 1.0 / (1 + max(graph.degree[i], graph.degree[k]))
        weights[i, k] = weights[k, i] = weight
    np.fill_diagonal(weights, 1.0 - weights.sum(axis=1))
    return weights


def _node_subproblem(
    matrix: FloatArray, state: ConsensusNodeState, gamma: float
) -> ConvexSubproblem:
    """eta + y'(x - xbar) + gamma |x - xbar|^2 under the local constraints."""
    i = state.node
    size = state.x.size
    rows: list[NDArray[np.float64]] = []
    rhs: list[float] = []
    for position, j in enumerate(state.neighborhood):
        if matrix[i, j] <= 0:
            continue
        row = np.zeros(size)
        row[0] = -1.0
        if j != i:
            row[1 + state.own] += 1.0
            row[1 + position] -= 1.0
        rows.append(row)
        rhs.append(-math.log(matrix[i, j]))
    box = np.hstack([np.zeros((size - 1, 1)), np.eye(size - 1)])
    floor = np.zeros((1, size))
    floor[0, 0] = -1.0
    q = -2.0 * gamma * state.xbar + state.y
    q[0] += 1.0
    return ConvexSubproblem.build(
        p=2.0 * gamma * np.eye(size),
        q=q,
        a_in=np.vstack([*rows, box, -box, floor]),
        b_in=np.concatenate(
            [
                rhs,
                np.full(size - 1, LOG_SCALING_BOUND),
                np.full(size - 1, LOG_SCALING_BOUND),
                [-math.log(BETA_FLOOR)],
            ]
        ),
    )


def _solve_node(
    matrix: FloatArray, state: ConsensusNodeState, gamma: float
) -> SolveReport:
    report = solve(_node_subproblem(matrix, state, gamma), warm_start=state.warm)
    if not report.ok:
        raise ConvergenceError(
            f"consensus node {state.node} subproblem ended with status {report.status}",
            iterations=report.iterations,
            residual=max(report.primal_residual, report.dual_residual),
        )
    return report


def _averages(
    states: list[ConsensusNodeState], weights: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """Return (weighted eta average per node, mean of the copies of every l_j)."""
    n = len(states)
    etas = np.array([state.eta for state in states])
    totals = np.zeros(n)
    counts = np.zeros(n)
    for state in states:
        members = list(state.neighborhood)
        np.add.at(totals, members, state.copies)
        np.add.at(counts, members, 1.0)
    return weights @ etas, totals / counts


def _write_disagreement(path: Path, history: list[Disagreement]) -> None:
    write_table(
        path,
        ["iter", "max_eta_spread", "max_l_spread"],
        ([entry.iteration, entry.eta_spread, entry.l_spread] for entry in history),
    )


def _initial_states(support: Support, seed: int) -> list[ConsensusNodeState]:
    rng = np.random.default_rng(seed)
    states = []
    for i, members in enumerate(support.neighborhoods):
        x = np.concatenate([[0.0], _INITIAL_SPREAD * rng.standard_normal(len(members))])
        states.append(
            ConsensusNodeState(
                node=i,
                neighborhood=tuple(members),
                x=x,
                y=np.zeros_like(x),
                xbar=x.copy(),
            )
        )
    return states


async def async_dstep_min_nu_consensus(
    m: ArrayLike,
    support: Support,
    cfg: AdmmConfig,
    seed: int,
    *,
    threads: int = DEFAULT_THREADS,
    disagreement_csv: Path | None = None,
) -> NuScaling:
    """Reach the nu-optimal scaling by neighbor-only averaging of local LP iterates."""
    matrix = magnitude_input(m)
    n = matrix.shape[0]
    if support.n != n:
        raise DimensionError(f"support has {support.n} nodes, magnitude matrix has {n}")
    for i, members in enumerate(support.neighborhoods):
        outside = np.ones(n, dtype=bool)
        outside[list(members)] = False
        if np.any(matrix[i, outside] > 0):
            raise PreconditionError(
                f"row {i} of M reaches outside the neighborhood of node {i}"
            )
    if not np.any(matrix):
        return NuScaling(DiagonalScaling.identity(n, 0.0), -math.inf, False)

    graph = _neighborhood_graph(support)
    if (components := nx.number_connected_components(graph)) > 1:
        _LOGGER.info(
            "Consensus runs on %s disconnected neighborhood components", components
        )
    clamped = nx.is_directed_acyclic_graph(pattern_graph(matrix > 0))
    weights = metropolis_weights(graph)
    states = _initial_states(support, seed)
    history: list[Disagreement] = []

    def _update(index: int) -> SolveReport:
        return _solve_node(matrix, states[index], cfg.gamma)

    converged = False
    for iteration in range(1, cfg.max_iter + 1):
        reports = await gather_limited(n, threads, _update)
        progress = 0.0
        for state, report in zip(states, reports):
            progress = max(progress, float(np.max(np.abs(report.x - state.x))))
            state.x = report.x.copy()
            state.warm = report
        eta_bar, l_bar = _averages(states, weights)
        eta_spread = l_spread = 0.0
        for state in states:
            state.xbar = np.concatenate(
                [[eta_bar[state.node]], l_bar[list(state.neighborhood)]]
            )
            deviation = state.x - state.xbar
            eta_spread = max(eta_spread, abs(float(deviation[0])))
            l_spread = max(l_spread, float(np.max(np.abs(deviation[1:]))))
            state.y = state.y + 0.5 * cfg.gamma * deviation
        history.append(Disagreement(iteration, eta_spread, l_spread, progress))
        if iteration % 100 == 0:
            _LOGGER.debug(
                "Consensus iteration %s: eta spread %.3e l spread %.3e progress %.3e",
                iteration,
                eta_spread,
                l_spread,
                progress,
            )
        agreed = max(eta_spread, l_spread) <= cfg.tol_consensus
        if agreed and progress <= cfg.tol_progress:
            converged = True
            break

    if disagreement_csv is not None:
        await asyncio.to_thread(_write_disagreement, disagreement_csv, history)
    if not converged:
        last = history[-1]
        raise ConvergenceError(
            f"nu consensus did not settle in {cfg.max_iter} iterations "
            f"(eta spread {last.eta_spread:.3e}, l spread {last.l_spread:.3e})",
            iterations=cfg.max_iter,
            residual=max(last.eta_spread, last.l_spread),
        )

    _, l_bar = _averages(states, weights)
    log_values = l_bar - l_bar.mean()
    eta = nu_level(matrix, log_values)
    if clamped:
        eta = max(eta, math.log(BETA_FLOOR))
    _LOGGER.debug(
        "Consensus settled after %s iterations at eta %.6g", len(history), eta
    )
    return NuScaling(DiagonalScaling(log_values, math.exp(eta)), eta, clamped)


def dstep_min_nu_consensus(
    m: ArrayLike,
    support: Support,
    cfg: AdmmConfig,
    seed: int,
    *,
    threads: int = DEFAULT_THREADS,
    disagreement_csv: Path | None = None,
) -> NuScaling:
    """Synchronous wrapper of async_dstep_min_nu_consensus."""
    return asyncio.run(
        async_dstep_min_nu_consensus(
            m, support, cfg, seed, threads=threads, disagreement_csv=disagreement_csv
        )
    )
