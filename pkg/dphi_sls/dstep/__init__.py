"""D-step factory for the D-Phi iteration."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
from enum import StrEnum
import logging
from pathlib import Path
from typing import Protocol

from numpy.typing import ArrayLike

from ..const import DEFAULT_BETA_STEP, DEFAULT_THREADS
from ..dispatch import dstep_scalability
from ..errors import ConfigError, PreconditionError, UnsupportedError
from ..model import Support
from ..norms import DiagonalScaling, NormKind
from ..phistep import AdmmConfig
from .consensus import (
    ConsensusNodeState,
    async_dstep_min_nu_consensus,
    dstep_min_nu_consensus,
)
from .minimize import NuScaling, dstep_min_l1, dstep_min_linf, dstep_min_nu_lp
from .randomize import dstep_iterative_min, dstep_randomize

_LOGGER = logging.getLogger(__name__)


class DStepMode(StrEnum):
    """How the D step chooses the scaling."""

    MINIMIZE = "minimize"
    ITERATIVELY_MINIMIZE = "iteratively_minimize"
    RANDOMIZE = "randomize"


@dataclass(frozen=True, slots=True)
class DStepResult:
    """Scaling returned by a D step and the level it certifies."""

    scaling: DiagonalScaling
    beta: float
    clamped: bool = False


class DStep(Protocol):
    """Define the D-step interface."""

    mode: DStepMode
    kind: NormKind
    distributed: bool

    async def async_step(
        self, m: ArrayLike, *, beta: float, seed: int
    ) -> DStepResult | None:
        """Return a scaling for M, or None when no scaling reaches beta."""
        ...


def minimize_scaling(
    m: ArrayLike, kind: NormKind, support: Support | None = None
) -> DStepResult:
    """Centralized minimizing D step for any robust stability criterion."""
    if kind is NormKind.NU:
        nu = dstep_min_nu_lp(m)
        return DStepResult(nu.scaling, nu.scaling.beta, nu.clamped)
    mask = None if support is None else support.mask
    if kind is NormKind.L1:
        scaling = dstep_min_l1(m, mask)
    elif kind is NormKind.LINF:
        scaling = dstep_min_linf(m, mask)
    else:
        raise UnsupportedError(f"no minimizing D step for {kind}")
    return DStepResult(scaling, scaling.beta)


class MinimizingDStep:
    """Centralized minimizer: the nu LP or the Perron scalings."""

    mode = DStepMode.MINIMIZE
    distributed = False

    def __init__(self, kind: NormKind, support: Support | None = None) -> None:
        self.kind = kind
        self._support = support

    async def async_step(
        self, m: ArrayLike, *, beta: float, seed: int
    ) -> DStepResult:
        return await asyncio.to_thread(minimize_scaling, m, self.kind, self._support)


class ConsensusDStep:
    """Distributed nu minimizer by neighborhood consensus."""

    mode = DStepMode.MINIMIZE
    kind = NormKind.NU
    distributed = True

    def __init__(
        self,
        support: Support,
        admm: AdmmConfig,
        *,
        threads: int = DEFAULT_THREADS,
        disagreement_csv: Path | None = None,
    ) -> None:
        self._support = support
        self._admm = admm
        self._threads = threads
        self._disagreement_csv = disagreement_csv

    async def async_step(self, m: ArrayLike, *, beta: float, seed: int) -> DStepResult:
        nu = await async_dstep_min_nu_consensus(
            m,
            self._support,
            self._admm,
            seed,
            threads=self._threads,
            disagreement_csv=self._disagreement_csv,
        )
        return DStepResult(nu.scaling, nu.scaling.beta, nu.clamped)


class IterativeDStep:
    """Bisection on beta with the randomizing step as feasibility oracle."""

    mode = DStepMode.ITERATIVELY_MINIMIZE

    def __init__(self, kind: NormKind, beta_step: float, *, distributed: bool) -> None:
        if not beta_step > 0:
            raise PreconditionError(f"beta_step must be positive, got {beta_step}")
        self.kind = kind
        self.beta_step = beta_step
        self.distributed = distributed

    async def async_step(self, m: ArrayLike, *, beta: float, seed: int) -> DStepResult:
        scaling, level = await asyncio.to_thread(
            dstep_iterative_min, m, self.kind, self.beta_step, seed
        )
        return DStepResult(scaling, level)


class RandomizingDStep:
    """Any scaling that meets beta, drawn with a seeded random objective."""

    mode = DStepMode.RANDOMIZE

    def __init__(self, kind: NormKind, *, distributed: bool) -> None:
        self.kind = kind
        self.distributed = distributed

    async def async_step(
        self, m: ArrayLike, *, beta: float, seed: int
    ) -> DStepResult | None:
        scaling = await asyncio.to_thread(dstep_randomize, m, beta, self.kind, seed)
        if scaling is None:
            return None
        return DStepResult(scaling, scaling.beta)


def build_dstep(
    *,
    mode: DStepMode | str,
    kind: NormKind,
    consensus: bool = False,
    support: Support | None = None,
    admm: AdmmConfig | None = None,
    beta_step: float = DEFAULT_BETA_STEP,
    threads: int = DEFAULT_THREADS,
    disagreement_csv: Path | None = None,
) -> DStep:
    """Build the D step for a mode and criterion after the scalability check."""
    try:
        mode = DStepMode(mode)
    except ValueError as err:
        raise ConfigError(f"Unsupported D-step mode: {mode}") from err
    if not kind.is_stability_criterion:
        raise UnsupportedError(f"{kind} is not a robust stability criterion")
    entry = dstep_scalability(mode, kind)
    if consensus and not entry.distributed:
        raise ConfigError(f"D step {mode} for {kind} is centralized; disable consensus")

    if mode is DStepMode.RANDOMIZE:
        return RandomizingDStep(kind, distributed=entry.distributed)
    if mode is DStepMode.ITERATIVELY_MINIMIZE:
        return IterativeDStep(kind, beta_step, distributed=entry.distributed)
    if consensus:
        if support is None:
            raise ConfigError("consensus D step needs the support")
        _LOGGER.debug("Using the consensus nu D step on %s nodes", support.n)
        return ConsensusDStep(
            support,
            admm or AdmmConfig(),
            threads=threads,
            disagreement_csv=disagreement_csv,
        )
    return MinimizingDStep(kind, support)


__all__ = [
    "ConsensusDStep",
    "ConsensusNodeState",
    "DStep",
    "DStepMode",
    "DStepResult",
    "IterativeDStep",
    "MinimizingDStep",
    "NuScaling",
    "RandomizingDStep",
    "async_dstep_min_nu_consensus",
    "build_dstep",
    "dstep_iterative_min",
    "dstep_min_l1",
    "dstep_min_linf",
    "dstep_min_nu_lp",
    "dstep_min_nu_consensus",
    "dstep_randomize",
    "minimize_scaling",
]
