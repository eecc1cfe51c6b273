"""D-Phi iteration: alternate Phi steps and D steps until beta reaches beta_max."""

from __future__ import annotations

import asyncio
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
import logging
import math
from pathlib import Path
import time

from numpy.typing import ArrayLike

from .const import (
    ALGORITHM_MINIMIZING,
    ALGORITHM_RANDOMIZING,
    DEFAULT_BETA_STEP,
    DEFAULT_HORIZON,
    DEFAULT_INPUT_PENALTY,
    DEFAULT_SEED,
    DEFAULT_STATE_PENALTY,
    DEFAULT_THREADS,
)
from .dstep import DStep, DStepMode, DStepResult, build_dstep
from .errors import (
    ConfigError,
    ConvergenceError,
    DStepError,
    InfeasibleError,
    PreconditionError,
    UnsupportedError,
)
from .model import ClosedLoop, FloatArray, Plant, Support
from .norms import DiagonalScaling, NormKind, RegulationMap, scaled_norm
from .phistep import AdmmConfig, PhiStepResult, PhiStepSpec, async_phi_step
from .tables import write_table

_LOGGER = logging.getLogger(__name__)

TRACE_COLUMNS = ("k", "phase", "beta", "cost", "feasible", "elapsed_ms")


class InitialScaling(StrEnum):
    """Starting D of the randomizing iteration."""

    IDENTITY = "identity"
    MINIMIZE = "minimize"
    RANDOMIZE = "randomize"


class IterationPhase(StrEnum):
    """Step that produced a trace record."""

    PHI_STEP = "phi-step"
    D_STEP = "d-step"
    RESOLVE = "re-solve"


class DPhiOutcome(StrEnum):
    """How a D-Phi run ended."""

    TARGET_MET = "target_met"
    STALLED = "stalled"
    ABORTED = "aborted"


@dataclass(frozen=True, slots=True)
class IterationRecord:
    """One row of the iteration trace."""

    k: int
    phase: IterationPhase
    beta: float
    cost: float
    feasible: bool
    elapsed_ms: float


@dataclass(slots=True)
class IterationTrace:
    """Records of one D-Phi run in execution order."""

    records: list[IterationRecord] = field(default_factory=list)

    def __iter__(self) -> Iterator[IterationRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def record(
        self,
        k: int,
        phase: IterationPhase,
        beta: float,
        cost: float,
        feasible: bool,
        elapsed_ms: float,
    ) -> None:
        self.records.append(IterationRecord(k, phase, beta, cost, feasible, elapsed_ms))

    @property
    def betas(self) -> list[float]:
        """Beta of every feasible record."""
        return [record.beta for record in self.records if record.feasible]

    def to_csv(
        self, path: Path, provenance: Mapping[str, object] | None = None
    ) -> None:
        write_table(
            path,
            TRACE_COLUMNS,
            (
                [r.k, r.phase, r.beta, r.cost, r.feasible, r.elapsed_ms]
                for r in self.records
            ),
            provenance,
        )


@dataclass(frozen=True, slots=True, eq=False)
class DPhiConfig:
    """Inputs of a D-Phi run."""

    support: Support
    beta_max: float
    horizon: int = DEFAULT_HORIZON
    beta_step: float = DEFAULT_BETA_STEP
    stab: NormKind = NormKind.NU
    perf: NormKind = NormKind.H2
    qx: ArrayLike = DEFAULT_STATE_PENALTY
    qu: ArrayLike = DEFAULT_INPUT_PENALTY
    regulation: RegulationMap | None = None
    dstep_mode: DStepMode = DStepMode.MINIMIZE
    consensus: bool = False
    initial_scaling: InitialScaling = InitialScaling.IDENTITY
    seed: int = DEFAULT_SEED
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    threads: int = DEFAULT_THREADS
    record_timing: bool = True
    disagreement_csv: Path | None = None

    def __post_init__(self) -> None:
        if not self.beta_step > 0 or math.isinf(self.beta_step):
            raise ConfigError(
                f"beta_step must be positive and finite, got {self.beta_step}"
            )
        if not self.beta_max > 0:
            raise ConfigError(f"beta_max must be positive, got {self.beta_max}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        if not self.stab.is_stability_criterion:
            raise ConfigError(f"{self.stab} is not a robust stability criterion")
        try:
            self.build_dstep()
        except UnsupportedError as err:
            raise ConfigError(str(err)) from err

    def build_dstep(self, mode: DStepMode | None = None) -> DStep:
        return build_dstep(
            mode=mode or self.dstep_mode,
            kind=self.stab,
            consensus=self.consensus,
            support=self.support,
            admm=self.admm,
            beta_step=self.beta_step,
            threads=self.threads,
            disagreement_csv=self.disagreement_csv,
        )

    def phi_spec(self, plant: Plant) -> PhiStepSpec:
        """Unconstrained Phi step on the configured support."""
        return PhiStepSpec(
            plant=plant,
            support=self.support,
            horizon=self.horizon,
            qx=self.qx,
            qu=self.qu,
            regulation=self.regulation or RegulationMap.diagonal(plant.n, plant.m),
            stab=self.stab,
            scaling=DiagonalScaling.identity(plant.n),
            perf=self.perf,
            threads=self.threads,
        )


@dataclass(frozen=True, slots=True, eq=False)
class DPhiResult:
    """Last consistent iterate of a D-Phi run."""

    closed_loop: ClosedLoop
    beta: float
    scaling: DiagonalScaling
    magnitude: FloatArray
    cost: float
    trace: IterationTrace
    outcome: DPhiOutcome
    iterations: int
    diagnostic: str | None = None


@dataclass(frozen=True, slots=True, eq=False)
class _Iterate:
    phi: PhiStepResult
    scaling: DiagonalScaling
    beta: float


def _finish(
    iterate: _Iterate,
    trace: IterationTrace,
    outcome: DPhiOutcome,
    k: int,
    diagnostic: str | None = None,
) -> DPhiResult:
    assert iterate.phi.closed_loop is not None and iterate.phi.magnitude is not None
    _LOGGER.info(
        "D-Phi %s after %s iterations: beta=%.6g cost=%.6g",
        outcome,
        k,
        iterate.beta,
        iterate.phi.cost,
    )
    return DPhiResult(
        closed_loop=iterate.phi.closed_loop,
        beta=iterate.beta,
        scaling=iterate.scaling.with_beta(iterate.beta),
        magnitude=iterate.phi.magnitude,
        cost=iterate.phi.cost,
        trace=trace,
        outcome=outcome,
        iterations=k,
        diagnostic=diagnostic,
    )


class _Run:
    """Shared state of one D-Phi run: the base Phi step, the D step and the trace."""

    def __init__(self, plant: Plant, cfg: DPhiConfig) -> None:
        self.cfg = cfg
        self.base = cfg.phi_spec(plant)
        self.dstep = cfg.build_dstep()
        self.trace = IterationTrace()
        self._started = 0.0

    def start(self) -> None:
        self._started = time.perf_counter()

    def log(
        self,
        k: int,
        phase: IterationPhase,
        beta: float,
        cost: float,
        feasible: bool = True,
    ) -> None:
        elapsed = 0.0
        if self.cfg.record_timing:
            elapsed = round(1000.0 * (time.perf_counter() - self._started), 3)
        self.trace.record(k, phase, beta, cost, feasible, elapsed)

    async def first_phi_step(self) -> PhiStepResult:
        result = await async_phi_step(self.base, admm=self.cfg.admm)
        if not result.feasible:
            raise InfeasibleError(
                f"no closed loop of horizon {self.cfg.horizon} exists on the "
                f"{self.cfg.support.hops}-hop support"
            )
        return result

    async def phi_step(self, scaling: DiagonalScaling, target: float) -> PhiStepResult:
        spec = self.base.at_level(scaling, target)
        return await async_phi_step(spec, admm=self.cfg.admm)

    async def d_step(
        self, magnitude: FloatArray, beta: float, k: int, mode: DStepMode | None = None
    ) -> DStepResult | None:
        dstep = self.dstep if mode is None else self.cfg.build_dstep(mode)
        return await dstep.async_step(magnitude, beta=beta, seed=self.cfg.seed + k)

    def norm(self, magnitude: FloatArray | None, scaling: DiagonalScaling) -> float:
        assert magnitude is not None
        return scaled_norm(magnitude, scaling, self.cfg.stab)


def _keep_better(
    step: DStepResult | None, current: DiagonalScaling, achieved: float
) -> tuple[DiagonalScaling, float]:
    if step is None or step.beta > achieved:
        return current, achieved
    return step.scaling, step.beta


async def async_dphi_minimizing(plant: Plant, cfg: DPhiConfig) -> DPhiResult:
    """D-Phi iteration with a minimizing D step."""
    if cfg.dstep_mode is DStepMode.RANDOMIZE:
        raise ConfigError("the minimizing iteration needs a minimizing D step")
    run = _Run(plant, cfg)
    scaling = run.base.scaling
    beta = math.inf
    best: _Iterate | None = None
    k = 0
    while True:
        k += 1
        target = beta - cfg.beta_step
        run.start()
        if best is None:
            result = await run.first_phi_step()
        else:
            if target <= 0:
                stall = DPhiOutcome.STALLED
                return _finish(best, run.trace, stall, k - 1, "beta is zero")
            try:
                result = await run.phi_step(scaling, target)
            except ConvergenceError as err:
                return _finish(best, run.trace, DPhiOutcome.ABORTED, k - 1, str(err))
            if not result.feasible:
                run.log(k, IterationPhase.PHI_STEP, target, math.inf, feasible=False)
                return _finish(best, run.trace, DPhiOutcome.STALLED, k - 1)
        achieved = run.norm(result.magnitude, scaling)
        run.log(k, IterationPhase.PHI_STEP, achieved, result.cost)

        assert result.magnitude is not None
        run.start()
        try:
            step = await run.d_step(result.magnitude, achieved, k)
        except (ConvergenceError, DStepError) as err:
            iterate = _Iterate(result, scaling, achieved)
            return _finish(iterate, run.trace, DPhiOutcome.ABORTED, k, str(err))
        scaling, beta = _keep_better(step, scaling, achieved)
        run.log(k, IterationPhase.D_STEP, beta, result.cost)
        best = _Iterate(result, scaling, beta)
        _LOGGER.info("D-Phi iteration %s: beta=%.6g cost=%.6g", k, beta, result.cost)
        if beta <= cfg.beta_max:
            return _finish(best, run.trace, DPhiOutcome.TARGET_MET, k)


async def _initial_scaling(run: _Run, magnitude: FloatArray) -> DiagonalScaling:
    identity = run.base.scaling
    if run.cfg.initial_scaling is InitialScaling.IDENTITY:
        return identity
    level = run.norm(magnitude, identity)
    mode = (
        DStepMode.MINIMIZE
        if run.cfg.initial_scaling is InitialScaling.MINIMIZE
        else DStepMode.RANDOMIZE
    )
    try:
        step = await run.d_step(magnitude, level, 0, mode)
    except (ConvergenceError, DStepError) as err:
        _LOGGER.warning("Initial scaling failed, starting from D = I: %s", err)
        return identity
    scaling, _ = _keep_better(step, identity, level)
    return scaling


async def async_dphi_randomizing(plant: Plant, cfg: DPhiConfig) -> DPhiResult:
    """D-Phi iteration with a randomizing D step."""
    if cfg.dstep_mode is not DStepMode.RANDOMIZE:
        raise ConfigError("the randomizing iteration needs the randomize D step")
    run = _Run(plant, cfg)

    k = 1
    run.start()
    first = await run.first_phi_step()
    assert first.magnitude is not None
    scaling = await _initial_scaling(run, first.magnitude)
    beta = run.norm(first.magnitude, scaling)
    run.log(k, IterationPhase.PHI_STEP, beta, first.cost)
    best = _Iterate(first, scaling, beta)
    previous = first.magnitude
    _LOGGER.info("D-Phi iteration 1: beta=%.6g cost=%.6g", beta, first.cost)

    while beta > cfg.beta_max:
        target = beta - cfg.beta_step
        if target <= 0:
            return _finish(best, run.trace, DPhiOutcome.STALLED, k, "beta is zero")
        k += 1
        phase = IterationPhase.PHI_STEP
        run.start()
        try:
            result = await run.phi_step(scaling, target)
            if not result.feasible:
                run.log(k, phase, target, math.inf, feasible=False)
                # Re-scale the last feasible M to the target and try once more.
                run.start()
                if (retry := await run.d_step(previous, target, k)) is None:
                    return _finish(best, run.trace, DPhiOutcome.STALLED, k - 1)
                run.log(k, IterationPhase.D_STEP, target, best.phi.cost)
                scaling = retry.scaling
                phase = IterationPhase.RESOLVE
                run.start()
                result = await run.phi_step(scaling, target)
                if not result.feasible:
                    run.log(k, phase, target, math.inf, feasible=False)
                    return _finish(best, run.trace, DPhiOutcome.STALLED, k - 1)
        except (ConvergenceError, DStepError) as err:
            return _finish(best, run.trace, DPhiOutcome.ABORTED, k - 1, str(err))

        assert result.magnitude is not None
        beta = run.norm(result.magnitude, scaling)
        run.log(k, phase, beta, result.cost)
        best = _Iterate(result, scaling, beta)
        previous = result.magnitude
        _LOGGER.info("D-Phi iteration %s: beta=%.6g cost=%.6g", k, beta, result.cost)
        if beta <= cfg.beta_max:
            break

        run.start()
        try:
            step = await run.d_step(result.magnitude, beta, k)
        except (ConvergenceError, DStepError) as err:
            return _finish(best, run.trace, DPhiOutcome.ABORTED, k, str(err))
        if step is not None:
            scaling, beta = _keep_better(step, scaling, beta)
            run.log(k, IterationPhase.D_STEP, beta, result.cost)
            best = _Iterate(result, scaling, beta)

    return _finish(best, run.trace, DPhiOutcome.TARGET_MET, k)


async def async_run_dphi(plant: Plant, cfg: DPhiConfig, algorithm: str) -> DPhiResult:
    """Run the named algorithm."""
    if algorithm == ALGORITHM_MINIMIZING:
        return await async_dphi_minimizing(plant, cfg)
    if algorithm == ALGORITHM_RANDOMIZING:
        return await async_dphi_randomizing(plant, cfg)
    raise ConfigError(f"Unsupported algorithm: {algorithm}")


def dphi_minimizing(plant: Plant, cfg: DPhiConfig) -> DPhiResult:
    """Synchronous wrapper of async_dphi_minimizing."""
    return asyncio.run(async_dphi_minimizing(plant, cfg))


def dphi_randomizing(plant: Plant, cfg: DPhiConfig) -> DPhiResult:
    """Synchronous wrapper of async_dphi_randomizing."""
    return asyncio.run(async_dphi_randomizing(plant, cfg))


@dataclass(frozen=True, slots=True)
class SweepRow:
    """Outcome of one beta_max point of a tradeoff sweep."""

    beta_max: float
    beta: float
    cost: float
    iterations: int
    outcome: DPhiOutcome


async def async_tradeoff_sweep(
    plant: Plant,
    cfg: DPhiConfig,
    beta_max_values: Sequence[float],
    algorithm: str = ALGORITHM_MINIMIZING,
) -> list[SweepRow]:
    """Run the algorithm once per beta_max, in the given order."""
    if not beta_max_values:
        raise PreconditionError("the sweep needs at least one beta_max")
    rows: list[SweepRow] = []
    for beta_max in beta_max_values:
        result = await async_run_dphi(plant, replace(cfg, beta_max=beta_max), algorithm)
        rows.append(
            SweepRow(
                beta_max=float(beta_max),
                beta=result.beta,
                cost=result.cost,
                iterations=result.iterations,
                outcome=result.outcome,
            )
        )
        _LOGGER.info(
            "Sweep point beta_max=%s: beta=%.6g cost=%.6g (%s)",
            beta_max,
            result.beta,
            result.cost,
            result.outcome,
        )
    return rows


def tradeoff_sweep(
    plant: Plant,
    cfg: DPhiConfig,
    beta_max_values: Sequence[float],
    algorithm: str = ALGORITHM_MINIMIZING,
) -> list[SweepRow]:
    """Synchronous wrapper of async_tradeoff_sweep."""
    return asyncio.run(async_tradeoff_sweep(plant, cfg, beta_max_values, algorithm))
