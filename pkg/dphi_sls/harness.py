"""Command implementations: ring generation, synthesis, sweeps, checks and baselines."""

from __future__ import annotations

import argparse
import asyncio
from dataclasses import dataclass, replace
import logging
import math
import os
from pathlib import Path

import numpy as np

from .baseline import dare_solve, lqr_closed_loop, lqr_margin
from .config import (
    ExperimentConfig,
    StoredController,
    dump_controller,
    dump_plant,
    load_controller,
    load_experiment,
    load_magnitude,
    load_plant,
)
from .const import (
    ACHIEVABILITY_TOLERANCE,
    DEFAULT_THREADS,
    ENV_OUTPUT_DIR,
    EXIT_ERROR,
    EXIT_STALLED,
    EXIT_TARGET_MET,
    SMOKE_FRACTION,
    SMOKE_SEEDS,
    SMOKE_STEPS,
    SOUNDNESS_TOLERANCE,
)
from .dphi import DPhiOutcome, DPhiResult, async_run_dphi, async_tradeoff_sweep
from .dstep import (
    DStepMode,
    dstep_iterative_min,
    dstep_min_nu_consensus,
    dstep_randomize,
    minimize_scaling,
)
from .errors import ConvergenceError, DStepError
from .model import ClosedLoop, Plant, Support, dhop_support, ring_plant
from .norms import NormKind, RegulationMap, magnitude_matrix, scaled_norm
from .phistep import AdmmConfig
from .sls import achievability_residual, sample_uncertainty, uncertain_rollout
from .tables import write_table

_LOGGER = logging.getLogger(__name__)

SWEEP_COLUMNS = ("beta_max", "beta", "cost", "cost_norm", "margin_norm", "iters")

NORMALIZATION_NOTE = "cost_norm = cost / cost_LQR; margin_norm = beta_LQR / beta"

STABILITY_KINDS = (NormKind.L1, NormKind.LINF, NormKind.NU)

_EXIT_CODES = {
    DPhiOutcome.TARGET_MET: EXIT_TARGET_MET,
    DPhiOutcome.STALLED: EXIT_STALLED,
    DPhiOutcome.ABORTED: EXIT_ERROR,
}


def output_dir(default: Path | str) -> Path:
    """The output directory, overridden by the environment when set."""
    return Path(os.environ.get(ENV_OUTPUT_DIR) or default)


@dataclass(frozen=True, slots=True)
class LqrReference:
    """Normalization point: LQR cost and beta per criterion."""

    cost: float
    closed_loop_radius: float
    tail: float
    betas: dict[NormKind, float]


def lqr_reference(
    plant: Plant,
    config: ExperimentConfig,
    kinds: tuple[NormKind, ...] = STABILITY_KINDS,
) -> LqrReference:
    """Solve the LQR problem and measure its margins on the configured horizon."""
    solution = dare_solve(plant.a, plant.b, config.state_penalty, config.input_penalty)
    truncated = lqr_closed_loop(plant, solution.k, config.horizon)
    regulation = config.regulation(plant)
    betas = {
        kind: lqr_margin(truncated.closed_loop, regulation, kind) for kind in kinds
    }
    return LqrReference(
        cost=solution.cost,
        closed_loop_radius=solution.closed_loop_radius,
        tail=truncated.tail,
        betas=betas,
    )


def _ratio(numerator: float, denominator: float) -> float:
    if denominator == 0 or math.isinf(denominator):
        return math.nan
    return numerator / denominator


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = (
        load_experiment(Path(args.config))
        if getattr(args, "config", None)
        else ExperimentConfig.defaults()
    )
    if (threads := getattr(args, "threads", None)) is not None:
        config = replace(config, threads=threads)
    return config


def cmd_ring_gen(args: argparse.Namespace) -> int:
    """Write a random ring plant."""
    plant = ring_plant(args.n, args.rho, args.seed)
    path = Path(args.output) if args.output else output_dir("output") / "plant.json"
    dump_plant(plant, path)
    print(f"wrote {path} (n={plant.n}, rho={args.rho}, seed={args.seed})")
    return EXIT_TARGET_MET


def _summary(result: DPhiResult, reference: LqrReference, kind: NormKind) -> str:
    return (
        f"outcome={result.outcome} beta={result.beta:.6g} cost={result.cost:.6g} "
        f"cost_norm={_ratio(result.cost, reference.cost):.6g} "
        f"margin_norm={_ratio(reference.betas[kind], result.beta):.6g} "
        f"iterations={result.iterations}"
    )


def cmd_dphi(args: argparse.Namespace) -> int:
    """Run one D-Phi synthesis and write its trace and controller."""
    config = _load_config(args)
    plant = config.load_plant()
    support = dhop_support(plant, config.hops)
    out = config.output_dir
    dphi_config = config.dphi_config(
        plant,
        support,
        disagreement_csv=out / "consensus.csv" if config.consensus else None,
    )
    result = asyncio.run(async_run_dphi(plant, dphi_config, config.algorithm))
    reference = lqr_reference(plant, config, (config.stab,))

    provenance = {**config.provenance(), "beta_max": dphi_config.beta_max}
    result.trace.to_csv(out / "trace.csv", provenance)
    dump_controller(
        out / "controller.json",
        result.closed_loop,
        beta=result.beta,
        criterion=config.stab,
        scaling=result.scaling,
        regulation=config.regulation(plant),
        cost=result.cost,
    )
    if result.diagnostic:
        _LOGGER.warning("D-Phi ended early: %s", result.diagnostic)
    print(_summary(result, reference, config.stab))
    return _EXIT_CODES[result.outcome]


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run the configured algorithm over a list of beta_max values."""
    config = _load_config(args)
    if args.beta_max:
        config = replace(config, beta_max=tuple(args.beta_max))
    plant = config.load_plant()
    support = dhop_support(plant, config.hops)
    dphi_config = config.dphi_config(plant, support)
    rows = asyncio.run(
        async_tradeoff_sweep(plant, dphi_config, config.beta_max, config.algorithm)
    )
    reference = lqr_reference(plant, config, (config.stab,))
    beta_lqr = reference.betas[config.stab]
    path = config.output_dir / "sweep.csv"
    write_table(
        path,
        SWEEP_COLUMNS,
        (
            [
                row.beta_max,
                row.beta,
                row.cost,
                _ratio(row.cost, reference.cost),
                _ratio(beta_lqr, row.beta),
                row.iterations,
            ]
            for row in rows
        ),
        {
            **config.provenance(),
            "normalization": NORMALIZATION_NOTE,
            "cost_lqr": reference.cost,
            "beta_lqr": beta_lqr,
        },
    )
    print(f"wrote {path} ({len(rows)} points)")
    return EXIT_TARGET_MET


@dataclass(frozen=True, slots=True)
class Check:
    """One line of the verification report."""

    name: str
    passed: bool
    detail: str


def _support_violation(cl: ClosedLoop, support: Support) -> float:
    outside_x = np.abs(cl.phi_x.taps[:, ~support.mask])
    outside_u = np.abs(cl.phi_u.taps[:, ~support.input_mask])
    return float(max(outside_x.max(initial=0.0), outside_u.max(initial=0.0)))


def smoke_test(
    plant: Plant,
    cl: ClosedLoop,
    regulation: RegulationMap,
    kind: NormKind,
    beta: float,
    *,
    seeds: int = SMOKE_SEEDS,
    steps: int = SMOKE_STEPS,
) -> int:
    """Count seeds whose loop stays bounded under gains at a fraction of 1/beta."""
    bound = SMOKE_FRACTION / beta
    bounded = 0
    for seed in range(seeds):
        uncertainty = sample_uncertainty(plant.n, kind, bound, seed, steps)
        rollout = uncertain_rollout(plant, cl, regulation, uncertainty, steps, seed)
        bounded += rollout.bounded
    return bounded


def verify_controller(
    stored: StoredController, plant: Plant, *, seeds: int = SMOKE_SEEDS
) -> list[Check]:
    """Recompute every certificate of a stored controller."""
    cl = stored.closed_loop
    checks: list[Check] = []
    residual = achievability_residual(plant, cl)
    checks.append(
        Check(
            "achievability",
            residual <= ACHIEVABILITY_TOLERANCE,
            f"residual {residual:.3e}",
        )
    )
    violation = _support_violation(cl, dhop_support(plant, stored.hops))
    checks.append(
        Check(
            "support",
            violation == 0.0,
            f"{stored.hops}-hop, max off-support {violation:.3e}",
        )
    )

    magnitude = magnitude_matrix(cl, stored.regulation)
    achieved = scaled_norm(magnitude, stored.scaling, stored.criterion)
    certified = achieved <= stored.beta * (1 + SOUNDNESS_TOLERANCE)
    checks.append(
        Check(
            "margin",
            certified,
            f"{stored.criterion} scaled norm {achieved:.6g} vs beta {stored.beta:.6g}",
        )
    )
    for kind in STABILITY_KINDS:
        try:
            best = minimize_scaling(magnitude, kind).beta
        except (ConvergenceError, DStepError) as err:
            checks.append(Check(f"best {kind}", False, str(err)))
            continue
        checks.append(Check(f"best {kind}", True, f"beta {best:.6g}"))

    if math.isinf(stored.beta) or stored.beta <= 0:
        checks.append(Check("smoke", True, "no finite margin to test"))
    else:
        bounded = smoke_test(
            plant, cl, stored.regulation, stored.criterion, stored.beta, seeds=seeds
        )
        checks.append(
            Check(
                "smoke",
                bounded == seeds,
                f"{bounded}/{seeds} bounded at {SMOKE_FRACTION}/beta"
                " (not a certificate)",
            )
        )
    return checks


def cmd_verify(args: argparse.Namespace) -> int:
    """Check a stored controller against its plant."""
    stored = load_controller(Path(args.controller))
    plant = load_plant(Path(args.plant))
    checks = verify_controller(stored, plant, seeds=args.seeds)
    for check in checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.detail}")
    return EXIT_TARGET_MET if all(check.passed for check in checks) else EXIT_ERROR


def pattern_support(m: np.ndarray) -> Support:
    """One-hop support of the symmetric nonzero pattern of M."""
    n = m.shape[0]
    mask = (m > 0) | (m.T > 0) | np.eye(n, dtype=bool)
    neighborhoods = tuple(tuple(np.flatnonzero(row).tolist()) for row in mask)
    return Support(mask=mask, input_mask=mask, hops=1, neighborhoods=neighborhoods)


def cmd_dstep(args: argparse.Namespace) -> int:
    """Print beta of every D-step variant for a magnitude matrix."""
    m = load_magnitude(Path(args.matrix))
    kinds = [NormKind(args.kind)] if args.kind else list(STABILITY_KINDS)
    for kind in kinds:
        minimized = minimize_scaling(m, kind)
        print(f"{kind} {DStepMode.MINIMIZE} beta={minimized.beta:.9g}")
        _, level = dstep_iterative_min(m, kind, args.beta_step, args.seed)
        print(f"{kind} {DStepMode.ITERATIVELY_MINIMIZE} beta={level:.9g}")
        target = level + args.beta_step
        randomized = dstep_randomize(m, target, kind, args.seed)
        shown = "infeasible" if randomized is None else f"{randomized.beta:.9g}"
        print(f"{kind} {DStepMode.RANDOMIZE} target={target:.9g} beta={shown}")
        if kind is NormKind.NU:
            consensus = dstep_min_nu_consensus(
                m,
                pattern_support(m),
                AdmmConfig(),
                args.seed,
                threads=args.threads or DEFAULT_THREADS,
            )
            print(f"{kind} consensus beta={consensus.scaling.beta:.9g}")
    return EXIT_TARGET_MET


def cmd_lqr(args: argparse.Namespace) -> int:
    """Print the LQR baseline of the configured plant."""
    config = _load_config(args)
    plant = config.load_plant()
    reference = lqr_reference(plant, config)
    print(
        f"cost={reference.cost:.9g} "
        f"closed_loop_radius={reference.closed_loop_radius:.6g} "
        f"tail={reference.tail:.3e}"
    )
    for kind, beta in reference.betas.items():
        print(f"{kind} beta={beta:.9g}")
    return EXIT_TARGET_MET
