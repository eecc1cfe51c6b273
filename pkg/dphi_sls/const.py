"""Constants for the D-Phi synthesis package."""

from __future__ import annotations

from typing import Final

DOMAIN: Final = "dphi_sls"

ENV_OUTPUT_DIR: Final = "DPHI_SLS_OUTPUT_DIR"

CRITERION_L1: Final = "l1"
CRITERION_LINF: Final = "linf"
CRITERION_NU: Final = "nu"
CRITERION_H2: Final = "h2"
CRITERION_HINF: Final = "h_inf"

PROBLEM_STATE_FEEDBACK: Final = "state_feedback"
PROBLEM_FULL_CONTROL: Final = "full_control"
PROBLEM_OUTPUT_FEEDBACK: Final = "output_feedback"

ALGORITHM_MINIMIZING: Final = "alg1"
ALGORITHM_RANDOMIZING: Final = "alg2"

# Ring experiment defaults.
DEFAULT_RING_SIZE: Final = 10
DEFAULT_RING_RADIUS: Final = 3.0
DEFAULT_SEED: Final = 7
DEFAULT_HORIZON: Final = 30
DEFAULT_HOPS: Final = 2
DEFAULT_STATE_PENALTY: Final = 1.0
DEFAULT_INPUT_PENALTY: Final = 50.0
DEFAULT_BETA_STEP: Final = 0.05
DEFAULT_THREADS: Final = 4

RING_MAGNITUDE_LOW: Final = 0.2
RING_MAGNITUDE_HIGH: Final = 1.0
RING_RADIUS_TOLERANCE: Final = 1e-9

POWER_ITERATION_TOLERANCE: Final = 1e-12
POWER_ITERATION_MAX_ITER: Final = 100_000

# Embedded convex solver.
SOLVER_TOL_ABS: Final = 1e-8
SOLVER_TOL_REL: Final = 1e-8
SOLVER_MAX_ITER: Final = 100_000
SOLVER_SIGMA: Final = 1e-6
SOLVER_ALPHA: Final = 1.6
SOLVER_RHO: Final = 0.1
SOLVER_RHO_MIN: Final = 1e-6
SOLVER_RHO_MAX: Final = 1e6
SOLVER_EQUALITY_RHO_SCALE: Final = 1e3
SOLVER_SCALING_ITER: Final = 10
SOLVER_CHECK_INTERVAL: Final = 25
SOLVER_ADAPT_INTERVAL: Final = 200
SOLVER_POLISH_INTERVAL: Final = 100
SOLVER_POLISH_GATE: Final = 1e3
SOLVER_INFEASIBLE_TOL: Final = 1e-6
SOLVER_DIVERGENCE_LIMIT: Final = 1e8
SOLVER_STAGNATION_WINDOW: Final = 1000
SOLVER_PSD_FLOOR: Final = 1e-10

PHI_STEP_MAX_ITER: Final = 20_000

# ADMM defaults; gamma is left to the user by the method, 1.0 is ours.
ADMM_GAMMA: Final = 1.0
ADMM_TOL_CONSENSUS: Final = 1e-4
ADMM_TOL_PROGRESS: Final = 1e-4
ADMM_MAX_ITER: Final = 5000
# Iterations with a standing consensus gap and no progress before the split
# problem is declared infeasible.
ADMM_STALL_WINDOW: Final = 50

# D step.
LOG_SCALING_BOUND: Final = 20.0
BETA_FLOOR: Final = 1e-12
PERRON_PERTURBATION: Final = 1e-9
PERRON_CERTIFICATE_SLACK: Final = 1e-6
RANDOMIZE_MARGIN: Final = 1e-7
RANDOMIZE_TOLERANCE: Final = 1e-9
RANDOMIZE_VECTOR_BOUND: Final = 1e6

SOUNDNESS_TOLERANCE: Final = 1e-6
ACHIEVABILITY_TOLERANCE: Final = 1e-6

# Riccati baseline.
DARE_TOLERANCE: Final = 1e-9
DARE_MAX_ITER: Final = 100_000
DARE_DIVERGENCE_LIMIT: Final = 1e12

# Uncertain rollout smoke test.
DIVERGENCE_RATIO: Final = 1e6
UNCERTAINTY_SWITCH_PROBABILITY: Final = 0.05
SMOKE_SEEDS: Final = 100
SMOKE_STEPS: Final = 1000
SMOKE_FRACTION: Final = 0.9

EXIT_TARGET_MET: Final = 0
EXIT_ERROR: Final = 1
EXIT_STALLED: Final = 2
