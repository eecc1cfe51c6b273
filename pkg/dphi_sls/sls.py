"""Achievability, controller realization and closed-loop simulation.

State feedback responses satisfy, tap by tap,

    Phi_x(1) = I,  Phi_x(p + 1) = A Phi_x(p) + B Phi_u(p),  A Phi_x(T) + B Phi_u(T) = 0,

and the full-control responses (Phi_w, Phi_v) of x+ = A x + w, y = C x satisfy the
transposed system Phi_w(1) = I, Phi_w(p + 1) = Phi_w(p) A + Phi_v(p) C.

Output feedback (x+ = A x + B u + w, y = C x + v) uses four responses
(Phi_xx, Phi_ux, Phi_xy, Phi_uy) with

    [zI - A, -B] [[Phi_xx, Phi_xy], [Phi_ux, Phi_uy]] = [I, 0]
    [[Phi_xx, Phi_xy], [Phi_ux, Phi_uy]] [[zI - A], [-C]] = [[I], [0]]

all strictly proper except Phi_uy. Only the constraints are recorded here; no
output-feedback synthesis is provided.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from .const import DIVERGENCE_RATIO, UNCERTAINTY_SWITCH_PROBABILITY
from .errors import DimensionError, PreconditionError
from .model import ClosedLoop, FirTransferMatrix, FloatArray, Plant
from .norms import NormKind, RegulationMap
from .tables import write_table

_LOGGER = logging.getLogger(__name__)


def achievability_residual(plant: Plant, cl: ClosedLoop) -> float:
    """Max-abs violation of the FIR state-feedback achievability equations."""
    if cl.horizon < 1:
        raise PreconditionError("horizon must be at least 1")
    if cl.n != plant.n or cl.m != plant.m:
        raise DimensionError(
            f"closed loop ({cl.n}, {cl.m}) does not match plant ({plant.n}, {plant.m})"
        )
    phi_x, phi_u = cl.phi_x.taps, cl.phi_u.taps
    # propagated[p] = A Phi_x(p) + B Phi_u(p); must equal Phi_x(p + 1), then 0.
    propagated = np.einsum("ij,pjk->pik", plant.a, phi_x) + np.einsum(
        "ij,pjk->pik", plant.b, phi_u
    )
    residual = float(np.max(np.abs(phi_x[0] - np.eye(plant.n))))
    if cl.horizon > 1:
        residual = max(residual, float(np.max(np.abs(phi_x[1:] - propagated[:-1]))))
    return max(residual, float(np.max(np.abs(propagated[-1]))))


def full_control_residual(
    a: ArrayLike, c: ArrayLike, phi_w: FirTransferMatrix, phi_v: FirTransferMatrix
) -> float:
    """Return the max-abs violation of the full-control achievability equations."""
    a_matrix = np.atleast_2d(np.asarray(a, dtype=np.float64))
    c_matrix = np.atleast_2d(np.asarray(c, dtype=np.float64))
    n = a_matrix.shape[0]
    if phi_w.shape != (n, n) or phi_v.shape != (n, c_matrix.shape[0]):
        raise DimensionError("full-control responses do not match (A, C)")
    if phi_w.horizon != phi_v.horizon:
        raise DimensionError("Phi_w and Phi_v horizons differ")
    propagated = np.einsum("pij,jk->pik", phi_w.taps, a_matrix) + np.einsum(
        "pij,jk->pik", phi_v.taps, c_matrix
    )
    residual = float(np.max(np.abs(phi_w.taps[0] - np.eye(n))))
    if phi_w.horizon > 1:
        residual = max(
            residual, float(np.max(np.abs(phi_w.taps[1:] - propagated[:-1])))
        )
    return max(residual, float(np.max(np.abs(propagated[-1]))))


class ControllerState:
    """State of the realization delta = x + (I - z Phi_x) delta, u = z Phi_u delta."""

    def __init__(self, cl: ClosedLoop) -> None:
        self.phi_x = cl.phi_x.taps
        self.phi_u = cl.phi_u.taps
        # history[k] holds delta_{t-k} after the step at time t.
        self.history = np.zeros((cl.horizon, cl.n))

    @property
    def horizon(self) -> int:
        return int(self.history.shape[0])

    def reset(self) -> None:
        self.history[:] = 0.0


def controller_step(state: ControllerState, x_t: ArrayLike) -> FloatArray:
    """Advance the controller by one step and return u_t."""
    x = np.asarray(x_t, dtype=np.float64)
    if x.shape != (state.history.shape[1],):
        raise DimensionError(
            f"state vector has shape {x.shape}, expected ({state.history.shape[1]},)"
        )
    delta = x - np.einsum("pij,pj->i", state.phi_x[1:], state.history[:-1])
    state.history[1:] = state.history[:-1].copy()
    state.history[0] = delta
    return np.einsum("pij,pj->i", state.phi_u, state.history)


@dataclass(frozen=True, slots=True, eq=False)
class Trajectory:
    """State and input samples x[t], u[t] for t = 0..horizon."""

    x: FloatArray
    u: FloatArray

    @property
    def steps(self) -> int:
        return int(self.x.shape[0])

    def to_csv(self, path: Path) -> None:
        """Write columns t, x_1..x_n, u_1..u_m."""
        n, m = self.x.shape[1], self.u.shape[1]
        write_table(
            path,
            ["t", *(f"x_{i + 1}" for i in range(n)), *(f"u_{k + 1}" for k in range(m))],
            (
                [t, *map(float, self.x[t]), *map(float, self.u[t])]
                for t in range(self.steps)
            ),
        )


def closed_loop_rollout(
    plant: Plant, cl: ClosedLoop, disturbance: ArrayLike, horizon: int
) -> Trajectory:
    """Simulate x[t + 1] = A x[t] + B u[t] + w[t] from x[0] = 0."""
    if horizon < 1:
        raise PreconditionError("rollout horizon must be at least 1")
    w = np.atleast_2d(np.asarray(disturbance, dtype=np.float64))
    if w.size and w.shape[1] != plant.n:
        raise DimensionError(f"disturbance must have {plant.n} columns")
    state = ControllerState(cl)
    x = np.zeros((horizon + 1, plant.n))
    u = np.zeros((horizon + 1, plant.m))
    for t in range(horizon + 1):
        u[t] = controller_step(state, x[t])
        if t == horizon:
            break
        x[t + 1] = plant.a @ x[t] + plant.b @ u[t]
        if t < w.shape[0] and w.size:
            x[t + 1] += w[t]
    return Trajectory(x=x, u=u)


@dataclass(frozen=True, slots=True, eq=False)
class Uncertainty:
    """Diagonal time-varying gains Delta_ii(t) with their declared norm bound."""

    gains: FloatArray
    bound: float
    kind: NormKind

    def __post_init__(self) -> None:
        if self.kind is NormKind.H2:
            raise PreconditionError("uncertainty bounds refer to L1, Linf or nu")
        if self.bound < 0:
            raise PreconditionError(
                f"uncertainty bound must be nonnegative, got {self.bound}"
            )
        if uncertainty_norm(self.gains, self.kind) > self.bound * (1 + 1e-12) + 1e-15:
            raise PreconditionError("uncertainty gains exceed the declared bound")

    def at(self, t: int) -> FloatArray:
        return self.gains[t % self.gains.shape[0]]


def uncertainty_norm(gains: FloatArray, kind: NormKind) -> float:
    """Sum over nodes of sup_t |gain| for nu, max over nodes for L1 and Linf."""
    peaks = np.max(np.abs(gains), axis=0) if gains.size else np.zeros(0)
    if not peaks.size:
        return 0.0
    if kind is NormKind.NU:
        return float(peaks.sum())
    return float(peaks.max())


def sample_uncertainty(
    n: int, kind: NormKind, bound: float, seed: int, horizon: int
) -> Uncertainty:
    """Sample piecewise-constant sign-switching diagonal gains at the declared bound."""
    if bound < 0:
        raise PreconditionError(f"uncertainty bound must be nonnegative, got {bound}")
    if horizon < 1:
        raise PreconditionError("uncertainty horizon must be at least 1")
    rng = np.random.default_rng(seed)
    amplitude = rng.uniform(0.5, 1.0, size=n)
    switches = rng.random((horizon, n)) < UNCERTAINTY_SWITCH_PROBABILITY
    initial = np.where(rng.integers(0, 2, size=n) == 1, 1.0, -1.0)
    signs = initial * np.where(np.cumsum(switches, axis=0) % 2 == 1, -1.0, 1.0)
    gains = signs * amplitude
    peak = uncertainty_norm(gains, kind)
    gains = gains * (bound / peak) if bound > 0 else np.zeros_like(gains)
    return Uncertainty(gains=gains, bound=bound, kind=kind)


@dataclass(frozen=True, slots=True, eq=False)
class UncertainRollout:
    """Trajectory of the uncertain interconnection and its divergence verdict."""

    trajectory: Trajectory
    bounded: bool


def uncertain_rollout(
    plant: Plant,
    cl: ClosedLoop,
    regulation: RegulationMap,
    uncertainty: Uncertainty,
    horizon: int,
    seed: int,
    *,
    impulse: ArrayLike | None = None,
) -> UncertainRollout:
    """Simulate the loop closed through w[t] = Delta(t) z[t] after an initial impulse.

    The verdict is a heuristic: bounded means max |x| never exceeds the divergence
    ratio times the peak over the first controller horizon. It certifies nothing.
    """
    if regulation.outputs != plant.n or uncertainty.gains.shape[1] != plant.n:
        raise DimensionError("diagonal uncertainty needs as many outputs as states")
    if impulse is None:
        impulse = np.random.default_rng(seed).standard_normal(plant.n)
    w0 = np.asarray(impulse, dtype=np.float64)
    state = ControllerState(cl)
    x = np.zeros((horizon + 1, plant.n))
    u = np.zeros((horizon + 1, plant.m))
    finite = True
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon + 1):
            u[t] = controller_step(state, x[t])
            if t == horizon:
                break
            z = regulation.hx @ x[t] + regulation.hu @ u[t]
            w = uncertainty.at(t) * z
            if t == 0:
                w = w + w0
            x[t + 1] = plant.a @ x[t] + plant.b @ u[t] + w
            if not np.all(np.isfinite(x[t + 1])):
                finite = False
                break
    trajectory = Trajectory(x=x, u=u)
    if not finite:
        return UncertainRollout(trajectory, False)
    window = min(cl.horizon, horizon) + 1
    reference = float(np.max(np.abs(x[:window])))
    peak = float(np.max(np.abs(x)))
    bounded = peak <= DIVERGENCE_RATIO * reference if reference > 0 else peak == 0
    if not bounded:
        _LOGGER.debug(
            "Uncertain rollout diverged: peak %.3e reference %.3e", peak, reference
        )
    return UncertainRollout(trajectory, bounded)
