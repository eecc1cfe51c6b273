"""Experiment, plant and controller documents."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
import json
import logging
import math
import os
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import (
    ADMM_GAMMA,
    ADMM_MAX_ITER,
    ADMM_TOL_CONSENSUS,
    ADMM_TOL_PROGRESS,
    ALGORITHM_MINIMIZING,
    ALGORITHM_RANDOMIZING,
    DEFAULT_BETA_STEP,
    DEFAULT_HOPS,
    DEFAULT_HORIZON,
    DEFAULT_INPUT_PENALTY,
    DEFAULT_RING_RADIUS,
    DEFAULT_RING_SIZE,
    DEFAULT_SEED,
    DEFAULT_STATE_PENALTY,
    DEFAULT_THREADS,
    ENV_OUTPUT_DIR,
)
from .dphi import DPhiConfig, InitialScaling
from .dstep import DStepMode
from .errors import ConfigError, DimensionError
from .model import ClosedLoop, FirTransferMatrix, Plant, Support, ring_plant
from .norms import DiagonalScaling, NormKind, RegulationMap
from .phistep import AdmmConfig

_LOGGER = logging.getLogger(__name__)

_KIND_ALIASES = {
    "l1": NormKind.L1,
    "l_1": NormKind.L1,
    "linf": NormKind.LINF,
    "l_inf": NormKind.LINF,
    "l_infinity": NormKind.LINF,
    "nu": NormKind.NU,
    "ν": NormKind.NU,
    "h2": NormKind.H2,
    "h_2": NormKind.H2,
}


def norm_kind(value: Any) -> NormKind:
    """Coerce a criterion name, accepting common spellings."""
    if isinstance(value, NormKind):
        return value
    key = str(value).strip().casefold().replace("-", "_").replace("∞", "inf")
    if (kind := _KIND_ALIASES.get(key)) is None:
        raise vol.Invalid(f"unknown criterion {value!r}")
    return kind


def _stability_kind(value: Any) -> NormKind:
    kind = norm_kind(value)
    if not kind.is_stability_criterion:
        raise vol.Invalid(f"{kind} is not a robust stability criterion")
    return kind


def _beta(value: Any) -> float:
    """null stands for an unconstrained beta."""
    if value is None:
        return math.inf
    number = float(value)
    if not number > 0:
        raise vol.Invalid("beta_max must be positive")
    return number


def _beta_list(value: Any) -> list[float]:
    values = value if isinstance(value, list) else [value]
    if not values:
        raise vol.Invalid("beta_max list must not be empty")
    return [_beta(item) for item in values]


_COUNT = vol.All(int, vol.Range(min=1))
_POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_NONNEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0))

RING_SCHEMA = vol.Schema(
    {
        vol.Optional("ring_size", default=DEFAULT_RING_SIZE): vol.All(
            int, vol.Range(min=1)
        ),
        vol.Optional("spectral_radius", default=DEFAULT_RING_RADIUS): _POSITIVE,
        vol.Optional("seed", default=DEFAULT_SEED): int,
    }
)

PLANT_FILE_SCHEMA = vol.Schema({vol.Required("file"): str})

ADMM_SCHEMA = vol.Schema(
    {
        vol.Optional("gamma", default=ADMM_GAMMA): _POSITIVE,
        vol.Optional("tol_consensus", default=ADMM_TOL_CONSENSUS): _POSITIVE,
        vol.Optional("tol_progress", default=ADMM_TOL_PROGRESS): _POSITIVE,
        vol.Optional("max_iter", default=ADMM_MAX_ITER): _COUNT,
    }
)

REGULATION_SCHEMA = vol.Schema(
    {
        vol.Optional("state", default=1.0): vol.Coerce(float),
        vol.Optional("input", default=1.0): vol.Coerce(float),
    }
)

EXPERIMENT_SCHEMA = vol.Schema(
    {
        vol.Optional("plant", default=dict): vol.Any(PLANT_FILE_SCHEMA, RING_SCHEMA),
        vol.Optional("horizon", default=DEFAULT_HORIZON): _COUNT,
        vol.Optional("hops", default=DEFAULT_HOPS): vol.All(int, vol.Range(min=0)),
        vol.Optional("stab", default=NormKind.NU.value): _stability_kind,
        vol.Optional("perf", default=NormKind.H2.value): norm_kind,
        vol.Optional("algorithm", default=ALGORITHM_MINIMIZING): vol.In(
            [ALGORITHM_MINIMIZING, ALGORITHM_RANDOMIZING]
        ),
        vol.Optional("dstep_mode"): vol.All(
            vol.Coerce(str), vol.Coerce(DStepMode, msg="unknown D-step mode")
        ),
        vol.Optional("consensus", default=False): bool,
        vol.Optional("initial_scaling", default=InitialScaling.IDENTITY.value): (
            vol.Coerce(InitialScaling, msg="unknown initial scaling")
        ),
        vol.Optional("beta_step", default=DEFAULT_BETA_STEP): _POSITIVE,
        vol.Optional("beta_max", default=None): _beta_list,
        vol.Optional("state_penalty", default=DEFAULT_STATE_PENALTY): _NONNEGATIVE,
        vol.Optional("input_penalty", default=DEFAULT_INPUT_PENALTY): _POSITIVE,
        vol.Optional("regulation", default=dict): REGULATION_SCHEMA,
        vol.Optional("admm", default=dict): ADMM_SCHEMA,
        vol.Optional("seed", default=DEFAULT_SEED): int,
        vol.Optional("threads", default=DEFAULT_THREADS): _COUNT,
        vol.Optional("record_timing", default=True): bool,
        vol.Optional("output_dir", default="output"): str,
    }
)

_MATRIX = [[vol.Coerce(float)]]

PLANT_SCHEMA = vol.Schema(
    {
        vol.Required("n"): _COUNT,
        vol.Required("m"): _COUNT,
        vol.Required("A"): _MATRIX,
        vol.Required("B"): _MATRIX,
        vol.Optional("graph", default=list): [vol.ExactSequence([int, int])],
        vol.Optional("seed", default=None): vol.Any(None, int),
    }
)

MAGNITUDE_SCHEMA = vol.Schema({vol.Required("M"): _MATRIX})

CONTROLLER_SCHEMA = vol.Schema(
    {
        vol.Required("horizon"): _COUNT,
        vol.Required("n"): _COUNT,
        vol.Required("m"): _COUNT,
        vol.Required("phi_x"): [_MATRIX],
        vol.Required("phi_u"): [_MATRIX],
        vol.Required("hops"): vol.All(int, vol.Range(min=0)),
        vol.Required("beta"): vol.Any(None, vol.Coerce(float)),
        vol.Required("criterion"): _stability_kind,
        vol.Required("scaling"): [vol.Coerce(float)],
        vol.Required("regulation"): {
            vol.Required("hx"): _MATRIX,
            vol.Required("hu"): _MATRIX,
        },
        vol.Optional("cost", default=None): vol.Any(None, vol.Coerce(float)),
    }
)


def _line_of(text: str, path: Sequence[Any]) -> int | None:
    """Line of the innermost key of path, searching each key after its parent."""
    position = 0
    found: int | None = None
    for key in path:
        if not isinstance(key, str):
            continue
        if (index := text.find(json.dumps(key), position)) < 0:
            break
        found = position = index
    return None if found is None else text.count("\n", 0, found) + 1


def _load_document(path: Path, schema: vol.Schema) -> dict[str, Any]:
    """Parse and validate a JSON document, reporting the offending line."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    try:
        document = json.loads(text)
    except json.JSONDecodeError as err:
        message = f"{path}: {err.msg} (column {err.colno})"
        raise ConfigError(message, line=err.lineno) from err
    try:
        return schema(document)
    except vol.Invalid as err:
        where = ".".join(str(part) for part in err.path) or "<root>"
        raise ConfigError(
            f"{path}: {where}: {err.error_message}", line=_line_of(text, err.path)
        ) from err


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """Validated experiment configuration."""

    plant_file: Path | None
    ring_size: int
    ring_radius: float
    plant_seed: int
    horizon: int
    hops: int
    stab: NormKind
    perf: NormKind
    algorithm: str
    dstep_mode: DStepMode
    consensus: bool
    initial_scaling: InitialScaling
    beta_step: float
    beta_max: tuple[float, ...]
    state_penalty: float
    input_penalty: float
    regulation_state: float
    regulation_input: float
    admm: AdmmConfig
    seed: int
    threads: int
    record_timing: bool
    output_dir: Path

    @classmethod
    def from_document(
        cls, document: Mapping[str, Any], *, base_dir: Path | None = None
    ) -> ExperimentConfig:
        """Build the config from a validated document."""
        plant = document["plant"]
        plant_file = None
        if "file" in plant:
            plant_file = Path(plant["file"])
            if base_dir is not None and not plant_file.is_absolute():
                plant_file = base_dir / plant_file
        algorithm = document["algorithm"]
        default_mode = (
            DStepMode.RANDOMIZE
            if algorithm == ALGORITHM_RANDOMIZING
            else DStepMode.MINIMIZE
        )
        output_dir = os.environ.get(ENV_OUTPUT_DIR) or document["output_dir"]
        return cls(
            plant_file=plant_file,
            ring_size=plant.get("ring_size", DEFAULT_RING_SIZE),
            ring_radius=plant.get("spectral_radius", DEFAULT_RING_RADIUS),
            plant_seed=plant.get("seed", DEFAULT_SEED),
            horizon=document["horizon"],
            hops=document["hops"],
            stab=document["stab"],
            perf=document["perf"],
            algorithm=algorithm,
            dstep_mode=document.get("dstep_mode", default_mode),
            consensus=document["consensus"],
            initial_scaling=document["initial_scaling"],
            beta_step=document["beta_step"],
            beta_max=tuple(document["beta_max"]),
            state_penalty=document["state_penalty"],
            input_penalty=document["input_penalty"],
            regulation_state=document["regulation"]["state"],
            regulation_input=document["regulation"]["input"],
            admm=AdmmConfig(**document["admm"]),
            seed=document["seed"],
            threads=document["threads"],
            record_timing=document["record_timing"],
            output_dir=Path(output_dir),
        )

    @classmethod
    def defaults(cls) -> ExperimentConfig:
        """Ring experiment defaults."""
        return cls.from_document(EXPERIMENT_SCHEMA({}))

    def load_plant(self) -> Plant:
        if self.plant_file is not None:
            return load_plant(self.plant_file)
        return ring_plant(self.ring_size, self.ring_radius, self.plant_seed)

    def regulation(self, plant: Plant) -> RegulationMap:
        return RegulationMap.diagonal(
            plant.n, plant.m, hx=self.regulation_state, hu=self.regulation_input
        )

    def dphi_config(
        self,
        plant: Plant,
        support: Support,
        *,
        beta_max: float | None = None,
        disagreement_csv: Path | None = None,
    ) -> DPhiConfig:
        """D-Phi inputs for one beta_max (the first configured one by default)."""
        try:
            return DPhiConfig(
                support=support,
                beta_max=self.beta_max[0] if beta_max is None else beta_max,
                horizon=self.horizon,
                beta_step=self.beta_step,
                stab=self.stab,
                perf=self.perf,
                qx=self.state_penalty,
                qu=self.input_penalty,
                regulation=self.regulation(plant),
                dstep_mode=self.dstep_mode,
                consensus=self.consensus,
                initial_scaling=self.initial_scaling,
                seed=self.seed,
                admm=self.admm,
                threads=self.threads,
                record_timing=self.record_timing,
                disagreement_csv=disagreement_csv,
            )
        except DimensionError as err:
            raise ConfigError(str(err)) from err

    def provenance(self) -> dict[str, object]:
        """Header lines identifying the run."""
        plant = (
            str(self.plant_file)
            if self.plant_file is not None
            else f"ring n={self.ring_size} rho={self.ring_radius} "
            f"seed={self.plant_seed}"
        )
        return {
            "plant": plant,
            "horizon": self.horizon,
            "hops": self.hops,
            "stab": self.stab,
            "perf": self.perf,
            "algorithm": self.algorithm,
            "dstep_mode": self.dstep_mode,
            "consensus": self.consensus,
            "beta_step": self.beta_step,
            "state_penalty": self.state_penalty,
            "input_penalty": self.input_penalty,
            "seed": self.seed,
        }


def load_experiment(path: Path) -> ExperimentConfig:
    """Load and validate an experiment config file."""
    document = _load_document(path, EXPERIMENT_SCHEMA)
    config = ExperimentConfig.from_document(document, base_dir=path.parent)
    _LOGGER.debug("Loaded experiment config %s", path)
    return config


def load_plant(path: Path) -> Plant:
    """Load a plant JSON document."""
    document = _load_document(path, PLANT_SCHEMA)
    try:
        return Plant.from_document(document)
    except (DimensionError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


def dump_plant(plant: Plant, path: Path) -> None:
    """Write a plant JSON document; identical plants give identical bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plant.to_document(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, slots=True, eq=False)
class StoredController:
    """Closed loop read back from a controller document."""

    closed_loop: ClosedLoop
    hops: int
    beta: float
    criterion: NormKind
    scaling: DiagonalScaling
    regulation: RegulationMap
    cost: float | None = None


def dump_controller(
    path: Path,
    closed_loop: ClosedLoop,
    *,
    beta: float,
    criterion: NormKind,
    scaling: DiagonalScaling,
    regulation: RegulationMap,
    cost: float | None = None,
) -> None:
    """Write the taps as JSON; floats keep their repr so they read back exactly."""
    document = {
        "horizon": closed_loop.horizon,
        "n": closed_loop.n,
        "m": closed_loop.m,
        "phi_x": closed_loop.phi_x.taps.tolist(),
        "phi_u": closed_loop.phi_u.taps.tolist(),
        "hops": closed_loop.support.hops,
        "beta": beta if math.isfinite(beta) else None,
        "criterion": criterion.value,
        "scaling": scaling.log_values.tolist(),
        "regulation": {"hx": regulation.hx.tolist(), "hu": regulation.hu.tolist()},
        "cost": cost,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document) + "\n", encoding="utf-8")


def load_controller(path: Path) -> StoredController:
    """Load a controller document on the full support; callers check locality."""
    document = _load_document(path, CONTROLLER_SCHEMA)
    horizon, n, m = document["horizon"], document["n"], document["m"]
    try:
        phi_x = FirTransferMatrix(np.asarray(document["phi_x"]).reshape(horizon, n, n))
        phi_u = FirTransferMatrix(np.asarray(document["phi_u"]).reshape(horizon, m, n))
        scaling = DiagonalScaling(np.asarray(document["scaling"]))
        regulation = RegulationMap(
            document["regulation"]["hx"], document["regulation"]["hu"]
        )
        if scaling.n != n:
            raise DimensionError(f"scaling has {scaling.n} entries, expected {n}")
    except (DimensionError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err
    beta = math.inf if document["beta"] is None else document["beta"]
    return StoredController(
        closed_loop=ClosedLoop(phi_x, phi_u, Support.full(n, m)),
        hops=document["hops"],
        beta=beta,
        criterion=document["criterion"],
        scaling=scaling.with_beta(beta),
        regulation=regulation,
        cost=document["cost"],
    )


def load_magnitude(path: Path) -> np.ndarray:
    """Load a nonnegative square magnitude matrix stored under key "M"."""
    document = _load_document(path, MAGNITUDE_SCHEMA)
    rows = document["M"]
    if not rows or any(len(row) != len(rows) for row in rows):
        raise ConfigError(f"{path}: M must be a nonempty square matrix")
    matrix = np.asarray(rows, dtype=np.float64)
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise ConfigError(f"{path}: M must be finite and nonnegative")
    return matrix
