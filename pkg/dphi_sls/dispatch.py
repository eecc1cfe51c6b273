"""Phi-step separability and D-step scalability tables."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
from enum import StrEnum
import logging
from pathlib import Path

import yaml

from .errors import UnsupportedError

_LOGGER = logging.getLogger(__name__)

_DISPATCH_PATH = Path(__file__).with_name("dispatch.yaml")


class PhiSeparability(StrEnum):
    """Separability class of a Phi step."""

    FULL = "full"
    PARTIAL = "partial"
    NONE = "none"


@dataclass(frozen=True, slots=True)
class PhiStepEntry:
    """How the Phi step decomposes for one problem class and criterion."""

    problem: str
    criterion: str
    separability: PhiSeparability
    balanced: bool

    @property
    def needs_admm(self) -> bool:
        return self.separability is PhiSeparability.PARTIAL


@dataclass(frozen=True, slots=True)
class DStepEntry:
    """Whether a D-step mode exists for a criterion, and whether it distributes."""

    mode: str
    criterion: str
    supported: bool
    distributed: bool


@dataclass(frozen=True, slots=True)
class DispatchTables:
    """Loaded dispatch tables."""

    phi_step: dict[tuple[str, str], PhiStepEntry]
    d_step: dict[tuple[str, str], DStepEntry]


def _normalize_key(value: str) -> str:
    return value.strip().casefold()


def _parse_phi_step(value: object) -> dict[tuple[str, str], PhiStepEntry]:
    """Parse the Phi-step separability table."""
    if not isinstance(value, dict):
        return {}
    entries: dict[tuple[str, str], PhiStepEntry] = {}
    for problem, criteria in value.items():
        if not isinstance(problem, str) or not isinstance(criteria, dict):
            continue
        for criterion, data in criteria.items():
            if not isinstance(criterion, str) or not isinstance(data, dict):
                continue
            try:
                raw = str(data.get("separability", "")).strip()
                separability = PhiSeparability(raw)
            except ValueError:
                _LOGGER.error(
                    "Skipping %s/%s: unknown separability %r",
                    problem,
                    criterion,
                    data.get("separability"),
                )
                continue
            key = (_normalize_key(problem), _normalize_key(criterion))
            entries[key] = PhiStepEntry(
                problem=key[0],
                criterion=key[1],
                separability=separability,
                balanced=bool(
                    data.get("balanced", separability is PhiSeparability.FULL)
                ),
            )
    return entries


def _parse_d_step(value: object) -> dict[tuple[str, str], DStepEntry]:
    """Parse the D-step scalability table."""
    if not isinstance(value, dict):
        return {}
    entries: dict[tuple[str, str], DStepEntry] = {}
    for mode, criteria in value.items():
        if not isinstance(mode, str) or not isinstance(criteria, dict):
            continue
        for criterion, data in criteria.items():
            if not isinstance(criterion, str) or not isinstance(data, dict):
                continue
            key = (_normalize_key(mode), _normalize_key(criterion))
            entries[key] = DStepEntry(
                mode=key[0],
                criterion=key[1],
                supported=bool(data.get("supported", True)),
                distributed=bool(data.get("distributed", False)),
            )
    return entries


def _load_dispatch(path: Path = _DISPATCH_PATH) -> DispatchTables:
    """Load the dispatch tables from YAML."""
    try:
        with path.open(encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except (OSError, yaml.YAMLError) as err:
        _LOGGER.error("Failed to load dispatch tables: %s", err)
        return DispatchTables(phi_step={}, d_step={})

    if not isinstance(data, dict):
        _LOGGER.error("Dispatch file is not a mapping")
        return DispatchTables(phi_step={}, d_step={})

    phi_step = _parse_phi_step(data.get("phi_step"))
    d_step = _parse_d_step(data.get("d_step"))
    if not phi_step:
        _LOGGER.error("Dispatch file has no Phi-step entries")
    if not d_step:
        _LOGGER.error("Dispatch file has no D-step entries")
    return DispatchTables(phi_step=phi_step, d_step=d_step)


_TABLES: DispatchTables | None = None
_TABLES_LOCK = asyncio.Lock()


async def async_get_dispatch() -> DispatchTables:
    """Load the dispatch tables off the event loop and cache them."""
    global _TABLES
    if _TABLES is not None:
        return _TABLES
    async with _TABLES_LOCK:
        if _TABLES is None:
            _TABLES = await asyncio.to_thread(_load_dispatch)
    return _TABLES


def get_dispatch() -> DispatchTables:
    """Return the cached dispatch tables, loading them synchronously if needed."""
    global _TABLES
    if _TABLES is None:
        _TABLES = _load_dispatch()
    return _TABLES


def classify_phi_step(problem: str, criterion: str) -> PhiStepEntry:
    """Return the separability entry for a problem class and criterion."""
    key = (_normalize_key(problem), _normalize_key(criterion))
    if (entry := get_dispatch().phi_step.get(key)) is None:
        raise UnsupportedError(f"No Phi-step dispatch for {problem} with {criterion}")
    return entry


def dstep_scalability(mode: str, criterion: str) -> DStepEntry:
    """Return the scalability entry for a D-step mode and criterion."""
    key = (_normalize_key(mode), _normalize_key(criterion))
    entry = get_dispatch().d_step.get(key)
    if entry is None or not entry.supported:
        raise UnsupportedError(f"D step {mode} is not available for {criterion}")
    return entry
