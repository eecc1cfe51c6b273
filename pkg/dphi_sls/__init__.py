"""Distributed robust controller synthesis by D-Phi iteration."""

from __future__ import annotations

from .dphi import (
    DPhiConfig,
    DPhiOutcome,
    DPhiResult,
    dphi_minimizing,
    dphi_randomizing,
    tradeoff_sweep,
)
from .errors import DPhiError
from .model import ClosedLoop, Plant, Support, dhop_support, ring_plant
from .norms import DiagonalScaling, NormKind, RegulationMap

__all__ = [
    "ClosedLoop",
    "DPhiConfig",
    "DPhiError",
    "DPhiOutcome",
    "DPhiResult",
    "DiagonalScaling",
    "NormKind",
    "Plant",
    "RegulationMap",
    "Support",
    "dhop_support",
    "dphi_minimizing",
    "dphi_randomizing",
    "ring_plant",
    "tradeoff_sweep",
]
