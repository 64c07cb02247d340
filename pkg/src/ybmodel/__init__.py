"""Discretised Yoccoz-Birkeland population map and chaos diagnostics."""
from .model import (
    DerivedBounds,
    DomainError,
    ModelParams,
    advance,
    advance_two,
    bounds,
    fecundity,
    next_component,
    season_gate,
    survival,
)

__version__ = "0.1.0"

__all__ = [
    "DerivedBounds",
    "DomainError",
    "ModelParams",
    "advance",
    "advance_two",
    "bounds",
    "fecundity",
    "next_component",
    "season_gate",
    "survival",
]
