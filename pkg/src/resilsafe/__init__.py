"""Resilient-safety indices and safe control for interconnected systems.

The library computes worst-case safety indices for sub-systems whose
actuators may be faulty or adversarially driven, synthesizes polynomial
control policies for the remaining (protected) sub-systems via sum-of-squares
programming, and validates the closed loop by adversarial simulation.
"""

from .poly import (
    Monomial,
    Polynomial,
    PolyMatrix,
    PolyVector,
    Var,
    monomial_basis,
    uvar,
    xvar,
)

__all__ = [
    "Monomial",
    "Polynomial",
    "PolyMatrix",
    "PolyVector",
    "Var",
    "monomial_basis",
    "uvar",
    "xvar",
]

__version__ = "0.1.0"
