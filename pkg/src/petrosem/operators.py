"""Bundled example operators with known stability index."""

import numpy as np

from .symbol import OperatorSpec


def heat(n: int = 1) -> OperatorSpec:
    """``u_t = Laplacian u``; symbol ``-|xi|^2``."""
    terms = {}
    for axis in range(n):
        alpha = tuple(2 if i == axis else 0 for i in range(n))
        terms[alpha] = [[1.0]]
    return OperatorSpec.from_terms(terms)


def backward_heat() -> OperatorSpec:
    """``u_t = -u_xx``; symbol ``xi^2`` (ill-posed)."""
    return OperatorSpec.from_terms({(2,): [[-1.0]]})


def reaction_diffusion(rate: float = 1.0) -> OperatorSpec:
    """``u_t = u_xx + rate * u``; symbol ``rate - xi^2``."""
    return OperatorSpec.from_terms({(0,): [[rate]], (2,): [[1.0]]})


def transport(c: float = 1.0) -> OperatorSpec:
    """``u_t = c u_x``; symbol ``i c xi``."""
    return OperatorSpec.from_terms({(1,): [[c]]})


def schrodinger() -> OperatorSpec:
    """``u_t = i u_xx``; symbol ``-i xi^2``."""
    return OperatorSpec.from_terms({(2,): [[1j]]})


def wave() -> OperatorSpec:
    """First-order form of ``v_tt = v_xx``: ``(v, w)_t = (w, v_xx)``.

    Symbol ``[[0, 1], [-xi^2, 0]]`` with eigenvalues ``+-i xi``.
    """
    return OperatorSpec.from_terms({
        (0,): [[0.0, 1.0], [0.0, 0.0]],
        (2,): [[0.0, 0.0], [1.0, 0.0]],
    })


def sqrt_system() -> OperatorSpec:
    """Symbol ``[[0, 1], [i xi, 0]]``: eigenvalues solve ``lambda^2 = i xi`` (ill-posed)."""
    return OperatorSpec.from_terms({
        (0,): [[0.0, 1.0], [0.0, 0.0]],
        (1,): [[0.0, 0.0], [1.0, 0.0]],
    })


def constant(matrix, n: int = 1) -> OperatorSpec:
    """Zeroth-order operator ``u_t = A u`` with a constant symbol."""
    return OperatorSpec.from_terms({(0,) * n: np.asarray(matrix, dtype=complex)})


def diagonal_constant() -> OperatorSpec:
    return constant(np.diag([-1.0, 0.5]))


def skew() -> OperatorSpec:
    return constant([[0.0, 1.0], [-1.0, 0.0]])


# name -> (factory, exact stability index or None when unbounded)
BUNDLED = {
    "heat": (heat, 0.0),
    "reaction_diffusion": (reaction_diffusion, 1.0),
    "transport": (transport, 0.0),
    "wave": (wave, 0.0),
    "schrodinger": (schrodinger, 0.0),
    "diagonal_constant": (diagonal_constant, 0.5),
    "skew": (skew, 0.0),
    "backward_heat": (backward_heat, None),
    "sqrt_system": (sqrt_system, None),
}

CORRECT = [name for name, (_, w) in BUNDLED.items() if w is not None]
INCORRECT = [name for name, (_, w) in BUNDLED.items() if w is None]


def bundled(name: str) -> OperatorSpec:
    return BUNDLED[name][0]()
