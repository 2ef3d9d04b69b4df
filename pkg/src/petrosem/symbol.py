"""Constant-coefficient matrix differential operators and their symbols.

An operator ``P(d/dx) = sum_alpha A_alpha (d/dx)^alpha`` acting on
``C^m``-valued functions of ``x in R^n`` is stored as a map from
multi-indices to ``m x m`` complex matrices.  Its symbol is the matrix
polynomial ``P~(xi) = sum_alpha i^|alpha| A_alpha xi^alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import factorial, prod
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, NumericalInputError

MultiIndex = tuple[int, ...]

_I_POWERS = (1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j)


def order(alpha: Sequence[int]) -> int:
    """Return ``|alpha|``."""
    return int(sum(alpha))


def graded_lex_key(alpha: MultiIndex):
    return (order(alpha), tuple(alpha))


def multi_indices(n: int, max_order: int) -> list[MultiIndex]:
    """All multi-indices of length ``n`` with ``|alpha| <= max_order``, graded-lex sorted."""
    out = [a for a in product(range(max_order + 1), repeat=n) if sum(a) <= max_order]
    return sorted(out, key=graded_lex_key)


def _as_multi_index(alpha, n: int) -> MultiIndex:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != n:
        raise InputError(f"multi-index {alpha} has {len(alpha)} entries, expected n={n}")
    if any(a < 0 for a in alpha):
        raise InputError(f"multi-index {alpha} has negative entries")
    return alpha


@dataclass(frozen=True)
class OperatorSpec:
    """The operator ``P(d/dx) = sum_{|alpha| <= d} A_alpha (d/dx)^alpha``.

    ``terms`` is kept sorted in graded-lex order so that every sum over it
    is evaluated in the same order.  An empty ``terms`` map is the zero
    operator (``d = 0``).
    """

    m: int
    n: int
    d: int
    terms: Mapping[MultiIndex, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.d < 0:
            raise InputError(f"invalid dimensions m={self.m}, n={self.n}, d={self.d}")
        clean = {}
        for alpha, mat in self.terms.items():
            alpha = _as_multi_index(alpha, self.n)
            if order(alpha) > self.d:
                raise InputError(f"term {alpha} has order {order(alpha)} > d={self.d}")
            mat = np.array(mat, dtype=complex)
            if mat.shape != (self.m, self.m):
                raise InputError(
                    f"matrix for alpha={alpha} has shape {mat.shape}, expected ({self.m}, {self.m})"
                )
            if not np.all(np.isfinite(mat)):
                raise NumericalInputError(f"matrix for alpha={alpha} has non-finite entries")
            mat.setflags(write=False)
            clean[alpha] = mat
        if clean and max(order(a) for a in clean) != self.d:
            raise InputError(f"no term of order d={self.d}; the degree must be tight")
        ordered = dict(sorted(clean.items(), key=lambda kv: graded_lex_key(kv[0])))
        object.__setattr__(self, "terms", ordered)

    @classmethod
    def from_terms(cls, terms: Mapping, m: int | None = None, n: int | None = None) -> "OperatorSpec":
        """Build a spec inferring ``m``, ``n`` and a tight ``d`` from ``terms``."""
        terms = {tuple(int(a) for a in k): np.atleast_2d(np.asarray(v, dtype=complex))
                 for k, v in terms.items()}
        if not terms and (m is None or n is None):
            raise InputError("m and n are required for an empty operator")
        if m is None:
            m = next(iter(terms.values())).shape[0]
        if n is None:
            n = len(next(iter(terms)))
        d = max((order(a) for a in terms), default=0)
        return cls(m=m, n=n, d=d, terms=terms)

    @classmethod
    def zero(cls, m: int, n: int) -> "OperatorSpec":
        return cls(m=m, n=n, d=0, terms={})

    def __add__(self, other: "OperatorSpec") -> "OperatorSpec":
        if (self.m, self.n) != (other.m, other.n):
            raise InputError("cannot add operators with different (m, n)")
        terms = {k: v.copy() for k, v in self.terms.items()}
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v.copy()
        terms = {k: v for k, v in terms.items() if np.any(v != 0)}
        return OperatorSpec.from_terms(terms, m=self.m, n=self.n)

    def shifted(self, c: complex) -> "OperatorSpec":
        """Return ``P + c * identity``."""
        shift = {(0,) * self.n: c * np.eye(self.m)}
        return self + OperatorSpec(m=self.m, n=self.n, d=0, terms=shift)

    def is_zero(self) -> bool:
        return not self.terms

    # constants from the growth estimates
    @property
    def growth_exponent(self) -> int:
        """Polynomial weight exponent ``k = (m - 1) d`` in the bound on ``exp(t P~)``."""
        return (self.m - 1) * self.d

    def derivative_growth_exponent(self, alpha_order: int) -> int:
        """Weight exponent ``(md - 1)(|alpha| + 1)`` for ``xi``-derivatives of ``exp(t P~)``.

        Order 0 returns :attr:`growth_exponent`, which is the sharper base case.
        Constant symbols (``d = 0``) have vanishing derivatives; the exponent
        is clamped at 0 there.
        """
        if alpha_order == 0:
            return self.growth_exponent
        return max(0, (self.m * self.d - 1) * (alpha_order + 1))

    @property
    def pointwise_norm_order(self) -> int:
        """``k0 = n((dm - 1)(2n + 1) + 2)``: derivative order for pointwise decay bounds."""
        n, d, m = self.n, self.d, self.m
        return n * ((d * m - 1) * (2 * n + 1) + 2)


def _check_xi(op: OperatorSpec, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi.reshape(1)
    if xi.shape[-1] != op.n:
        raise InputError(f"xi has {xi.shape[-1]} entries, operator has n={op.n}")
    if not np.all(np.isfinite(xi)):
        raise NumericalInputError("xi must be finite")
    return xi


def _monomial(xi: np.ndarray, alpha: MultiIndex) -> np.ndarray:
    # repeated multiplication keeps integer powers exact
    val = np.ones(xi.shape[:-1])
    for axis, power in enumerate(alpha):
        for _ in range(power):
            val = val * xi[..., axis]
    return val


def eval_symbol(op: OperatorSpec, xi) -> np.ndarray:
    """Evaluate ``P~(xi) = sum i^|alpha| A_alpha xi^alpha``.

    ``xi`` may be a single ``n``-vector (returns ``m x m``) or a stack of
    shape ``(..., n)`` (returns ``(..., m, m)``).
    """
    xi = _check_xi(op, xi)
    out = np.zeros(xi.shape[:-1] + (op.m, op.m), dtype=complex)
    for alpha, mat in op.terms.items():
        coeff = np.asarray(_I_POWERS[order(alpha) % 4] * _monomial(xi, alpha))
        out = out + coeff[..., None, None] * mat
    return out


def symbol_derivative(op: OperatorSpec, alpha) -> OperatorSpec:
    """Operator whose symbol is ``(d/dxi)^alpha P~``.

    Term ``A_gamma`` with ``gamma >= alpha`` contributes to the new
    multi-index ``gamma - alpha`` with coefficient
    ``i^|alpha| gamma! / (gamma - alpha)!``, which keeps the symbol
    convention ``i^|.|`` consistent.
    """
    alpha = _as_multi_index(alpha, op.n)
    if order(alpha) == 0:
        return op
    terms = {}
    for gamma, mat in op.terms.items():
        if all(g >= a for g, a in zip(gamma, alpha)):
            rest = tuple(g - a for g, a in zip(gamma, alpha))
            falling = prod(factorial(g) // factorial(r) for g, r in zip(gamma, rest))
            terms[rest] = _I_POWERS[order(alpha) % 4] * falling * mat
    terms = {k: v for k, v in terms.items() if np.any(v != 0)}
    return OperatorSpec.from_terms(terms, m=op.m, n=op.n)


def apply_operator_modes(op: OperatorSpec, coeffs: Mapping) -> dict:
    """Apply ``P(d/dx)`` to a finite Fourier sum given as ``{xi: vector}``.

    Each coefficient vector ``v`` at frequency ``xi`` becomes ``P~(xi) v``.
    """
    out = {}
    for key, vec in coeffs.items():
        vec = np.asarray(vec, dtype=complex)
        if not np.all(np.isfinite(vec)):
            raise NumericalInputError(f"non-finite coefficient at frequency {key}")
        out[key] = eval_symbol(op, np.atleast_1d(np.asarray(key, dtype=float))) @ vec
    return out
