"""Pointwise weight certificates ``B(xi) >= 1`` with ``B P~ + P~^* B <= 2 omega1 B``.

A certificate turns ``exp(t P~(xi))`` into a contraction up to
``exp(omega1 t)`` in the norm ``|N(xi) v|`` where ``N = B^(1/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CertificateInvalidError, InfeasibleError, InputError
from .matfun import exp_scaled, expm_batch
from .symbol import OperatorSpec, eval_symbol

ABSCISSA_MARGIN = 1e-6
COND_LIMIT = 1e8


@dataclass(frozen=True)
class EKCertificate:
    xi: np.ndarray
    B: np.ndarray
    Nsqrt: np.ndarray
    omega1: float
    residuals: tuple  # (min eig(B) - 1, max eig(B P + P^* B - 2 omega1 B))
    method: str = "eig"

    @property
    def valid(self) -> bool:
        return self.residuals[0] >= -1e-9 and self.residuals[1] <= 1e-9


def _herm(A):
    return (A + A.conj().T) / 2


def _lyapunov_eig(S: np.ndarray) -> np.ndarray | None:
    """Solve ``S^* X + X S = -I`` through ``S = V D V^-1``; ``None`` if ill-conditioned."""
    d, V = np.linalg.eig(S)
    if np.linalg.cond(V) > COND_LIMIT:
        return None
    W = np.linalg.inv(V)
    # X = W^* Y W turns the equation into D^* Y + Y D = -V^* V
    C = V.conj().T @ V
    Y = -C / (d.conj()[:, None] + d[None, :])
    return W.conj().T @ Y @ W


def _lyapunov_integral(S: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """``int_0^inf exp(s S^*) exp(s S) ds`` by Gauss panels and doubling."""
    x, w = np.polynomial.legendre.leggauss(20)
    tau = 1.0 / max(1.0, np.linalg.norm(S, 2))
    nodes = tau * (x + 1) / 2
    E = expm_batch(nodes[:, None, None] * S[None])
    X = tau / 2 * np.einsum("k,kji,kjl->il", w, E.conj(), E)
    ET = expm_batch(tau * S)
    # X_{2 tau} = X_tau + exp(tau S)^* X_tau exp(tau S)
    for _ in range(200):
        inc = ET.conj().T @ X @ ET
        X = X + inc
        if np.linalg.norm(inc) <= tol * np.linalg.norm(X):
            return X
        ET = ET @ ET
    raise InfeasibleError("Lyapunov integral did not converge; omega1 too close to the abscissa")


def ek_certificate(op: OperatorSpec, xi, omega1: float) -> EKCertificate:
    """Certificate at ``xi`` from the Lyapunov identity for ``P~ - omega1``.

    ``B0`` solves ``(P~ - omega1)^* B0 + B0 (P~ - omega1) = -1`` and
    ``B = B0 / lambda_min(B0)``, so ``B >= 1`` and
    ``B P~ + P~^* B - 2 omega1 B = -1 / lambda_min(B0) < 0``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    P = eval_symbol(op, xi)
    abscissa = float(np.linalg.eigvals(P).real.max())
    if not omega1 > abscissa + ABSCISSA_MARGIN:
        raise InfeasibleError(
            f"omega1={omega1} must exceed the spectral abscissa {abscissa:.6g} by {ABSCISSA_MARGIN}"
        )
    S = P - omega1 * np.eye(op.m)
    B0 = _lyapunov_eig(S)
    method = "eig"
    if B0 is None:
        B0, method = _lyapunov_integral(S), "integral"
    B0 = _herm(B0)
    lo = float(np.linalg.eigvalsh(B0).min())
    if lo <= 0:
        raise InfeasibleError("Lyapunov solution is not positive definite")
    B = _herm(B0 / lo)
    vals, vecs = np.linalg.eigh(B)
    Nsqrt = _herm((vecs * np.sqrt(vals)) @ vecs.conj().T)
    res = _herm(B @ P + P.conj().T @ B - 2 * omega1 * B)
    residuals = (float(vals.min() - 1.0), float(np.linalg.eigvalsh(res).max()))
    return EKCertificate(xi=xi, B=B, Nsqrt=Nsqrt, omega1=float(omega1), residuals=residuals, method=method)


def weighted_log_norm(cert: EKCertificate, op: OperatorSpec) -> float:
    """``t -> 0+`` slope: largest eigenvalue of the symmetrised ``N P~ N^-1``."""
    P = eval_symbol(op, cert.xi)
    Ninv = np.linalg.inv(cert.Nsqrt)
    A = cert.Nsqrt @ P @ Ninv
    return float(np.linalg.eigvalsh(_herm(A)).max())


def verify_ek_decay(cert: EKCertificate, op: OperatorSpec, t_grid) -> float:
    """Check ``|N exp(t P~) N^-1| <= exp(omega1 t)(1 + 1e-9)`` and return the max log-slope.

    The slope at ``t = 0`` is :func:`weighted_log_norm`.
    """
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise InputError("t_grid must be non-negative")
    P = eval_symbol(op, cert.xi)
    Ninv = np.linalg.inv(cert.Nsqrt)
    best = -np.inf
    for tt in t:
        if tt == 0:
            best = max(best, weighted_log_norm(cert, op))
            continue
        E, off = exp_scaled(P, tt)
        lognorm = np.log(np.linalg.norm(cert.Nsqrt @ E @ Ninv, 2)) + off
        if lognorm > cert.omega1 * tt + np.log1p(1e-9):
            raise CertificateInvalidError(
                f"weighted norm exp({lognorm:.6g}) exceeds exp(omega1 t) at t={tt}"
            )
        best = max(best, lognorm / tt)
    return float(best)


def weighted_seminorm(mode_coeffs: dict, weights: dict, p: float = 2.0, cell_volume: float = 1.0) -> float:
    """``(sum_k |N(xi_k) v_k|^p * cell_volume)^(1/p)``.

    With the mode coefficients of :mod:`petrosem.semigroup`, identity
    weights and ``cell_volume = (2 pi / L)^n``, ``p = 2`` returns the grid
    ``L^2`` norm times ``(2 pi)^(n/2) / L^n``.  The constant is fixed, so
    comparisons between states are unaffected.
    """
    if p < 1:
        raise InputError("p must be at least 1")
    if set(mode_coeffs) != set(weights):
        raise InputError("weights and coefficients must share their keys")
    total = 0.0
    for key, v in mode_coeffs.items():
        total += np.linalg.norm(np.asarray(weights[key]) @ np.asarray(v, dtype=complex)) ** p * cell_volume
    return float(total ** (1.0 / p))
