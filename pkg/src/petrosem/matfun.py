"""Matrix exponentials of symbols and their interpolation polynomials.

Three independent routes to ``exp(tM)`` live here:

* :func:`exp_reference` -- scaling, truncated Taylor series, squaring.
  This is the oracle the other routes are checked against.
* :func:`newton_interp_exp` + :func:`eval_poly_at_matrix` -- the Newton
  form of the interpolation polynomial of ``z -> exp(tz)`` at the
  eigenvalues, with confluent divided differences.
* :func:`power_coeffs_contour` -- the power form ``sum a_k z^k`` whose
  coefficients are contour integrals of elementary symmetric functions of
  ``1/(z - lambda_j)``, evaluated by the trapezoid rule on circles.

:func:`propagator_decomposition` writes ``exp(t P~(xi))`` as a polynomial
of degree ``2m`` in ``P~(xi)`` through a shifted resolvent factorisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, lgamma, log
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ClearanceError,
    ContourResolutionError,
    ContractViolationError,
    ExpOverflowError,
    IllConditionedError,
    InputError,
    NumericalError,
    NumericalInputError,
)
from .symbol import OperatorSpec, eval_symbol

CLUSTER_RTOL = 1e-8
# log of the largest finite double, with headroom for the polynomial factor
_LOG_OVERFLOW = 700.0


def _as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericalInputError("matrix has non-finite entries")
    return M


def spread(values) -> float:
    """Diameter ``max |x_i - x_j|`` of a finite set of complex numbers."""
    v = np.asarray(values, dtype=complex).ravel()
    if v.size < 2:
        return 0.0
    return float(np.max(np.abs(v[:, None] - v[None, :])))


def cluster_tolerance(values) -> float:
    return CLUSTER_RTOL * (1.0 + spread(values))


# ---------------------------------------------------------------- node sets


@dataclass(frozen=True)
class NodeSet:
    """Distinct interpolation nodes with multiplicities."""

    nodes: tuple
    multiplicities: tuple

    def __post_init__(self):
        nodes = tuple(complex(z) for z in self.nodes)
        mults = tuple(int(k) for k in self.multiplicities)
        if len(nodes) != len(mults):
            raise InputError("nodes and multiplicities differ in length")
        if any(k < 1 for k in mults):
            raise InputError("multiplicities must be positive")
        if len(set(nodes)) != len(nodes):
            raise InputError("nodes must be distinct; use multiplicities for repeats")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "multiplicities", mults)

    @classmethod
    def from_values(cls, values, tol: float | None = None) -> "NodeSet":
        """Cluster a sequence of values (with repeats) into a node set.

        Values closer than ``tol`` (default :func:`cluster_tolerance`) are
        merged by single linkage; the cluster mean becomes the node.
        """
        v = np.asarray(values, dtype=complex).ravel()
        if tol is None:
            tol = cluster_tolerance(v)
        parent = list(range(v.size))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(v.size):
            for j in range(i + 1, v.size):
                if abs(v[i] - v[j]) <= tol:
                    parent[find(i)] = find(j)
        groups: dict[int, list[int]] = {}
        for i in range(v.size):
            groups.setdefault(find(i), []).append(i)
        pairs = [(complex(np.mean(v[idx])), len(idx)) for idx in groups.values()]
        pairs.sort(key=lambda p: (p[0].real, p[0].imag))
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def total(self) -> int:
        return sum(self.multiplicities)

    @property
    def spread(self) -> float:
        return spread(self.nodes)

    @property
    def abscissa(self) -> float:
        return max(z.real for z in self.nodes)

    def sequence(self) -> np.ndarray:
        """Nodes in stored order, each repeated per its multiplicity."""
        return np.repeat(np.array(self.nodes, dtype=complex), self.multiplicities)

    def shifted(self, s: complex) -> "NodeSet":
        return NodeSet(tuple(z - s for z in self.nodes), self.multiplicities)


def eigenvalues(M, tol: float | None = None) -> NodeSet:
    """All eigenvalues of ``M`` (LAPACK ``geev``), clustered into a :class:`NodeSet`."""
    M = _as_square(M)
    try:
        vals = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed for {M.shape} matrix: {exc}") from exc
    return NodeSet.from_values(vals, tol)


def leja_order(nodes: Sequence[complex]) -> list[int]:
    """Greedy Leja ordering: each next node maximises the product of distances."""
    pts = np.asarray(nodes, dtype=complex)
    if pts.size == 0:
        return []
    first = int(np.lexsort((pts.imag, pts.real, -np.abs(pts)))[0])
    order = [first]
    logdist = np.zeros(pts.size)
    remaining = set(range(pts.size)) - {first}
    while remaining:
        with np.errstate(divide="ignore"):
            logdist += np.log(np.abs(pts - pts[order[-1]]))
        nxt = max(sorted(remaining), key=lambda i: logdist[i])
        order.append(nxt)
        remaining.discard(nxt)
    return order


# --------------------------------------------------------- series oracle


def _one_norm(A: np.ndarray) -> np.ndarray:
    return np.abs(A).sum(axis=-2).max(axis=-1)


def expm_batch(A) -> np.ndarray:
    """``exp(A)`` for a stack ``(..., m, m)`` by scaling, Taylor and squaring.

    Each matrix is halved ``s`` times until its 1-norm is at most 1/2, the
    Taylor series is summed until the next term is below ``1e-18`` relative,
    and the result is squared ``s`` times.
    """
    A = np.asarray(A, dtype=complex)
    shape = A.shape
    m = shape[-1]
    flat = A.reshape(-1, m, m)
    if flat.shape[0] == 0:
        return A.copy()
    norms = _one_norm(flat)
    with np.errstate(divide="ignore"):
        s = np.where(norms > 0.5, np.ceil(np.log2(np.maximum(norms, 1e-300) / 0.5)), 0)
    s = s.astype(int)
    X = flat / np.ldexp(1.0, s)[:, None, None]
    eye = np.broadcast_to(np.eye(m, dtype=complex), X.shape)
    S = eye + X
    term = X
    for k in range(2, 60):
        term = term @ X / k
        S = S + term
        if np.all(_one_norm(term) <= 1e-18 * np.maximum(_one_norm(S), 1e-300)):
            break
    for i in range(int(s.max(initial=0))):
        mask = s > i
        S[mask] = S[mask] @ S[mask]
    return S.reshape(shape)


def _abscissa_for(M: np.ndarray, t: float) -> float:
    """Shift ``w`` such that ``t * (M - w)`` has spectral abscissa 0."""
    vals = np.linalg.eigvals(M)
    return float(vals.real.max() if t >= 0 else vals.real.min())


def exp_scaled(M, t: float, shift: float | None = None) -> tuple[np.ndarray, float]:
    """Return ``(E, log_offset)`` with ``exp(tM) = E * exp(log_offset)``.

    ``E = exp(t (M - shift I))``; the default shift is the spectral
    abscissa, so ``E`` neither overflows nor underflows spectrally.
    """
    M = _as_square(M)
    t = float(t)
    if shift is None:
        shift = _abscissa_for(M, t)
    m = M.shape[0]
    E = expm_batch(t * (M - shift * np.eye(m)))
    return E, t * shift


def exp_reference(M, t: float) -> np.ndarray:
    """The series oracle ``exp(tM)``.

    Raises
    ------
    ExpOverflowError
        When ``exp(tM)`` is predicted to exceed the floating range.  The
        exception's ``scaled`` attribute holds ``(exp(t(M - w)), w t)``.
    """
    M = _as_square(M)
    t = float(t)
    if abs(t) * float(_one_norm(M)) > _LOG_OVERFLOW:
        w = _abscissa_for(M, t)
        log_pred = gelfand_shilov_log_bound(M, abs(t), abscissa=w if t >= 0 else -w)
        if log_pred > _LOG_OVERFLOW:
            E, off = exp_scaled(M, t, shift=w)
            raise ExpOverflowError(
                f"exp(tM) predicted to reach exp({log_pred:.1f}); returning scaled form",
                (E, off),
            )
    return expm_batch(t * M)


def gelfand_shilov_log_bound(M, t: float, abscissa: float | None = None) -> float:
    """Natural log of :func:`gelfand_shilov_bound` (finite even when the bound overflows)."""
    M = _as_square(M)
    if t < 0:
        raise InputError("t must be non-negative")
    w = float(np.linalg.eigvals(M).real.max()) if abscissa is None else abscissa
    norm = float(np.linalg.norm(M, 2))
    m = M.shape[0]
    # log of 1 + sum_{k=1}^{m-1} (2 t |M|)^k / k!, summed in log space
    logs = [0.0]
    x = 2.0 * t * norm
    if x > 0:
        logs += [k * log(x) - lgamma(k + 1) for k in range(1, m)]
    top = max(logs)
    return w * t + top + log(sum(np.exp(np.array(logs) - top)))


def gelfand_shilov_bound(M, t: float) -> float:
    """``exp(wt) (1 + sum_{k=1}^{m-1} (2t)^k/k! |M|^k)`` with ``w`` the spectral abscissa.

    ``|M|`` is the operator 2-norm.  The value bounds ``|exp(tM)|_2`` for
    every ``t >= 0``.  Returns ``inf`` on overflow.
    """
    lb = gelfand_shilov_log_bound(M, t)
    return float(np.exp(lb)) if lb < 709.0 else float("inf")


# ------------------------------------------------------ divided differences


def _exp_taylor(t: float) -> Callable[[complex, int], np.ndarray]:
    """Taylor coefficients ``f^(j)(z)/j!``, ``j = 0..k``, of ``f(z) = exp(tz)``."""

    def taylor(z: complex, k: int) -> np.ndarray:
        coef = np.empty(k + 1, dtype=complex)
        coef[0] = np.exp(t * z)
        for j in range(1, k + 1):
            coef[j] = coef[j - 1] * t / j
        return coef

    return taylor


def divided_differences(
    taylor: Callable[[complex, int], np.ndarray],
    seq: Sequence[complex],
    series_radius: float,
    series_terms: int = 40,
) -> np.ndarray:
    """Newton coefficients ``c_k = f[x_0, ..., x_k]`` for the node sequence ``seq``.

    ``taylor(z, k)`` returns ``f^(j)(z)/j!`` for ``j = 0..k``.  A set of
    identical nodes takes the derivative value directly.  A set of nodes
    within ``series_radius`` of its mean is expanded as
    ``sum_r a_{k+r}(c) h_r(x - c)`` with ``h_r`` the complete homogeneous
    symmetric polynomials, which avoids the cancellation of the difference
    quotient for nearly confluent nodes.  Otherwise the quotient is formed
    from the two most distant nodes of the set.
    """
    x = np.asarray(seq, dtype=complex)
    memo: dict[tuple[int, ...], complex] = {}

    def dd(idx: tuple[int, ...]) -> complex:
        if idx in memo:
            return memo[idx]
        pts = x[list(idx)]
        k = len(idx) - 1
        if k == 0:
            val = complex(taylor(pts[0], 0)[0])
        elif np.all(pts == pts[0]):
            val = complex(taylor(pts[0], k)[k])
        else:
            c = pts.mean()
            y = pts - c
            if np.max(np.abs(y)) <= series_radius:
                R = series_terms
                H = np.zeros(R + 1, dtype=complex)
                H[0] = 1.0
                for yi in y:
                    for r in range(1, R + 1):
                        H[r] = H[r] + yi * H[r - 1]
                a = taylor(c, k + R)
                val = complex(np.dot(a[k:], H))
            else:
                dist = np.abs(pts[:, None] - pts[None, :])
                p, q = np.unravel_index(int(np.argmax(dist)), dist.shape)
                rest_p = idx[:p] + idx[p + 1:]
                rest_q = idx[:q] + idx[q + 1:]
                val = (dd(rest_p) - dd(rest_q)) / (x[idx[q]] - x[idx[p]])
        memo[idx] = val
        return val

    return np.array([dd(tuple(range(k + 1))) for k in range(x.size)], dtype=complex)


# ------------------------------------------------------ interpolation poly


@dataclass
class InterpPoly:
    """Interpolation polynomial of ``z -> exp(tz)`` at ``nodes``.

    ``sequence`` is the Leja-ordered node sequence the Newton basis
    ``prod_{j<k} (z - x_j)`` is built on.
    """

    nodes: NodeSet
    sequence: np.ndarray
    newton_coeffs: np.ndarray
    t: float
    power_coeffs: np.ndarray | None = None

    @property
    def degree_bound(self) -> int:
        return len(self.newton_coeffs) - 1

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        c, x = self.newton_coeffs, self.sequence
        val = np.full(z.shape, c[-1], dtype=complex)
        for k in range(len(c) - 2, -1, -1):
            val = c[k] + (z - x[k]) * val
        return val

    def to_power(self) -> np.ndarray:
        """Expand the Newton form into ascending power coefficients ``a_0..a_{m-1}``."""
        c, x = self.newton_coeffs, self.sequence
        poly = np.array([c[-1]], dtype=complex)
        for k in range(len(c) - 2, -1, -1):
            shifted = np.concatenate([[0], poly]) - x[k] * np.concatenate([poly, [0]])
            shifted[0] += c[k]
            poly = shifted
        return poly


def newton_interp_exp(nodes: NodeSet, t: float) -> InterpPoly:
    """Newton form of the polynomial of degree ``< total`` interpolating ``exp(tz)``.

    At a node of multiplicity ``k`` the polynomial matches ``exp(tz)`` and
    its first ``k - 1`` derivatives ``t^j exp(t lambda)``.
    """
    if not nodes.nodes:
        raise InputError("node set is empty")
    tol = cluster_tolerance(nodes.nodes)
    pts = np.array(nodes.nodes)
    if len(pts) > 1:
        gaps = np.abs(pts[:, None] - pts[None, :]) + np.diag(np.full(len(pts), np.inf))
        if gaps.min() <= tol:
            raise IllConditionedError(
                f"distinct nodes are {gaps.min():.3e} apart (tolerance {tol:.3e}); "
                "re-cluster them with NodeSet.from_values"
            )
    order = leja_order(pts)
    seq = np.concatenate([np.full(nodes.multiplicities[i], pts[i]) for i in order])
    radius = 0.5 / abs(t) if t != 0 else np.inf
    coeffs = divided_differences(_exp_taylor(float(t)), seq, radius)
    return InterpPoly(nodes=nodes, sequence=seq, newton_coeffs=coeffs, t=float(t))


def cayley_hamilton_residual(seq: Sequence[complex], M) -> float:
    """Relative size of ``prod (M - x_j I)``; near zero iff ``seq`` is the spectrum of ``M``."""
    M = _as_square(M)
    m = M.shape[0]
    Q = np.eye(m, dtype=complex)
    scale = 1.0
    normM = np.linalg.norm(M, 2)
    for x in seq:
        Q = Q @ (M - x * np.eye(m))
        scale *= normM + abs(x)
    return float(np.linalg.norm(Q, 2) / scale) if scale > 0 else float(np.linalg.norm(Q, 2))


def eval_poly_at_matrix(p: InterpPoly, M, check: bool = True) -> np.ndarray:
    """Evaluate ``p(M)`` by nested products ``c_0 + (M - x_0)(c_1 + (M - x_1)(...))``.

    With ``check`` the node sequence must annihilate ``M`` (Cayley-Hamilton
    residual below ``1e-7``), i.e. the nodes are the eigenvalues of ``M``
    with their algebraic multiplicities.
    """
    M = _as_square(M)
    m = M.shape[0]
    x, c = p.sequence, p.newton_coeffs
    if len(x) != m:
        raise ContractViolationError(f"polynomial has {len(x)} nodes, matrix is {m}x{m}")
    if check:
        res = cayley_hamilton_residual(x, M)
        if res > 1e-7:
            raise ContractViolationError(
                f"nodes do not match the spectrum of M (Cayley-Hamilton residual {res:.2e})"
            )
    eye = np.eye(m, dtype=complex)
    acc = c[-1] * eye
    for k in range(len(c) - 2, -1, -1):
        acc = c[k] * eye + (M - x[k] * eye) @ acc
    return acc


def eval_power_at_matrix(coeffs: Sequence[complex], M) -> np.ndarray:
    """``sum_k coeffs[k] M^k`` by Horner's rule."""
    M = _as_square(M)
    eye = np.eye(M.shape[0], dtype=complex)
    acc = coeffs[-1] * eye
    for a in coeffs[-2::-1]:
        acc = a * eye + M @ acc
    return acc


# ------------------------------------------------------------ contours


@dataclass(frozen=True)
class ContourSpec:
    """Positively oriented circle ``|z - center| = radius`` with a trapezoid node count."""

    center: complex
    radius: float
    node_count: int = 256

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError("contour radius must be positive")
        if self.node_count < 64 or self.node_count % 2:
            raise InputError("node_count must be an even integer >= 64")

    def quadrature(self, N: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Points ``z_j`` and weights ``w_j`` with ``sum w_j g(z_j) ~ (1/2 pi i) oint g dz``."""
        N = self.node_count if N is None else N
        theta = 2.0 * np.pi * np.arange(N) / N
        z = self.center + self.radius * np.exp(1j * theta)
        return z, (z - self.center) / N

    def contains(self, z) -> np.ndarray:
        return np.abs(np.asarray(z) - self.center) < self.radius


def _circle_for(members: np.ndarray, delta: float) -> tuple[complex, float]:
    c = complex(members.mean())
    return c, float(np.max(np.abs(members - c))) + delta


def default_contour(nodes: NodeSet, t: float, avoid: complex | None = None) -> tuple[ContourSpec, ...]:
    """Contour enclosing every node once.

    A single circle about the node mean with radius ``1.5 R + 1`` is used
    when ``exp(tz)`` varies by less than ``e^8`` over it and no point to
    avoid lies inside.  Otherwise each group of nearby nodes gets its own
    circle of clearance ``delta = min(0.5, 1/|t|)``; groups whose circles
    come within ``delta`` of each other are merged.  ``avoid`` (a pole of
    the integrand) is kept outside every circle.
    """
    pts = np.array(nodes.nodes, dtype=complex)
    c = complex(pts.mean())
    R = float(np.max(np.abs(pts - c)))
    rho = 1.5 * R + 1.0
    big_ok = abs(t) * rho <= 4.0
    if avoid is not None and big_ok:
        big_ok = abs(avoid - c) > 1.25 * rho
    if big_ok:
        return (ContourSpec(c, rho),)

    delta = 0.5 if t == 0 else min(0.5, 1.0 / abs(t))
    if avoid is not None:
        gap = float(np.min(np.abs(pts - avoid)))
        delta = min(delta, 0.25 * gap)
        if avoid.real > pts.real.max():
            delta = min(delta, 0.5 * (avoid.real - pts.real.max()))
    groups = [[i] for i in range(len(pts))]
    merged = True
    while merged:
        merged = False
        circles = [_circle_for(pts[g], delta) for g in groups]
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                (ca, ra), (cb, rb) = circles[a], circles[b]
                if abs(ca - cb) < ra + rb + delta:
                    groups[a] = groups[a] + groups[b]
                    del groups[b]
                    merged = True
                    break
            if merged:
                break
    circles = [_circle_for(pts[g], delta) for g in groups]
    if avoid is not None:
        for cc, rr in circles:
            if abs(avoid - cc) <= rr or (avoid.real > pts.real.max() and cc.real + rr >= avoid.real):
                raise ClearanceError(
                    f"cannot separate the spectrum from z0={avoid}; move z0 further right"
                )
    return tuple(ContourSpec(cc, rr) for cc, rr in circles)


def _check_contour(contours, seq: np.ndarray, avoid: complex | None):
    inside = np.zeros(len(seq), dtype=int)
    for C in contours:
        inside += C.contains(seq)
        if avoid is not None and C.contains(avoid):
            raise ClearanceError(f"contour centred at {C.center} encloses the pole {avoid}")
    if np.any(inside != 1):
        raise InputError("contour must wind exactly once around every node")
    for C in contours:
        gap = np.abs(np.abs(seq - C.center) - C.radius)
        if gap.min() < 1e-6 * C.radius:
            raise ClearanceError("a node lies on the contour")


def elementary_symmetric(x: np.ndarray) -> np.ndarray:
    """``tau_mu(x_1..x_m)`` for ``mu = 0..m`` along the last axis of ``x``.

    Uses the product recurrence ``prod (1 + x_j s)`` coefficient by coefficient.
    """
    x = np.asarray(x)
    m = x.shape[-1]
    E = np.zeros(x.shape[:-1] + (m + 1,), dtype=complex)
    E[..., 0] = 1.0
    for j in range(m):
        xj = x[..., j]
        for mu in range(j + 1, 0, -1):
            E[..., mu] = E[..., mu] + xj * E[..., mu - 1]
    return E


def _power_coeffs(
    seq: np.ndarray,
    f: Callable[[np.ndarray], np.ndarray],
    contours: Sequence[ContourSpec],
    rtol: float = 1e-10,
    max_doublings: int = 8,
) -> tuple[np.ndarray, int]:
    m = len(seq)

    def integrate(scale: int) -> np.ndarray:
        # I[mu, l] = (1/2 pi i) oint f(z) (-z)^l tau_mu(1/(z - x)) dz
        I = np.zeros((m + 1, m), dtype=complex)
        for C in contours:
            z, w = C.quadrature(C.node_count * scale)
            tau = elementary_symmetric(1.0 / (z[:, None] - seq[None, :]))
            fz = f(z) * w
            negz = np.ones_like(z)
            for l in range(m):
                I[:, l] += (fz * negz) @ tau
                negz = negz * (-z)
        a = np.zeros(m, dtype=complex)
        for k in range(m):
            for l in range(m - k):
                a[k] += comb(k + l, k) * I[k + l + 1, l]
        return a

    scale = 1
    prev = integrate(scale)
    for _ in range(max_doublings):
        scale *= 2
        cur = integrate(scale)
        ref = max(np.linalg.norm(cur), 1e-300)
        if np.linalg.norm(cur - prev) <= rtol * ref:
            return cur, contours[0].node_count * scale
        prev = cur
    raise ContourResolutionError(
        f"contour quadrature did not stabilise to {rtol:g} after {max_doublings} doublings"
    )


def power_coeffs_contour(nodes: NodeSet, t: float, contour=None) -> np.ndarray:
    """Power-form coefficients ``a_0..a_{m-1}`` of the interpolant of ``exp(tz)``.

    ``a_k = sum_{l=0}^{m-k-1} C(k+l, k) I_{k+l+1}^l`` where
    ``I_mu^l = (1/2 pi i) oint exp(tz) (-z)^l tau_mu(1/(z - lambda_1), ...) dz``.
    ``contour`` is a :class:`ContourSpec`, a sequence of them, or ``None``
    for :func:`default_contour`.
    """
    seq = nodes.sequence()
    if contour is None:
        contour = default_contour(nodes, t)
    elif isinstance(contour, ContourSpec):
        contour = (contour,)
    _check_contour(contour, seq, None)
    t = float(t)
    a, _ = _power_coeffs(seq, lambda z: np.exp(t * z), contour)
    return a


# --------------------------------------------------------- decomposition


@dataclass
class PropagatorDecomposition:
    """``exp(t P~) = exp(log_offset) * sum_k coeffs[k] P~^k``, ``k = 0..2m``.

    ``a_coeffs`` are the scaled power coefficients of the interpolant of
    ``z -> (z - z0)^(-m-1) exp(t z)``; ``coeffs`` come from multiplying
    that polynomial by ``(z - z0)^(m+1)``.
    """

    t: float
    xi: np.ndarray
    z0: complex
    a_coeffs: np.ndarray
    coeffs: np.ndarray
    log_offset: float
    residual: float
    symbol: np.ndarray = field(repr=False)

    def log_abs_coeffs(self) -> np.ndarray:
        """``log |p_k(t, xi)|`` including the offset."""
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.coeffs)) + self.log_offset

    def scaled_matrix(self) -> np.ndarray:
        return eval_power_at_matrix(self.coeffs, self.symbol)


def propagator_decomposition(
    op: OperatorSpec,
    t: float,
    xi,
    z0: complex | None = None,
    check: bool = True,
    rtol: float = 1e-8,
) -> PropagatorDecomposition:
    """Scalar coefficients ``p_0..p_2m`` with ``exp(t P~(xi)) = sum p_k P~(xi)^k``.

    ``z0`` must lie strictly to the right of the spectrum; the default is
    ``abscissa + 1 + spread``.  The factor ``exp(t s)``, ``s`` the spectral
    abscissa, is carried in ``log_offset``.  With ``check`` a reassembly
    residual above ``rtol`` raises :class:`ContractViolationError`.
    """
    if t < 0:
        raise InputError("t must be non-negative")
    P = eval_symbol(op, xi)
    m = op.m
    nodes = eigenvalues(P)
    absc = nodes.abscissa
    if z0 is None:
        z0 = absc + 1.0 + nodes.spread
    z0 = complex(z0)
    clearance = 1e-3 * (1.0 + nodes.spread)
    if z0.real <= absc + clearance:
        raise ClearanceError(
            f"Re z0 = {z0.real:g} must exceed the spectral abscissa {absc:g} by {clearance:g}"
        )
    s = absc
    contours = default_contour(nodes, t, avoid=z0)
    seq = nodes.sequence()
    _check_contour(contours, seq, z0)

    def f(z):
        with np.errstate(under="ignore"):
            return (z - z0) ** (-(m + 1)) * np.exp(t * (z - s))

    a, _ = _power_coeffs(seq, f, contours)
    # (z - z0)^(m+1) in ascending powers
    shift_poly = np.array([comb(m + 1, j) * (-z0) ** (m + 1 - j) for j in range(m + 2)])
    coeffs = np.convolve(shift_poly, a)
    E, _ = exp_scaled(P, t, shift=s)
    approx = eval_power_at_matrix(coeffs, P)
    denom = max(np.linalg.norm(E), 1e-300)
    residual = float(np.linalg.norm(approx - E) / denom)
    if check and residual > rtol:
        raise ContractViolationError(
            f"decomposition residual {residual:.2e} exceeds {rtol:g} at t={t}, xi={xi}"
        )
    return PropagatorDecomposition(
        t=float(t), xi=np.atleast_1d(np.asarray(xi, dtype=float)), z0=z0,
        a_coeffs=a, coeffs=coeffs, log_offset=t * s, residual=residual, symbol=P,
    )
