"""Evolution ``S_t = F exp(t P~) F^-1`` on periodic grids.

Grid functions are transformed with the kernel ``exp(+i <x, xi>)``: the
mode coefficients are ``fft(u) / N^n`` and ``u(x) = sum_k u_k exp(i xi_k x)``.
Both normalisation constants cancel in ``F exp(t P~) F^-1``, so evolution
is exactly per-mode multiplication.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, NumericalError
from .matfun import expm_batch
from .symbol import OperatorSpec, eval_symbol, multi_indices

log = logging.getLogger(__name__)

SPACES = ("cb", "hinf", "ppow")


@dataclass(frozen=True)
class Grid:
    """Periodic grid with ``N`` points per axis on ``[0, L)^n``."""

    n: int
    N: int
    L: float

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.n

    @property
    def mode_volume(self) -> float:
        """Volume of one frequency cell, ``(2 pi / L)^n``."""
        return (2 * np.pi / self.L) ** self.n

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.n, 0))

    def wavenumbers(self) -> np.ndarray:
        """Integer mode indices ``k`` in FFT order, ``k in [-N/2, N/2)``."""
        return np.round(np.fft.fftfreq(self.N, d=1.0 / self.N)).astype(int)

    def frequencies_1d(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.N, d=self.dx)

    def xi(self) -> np.ndarray:
        """Frequencies as an array of shape ``(N, ..., N, n)``."""
        f = self.frequencies_1d()
        mesh = np.meshgrid(*([f] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    def points(self) -> np.ndarray:
        x = np.arange(self.N) * self.dx
        return np.stack(np.meshgrid(*([x] * self.n), indexing="ij"), axis=-1)

    def band_mask(self, band: int) -> np.ndarray:
        """True for modes with ``|k_i| <= band`` on every axis."""
        k = np.abs(self.wavenumbers())
        mask = np.ones(self.shape, dtype=bool)
        for axis in range(self.n):
            sl = [None] * self.n
            sl[axis] = slice(None)
            mask = mask & (k[tuple(sl)] <= band)
        return mask

    def to_modes(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values, axes=self.axes) / self.N ** self.n

    def from_modes(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coeffs * self.N ** self.n, axes=self.axes)

    def mode_index(self, k) -> tuple:
        """Array index of the integer mode ``k`` (per axis)."""
        k = tuple(int(v) for v in np.atleast_1d(k))
        if len(k) != self.n or any(not -self.N // 2 <= v < self.N // 2 for v in k):
            raise InputError(f"mode {k} outside the grid range [-N/2, N/2)")
        return tuple(v % self.N for v in k)


def make_grid(n: int, N: int, L: float) -> Grid:
    """Validated grid; the transform round trip is checked to 1e-12."""
    if n < 1:
        raise InputError("n must be positive")
    if N < 8 or N > 1024 or N & (N - 1):
        raise InputError("N must be a power of two in [8, 1024]")
    if not (np.isfinite(L) and L > 0):
        raise InputError("L must be positive and finite")
    grid = Grid(n=int(n), N=int(N), L=float(L))
    probe = np.random.default_rng(0).standard_normal(grid.shape)
    if np.abs(grid.from_modes(grid.to_modes(probe)) - probe).max() > 1e-12:
        raise NumericalError("FFT round trip failed the 1e-12 self-test")
    return grid


@dataclass
class GridState:
    """``m`` field components on a grid; ``values`` has shape ``(m, N, ..., N)``.

    The represented field is ``values * exp(log_scale)``; ``log_scale`` only
    becomes non-zero when an evolution would overflow.
    """

    grid: Grid
    values: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape[1:] != self.grid.shape:
            raise InputError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("state values must be finite")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def modes(self) -> np.ndarray:
        return self.grid.to_modes(self.values)

    @classmethod
    def from_modes(cls, grid: Grid, coeffs: np.ndarray, log_scale: float = 0.0) -> "GridState":
        return cls(grid, grid.from_modes(coeffs), log_scale)


@dataclass
class PropagatorTable:
    """Per-mode ``exp(dt P~(xi_k))`` stored as ``matrices * exp(log_offset)``.

    ``log_offset = omega_shift * dt`` where ``omega_shift * dt`` is the
    largest ``Re(dt lambda)`` over the grid (clamped at 0), so every stored
    matrix has spectral radius at most one.
    """

    grid: Grid
    dt: float
    matrices: np.ndarray = field(repr=False)
    omega_shift: float
    band: int | None = None

    @property
    def log_offset(self) -> float:
        return self.omega_shift * self.dt


def build_propagator(op: OperatorSpec, grid: Grid, dt: float, band: int | None = None) -> PropagatorTable:
    """Per-mode exponentials of ``dt P~(xi_k)``.

    Modes with some ``|k_i| > band`` are zeroed when ``band`` is given,
    which keeps round-off out of unresolved modes of ill-posed operators.
    """
    if not np.isfinite(dt):
        raise InputError("dt must be finite")
    if grid.n != op.n:
        raise InputError(f"operator has n={op.n}, grid has n={grid.n}")
    P = eval_symbol(op, grid.xi()).reshape(-1, op.m, op.m)
    try:
        lam = np.linalg.eigvals(dt * P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    if band is not None:
        keep = grid.band_mask(band).reshape(-1)
        lam = lam[keep]
        P = P * keep[:, None, None]  # masked modes must not overflow before zeroing
    shift = max(0.0, float(lam.real.max())) if lam.size else 0.0
    E = expm_batch(dt * P - shift * np.eye(op.m))
    bad = np.flatnonzero(~np.all(np.isfinite(E), axis=(-2, -1)))
    if bad.size:
        k = np.unravel_index(int(bad[0]), grid.shape)
        raise NumericalError(f"non-finite exponential at mode index {k}")
    E = E.reshape(grid.shape + (op.m, op.m))
    if band is not None:
        E = E * grid.band_mask(band)[..., None, None]
    omega = shift / dt if dt != 0 else 0.0
    return PropagatorTable(grid=grid, dt=float(dt), matrices=E, omega_shift=omega, band=band)


def _apply_modes(mats: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    # coeffs (m, N..N) -> (m, N..N)
    return np.einsum("...ij,j...->i...", mats, coeffs)


def evolve(state: GridState, table: PropagatorTable, steps: int = 1) -> GridState:
    """Apply the table ``steps`` times in mode space."""
    if state.grid != table.grid:
        raise InputError("state and table live on different grids")
    if state.m != table.matrices.shape[-1]:
        raise InputError("state component count does not match the operator")
    if steps < 0:
        raise InputError("steps must be non-negative")
    if steps == 0:
        return replace(state, values=state.values.copy())
    c = state.modes()
    for _ in range(steps):
        c = _apply_modes(table.matrices, c)
        if not np.all(np.isfinite(c)):
            raise NumericalError("evolution overflowed in mode space")
    log_scale = state.log_scale + steps * table.log_offset
    if log_scale != 0.0:
        # fold the offset back in while that stays finite
        peak = float(np.abs(c).max()) if c.size else 0.0
        if peak == 0.0 or log_scale + np.log(peak) < 300:
            c = c * np.exp(log_scale)
            log_scale = 0.0
    return GridState.from_modes(state.grid, c, log_scale)


def evolve_to(op: OperatorSpec, state: GridState, t: float, band: int | None = None) -> GridState:
    """Single-step evolution to time ``t``."""
    return evolve(state, build_propagator(op, state.grid, t, band=band), 1)


def generator_apply(op: OperatorSpec, state: GridState) -> GridState:
    """``P(d/dx) u`` computed spectrally."""
    if state.grid.n != op.n or state.m != op.m:
        raise InputError("operator and state dimensions differ")
    P = eval_symbol(op, state.grid.xi())
    return GridState.from_modes(state.grid, _apply_modes(P, state.modes()), state.log_scale)


@dataclass(frozen=True)
class PlaneWave:
    """``chi_xi (x) z`` with ``xi`` given by the integer grid mode ``mode``."""

    mode: tuple
    amplitude: np.ndarray

    def xi(self, grid: Grid) -> np.ndarray:
        return 2 * np.pi / grid.L * np.asarray(self.mode, dtype=float)

    def state(self, grid: Grid) -> GridState:
        grid.mode_index(self.mode)
        phase = np.exp(1j * grid.points() @ self.xi(grid))
        z = np.asarray(self.amplitude, dtype=complex)
        return GridState(grid, z[(slice(None),) + (None,) * grid.n] * phase[None])


def plane_wave_exact(op: OperatorSpec, wave: PlaneWave, t: float, grid: Grid) -> float:
    """Relative sup error of evolving a plane wave against ``chi_xi (x) exp(t P~(xi)) z``."""
    from .matfun import exp_scaled

    # Start from the exact one-mode coefficient vector: sampling the plane
    # wave on the grid and transforming back leaks ~1e-16 into every other
    # mode, which strongly damped targets cannot absorb.
    coeffs = np.zeros((op.m,) + grid.shape, dtype=complex)
    coeffs[(slice(None),) + grid.mode_index(wave.mode)] = wave.amplitude
    table = build_propagator(op, grid, t)
    u = GridState.from_modes(grid, _apply_modes(table.matrices, coeffs), table.log_offset)
    xi = wave.xi(grid)
    E, off = exp_scaled(eval_symbol(op, xi), t)
    z = np.asarray(wave.amplitude, dtype=complex)
    target = E @ z
    denom = np.linalg.norm(target)
    if denom == 0:
        return float(np.abs(u.values).max())
    phase = np.exp(1j * grid.points() @ xi)
    exact = target[(slice(None),) + (None,) * grid.n] * phase[None]
    # compare on the scale of exp_scaled
    got = u.values * np.exp(u.log_scale - off)
    return float(np.abs(got - exact).max() / denom)


# ----------------------------------------------------------------- norms


def _check_order(grid: Grid, j: int):
    if j < 0:
        raise InputError("order j must be non-negative")
    if j > 2 * (grid.N // 4):
        raise InputError(f"order j={j} exceeds the resolved band (N/2 = {grid.N // 2})")


def _weight(grid: Grid, j: int) -> np.ndarray:
    """``sum_{|alpha| <= j} |xi^alpha|^2`` per mode."""
    xi = grid.xi()
    w = np.zeros(grid.shape)
    for alpha in multi_indices(grid.n, j):
        term = np.ones(grid.shape)
        for axis, p in enumerate(alpha):
            term = term * xi[..., axis] ** (2 * p)
        w = w + term
    return w


def _ppow_gram(op: OperatorSpec, grid: Grid, j: int) -> np.ndarray:
    """``sum_{l <= j} (P~^l)^* P~^l`` per mode."""
    P = eval_symbol(op, grid.xi())
    Pl = np.broadcast_to(np.eye(op.m, dtype=complex), P.shape).copy()
    G = np.zeros_like(P)
    for _ in range(j + 1):
        G = G + np.conj(np.swapaxes(Pl, -1, -2)) @ Pl
        Pl = P @ Pl
    return G


def _l2(grid: Grid, coeffs: np.ndarray) -> float:
    # Parseval: sum_x |u|^2 dx^n = L^n sum_k |u_k|^2
    return float(np.sqrt(grid.L ** grid.n * np.sum(np.abs(coeffs) ** 2)))


def sobolev_norm(state: GridState, space: str, j: int, op: OperatorSpec | None = None) -> float:
    """Seminorm ``|u|_j`` in ``Cb``, ``Hinf`` or ``Ppow``.

    * ``cb``:   ``max_{|alpha| <= j} sup_x |d^alpha u(x)|``
    * ``hinf``: ``(sum_{|alpha| <= j} |d^alpha u|_2^2)^(1/2)``
    * ``ppow``: ``sum_{k <= j} |P(d/dx)^k u|_2`` (needs ``op``)

    Derivatives are spectral; ``L^2`` norms use the trapezoid weight
    ``(L/N)^n``.  ``j > N/2`` is rejected to avoid aliasing.
    """
    space = space.lower()
    grid = state.grid
    _check_order(grid, j)
    c = state.modes()
    # normalise first so that squares cannot overflow
    peak = float(np.abs(c).max()) if c.size else 0.0
    if peak == 0.0:
        return 0.0
    c = c / peak
    scale = peak * (np.exp(state.log_scale) if state.log_scale else 1.0)
    if space == "hinf":
        return scale * float(np.sqrt(grid.L ** grid.n * np.sum(_weight(grid, j) * np.sum(np.abs(c) ** 2, axis=0))))
    if space == "cb":
        xi = grid.xi()
        best = 0.0
        for alpha in multi_indices(grid.n, j):
            mult = np.ones(grid.shape, dtype=complex)
            for axis, p in enumerate(alpha):
                mult = mult * (1j * xi[..., axis]) ** p
            vals = grid.from_modes(c * mult[None])
            best = max(best, float(np.sqrt(np.sum(np.abs(vals) ** 2, axis=0)).max()))
        return scale * best
    if space == "ppow":
        if op is None:
            raise InputError("the ppow space needs the operator")
        P = eval_symbol(op, grid.xi())
        total, cur = 0.0, c
        for _ in range(j + 1):
            total += _l2(grid, cur)
            cur = _apply_modes(P, cur)
        return scale * total
    raise InputError(f"unknown space {space!r}; expected one of {SPACES}")


def random_band_limited(grid: Grid, m: int, rng: np.random.Generator, band: int | None = None) -> GridState:
    """Random state whose modes with some ``|k_i| > band`` (default ``N/4``) vanish."""
    band = grid.N // 4 if band is None else band
    c = rng.standard_normal((m,) + grid.shape) + 1j * rng.standard_normal((m,) + grid.shape)
    c = c * grid.band_mask(band)[None]
    return GridState.from_modes(grid, c)


# -------------------------------------------------------- growth exponent


def fit_growth_exponent(t: np.ndarray, y: np.ndarray, max_poly: int = 0) -> float:
    """Slope ``omega`` of ``y ~ c + omega t + p log t`` with ``0 <= p <= max_poly``.

    The ``log t`` term absorbs the polynomial factor that non-diagonalisable
    symbols put in front of ``exp(omega t)``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if max_poly <= 0:
        return float(np.polyfit(t, y, 1)[0])
    X = np.column_stack([np.ones_like(t), t, np.log(t)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    p = float(np.clip(coef[2], 0.0, max_poly))
    return float(np.polyfit(t, y - p * np.log(t), 1)[0])


def _mode_sup(op: OperatorSpec, grid: Grid, t: float, space: str, j: int, s: int,
              band: int | None = None) -> float:
    """``log sup_u |S_t u|_j / |u|_{j+s}`` over band-limited ``u``, computed mode by mode.

    Exact for ``hinf``; for ``ppow`` the seminorms are combined in the
    ``l^2`` sense (equivalent to the sum up to ``sqrt(j+1)``); for ``cb`` it
    is the plane-wave lower bound.
    """
    P = eval_symbol(op, grid.xi())
    lam = np.linalg.eigvals(t * P)
    mask = grid.band_mask(grid.N // 4 if band is None else band)
    shift = max(0.0, float(lam[mask].real.max())) if t else 0.0
    E = expm_batch(t * P - shift * np.eye(op.m))[mask]
    if space == "hinf":
        w = np.sqrt(_weight(grid, j) / _weight(grid, j + s))[mask]
        norms = np.linalg.norm(E, ord=2, axis=(-2, -1)) * w
    elif space == "cb":
        xi = np.abs(grid.xi())
        def cmax(k):
            out = np.zeros(grid.shape)
            for alpha in multi_indices(grid.n, k):
                out = np.maximum(out, np.prod(xi ** np.asarray(alpha), axis=-1))
            return out
        norms = np.linalg.norm(E, ord=2, axis=(-2, -1)) * (cmax(j) / cmax(j + s))[mask]
    elif space == "ppow":
        def half(G, inv=False):
            vals, vecs = np.linalg.eigh(G)
            vals = vals ** (-0.5 if inv else 0.5)
            return (vecs * vals[..., None, :]) @ np.conj(np.swapaxes(vecs, -1, -2))
        A = half(_ppow_gram(op, grid, j)[mask])
        B = half(_ppow_gram(op, grid, j + s)[mask], inv=True)
        norms = np.linalg.norm(A @ E @ B, ord=2, axis=(-2, -1))
    else:
        raise InputError(f"unknown space {space!r}")
    with np.errstate(divide="ignore"):
        return float(np.log(norms.max())) + shift


def _is_correct(op: OperatorSpec) -> tuple[bool, float]:
    from .stability import estimate_stability_index

    rep = estimate_stability_index(op, budget=2000)
    return rep.verdict == "correct", rep.omega0_estimate


def estimate_omega_E(
    op: OperatorSpec,
    grid: Grid,
    space: str = "hinf",
    j: int = 0,
    T: float = 10.0,
    trials: int = 4,
    seed: int = 0,
    samples: int = 41,
    shift: int = 0,
    verdict: str | None = None,
) -> float:
    """Growth exponent of ``S_t`` measured on the grid.

    For each of ``trials`` random band-limited states, and for the
    worst-case mode-by-mode ratio, ``log(|S_t u|_j / |u|_{j+shift})`` is
    fitted against ``t`` on ``[T/2, T]`` (see :func:`fit_growth_exponent`).
    The maximum slope is returned, or ``inf`` when the operator is not
    correct.
    """
    if samples < 5:
        raise InputError("the fit window needs at least 5 samples")
    if verdict is None:
        ok, _ = _is_correct(op)
        verdict = "correct" if ok else "incorrect"
    if verdict != "correct":
        return float("inf")
    space = space.lower()
    times = np.linspace(T / 2, T, samples)
    rng = np.random.default_rng(seed)
    # powers of the symbol carry a polynomial factor of degree at most m - 1
    max_poly = op.m - 1
    best = fit_growth_exponent(times, [_mode_sup(op, grid, t, space, j, shift) for t in times], max_poly)
    tables = [build_propagator(op, grid, t) for t in times]
    for _ in range(trials):
        u = random_band_limited(grid, op.m, rng)
        base = np.log(sobolev_norm(u, space, j + shift, op))
        y = []
        for tab in tables:
            v = evolve(u, tab, 1)
            y.append(np.log(sobolev_norm(replace(v, log_scale=0.0), space, j, op)) + v.log_scale - base)
        best = max(best, fit_growth_exponent(times, y, max_poly))
    return best


@dataclass
class LossReport:
    """Smallest derivative shift ``s`` with a bounded weighted sup under refinement."""

    space: str
    j: int
    shift: int | None
    constant: float
    ratios: dict
    saturated: bool
    bound: int


def check_loss_of_derivatives(
    op: OperatorSpec,
    grid: Grid,
    space: str = "hinf",
    j: int = 0,
    t_grid=None,
    omega0: float | None = None,
    trials: int = 3,
    seed: int = 0,
    eps: float = 0.5,
) -> LossReport:
    """Measure the loss of derivatives of ``S_t`` in ``space``.

    For ``s = 0, 1, ...`` up to ``max(2m, (m-1)d)`` the sup over ``t_grid``
    of ``exp(-(omega0 + eps) t) |S_t u|_j / |u|_{j+s}`` is computed on the
    grid and on the grid with ``2N`` points (same ``L``), both mode by mode
    and for random band-limited states.  The first ``s`` whose sup grows
    by at most 20 percent under the doubling is reported.
    """
    space = space.lower()
    if space not in SPACES:
        raise InputError(f"unknown space {space!r}")
    if grid.N * 2 > 1024:
        raise InputError("grid too fine to double")
    if omega0 is None:
        ok, omega0 = _is_correct(op)
        if not ok:
            return LossReport(space, j, None, float("inf"), {}, True, 0)
    t = np.linspace(0.0, 10.0, 21) if t_grid is None else np.asarray(t_grid, dtype=float)
    fine = make_grid(grid.n, 2 * grid.N, grid.L)
    smax = max(2 * op.m, op.growth_exponent)
    bound = op.growth_exponent if space == "hinf" else 2 * op.m
    rng = np.random.default_rng(seed)
    states = {g: [random_band_limited(g, op.m, rng) for _ in range(trials)] for g in (grid, fine)}
    tables = {g: [build_propagator(op, g, tt) for tt in t] for g in (grid, fine)}

    def log_sup(g, s):
        _check_order(g, j + s)
        best = -np.inf
        for tt, tab in zip(t, tables[g]):
            val = _mode_sup(op, g, tt, space, j, s)
            for u in states[g]:
                v = evolve(u, tab, 1)
                val = max(val, np.log(sobolev_norm(replace(v, log_scale=0.0), space, j, op)) + v.log_scale
                          - np.log(sobolev_norm(u, space, j + s, op)))
            best = max(best, val - (omega0 + eps) * tt)
        return best

    ratios = {}
    for s in range(smax + 1):
        if j + s > 2 * (grid.N // 4):
            break
        a, b = log_sup(grid, s), log_sup(fine, s)
        ratios[s] = float(np.exp(b - a))
        if b - a <= np.log(1.2):
            return LossReport(space, j, s, float(np.exp(max(a, b))), ratios, False, bound)
    return LossReport(space, j, None, float("inf"), ratios, True, bound)
