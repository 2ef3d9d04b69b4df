import numpy as np
import pytest
from hypothesis import given, strategies as st

from petrosem.errors import InputError
from petrosem.operators import BUNDLED, CORRECT, bundled, constant, heat, transport, wave
from petrosem.semigroup import (GridState, PlaneWave, build_propagator, check_loss_of_derivatives,
                                estimate_omega_E, evolve, evolve_to, fit_growth_exponent,
                                generator_apply, make_grid, plane_wave_exact, random_band_limited,
                                sobolev_norm)

TWO_PI = 2 * np.pi


@pytest.fixture(scope="module")
def g64():
    return make_grid(1, 64, TWO_PI)


def _x(grid):
    return grid.points()[..., 0]


def _l2(state):
    return np.sqrt(np.sum(np.abs(state.values) ** 2) * state.grid.cell_volume) * np.exp(state.log_scale)


def test_make_grid_examples():
    g = make_grid(1, 8, TWO_PI)
    assert sorted(np.round(g.frequencies_1d()).tolist()) == list(range(-4, 4))
    assert np.prod(make_grid(2, 16, TWO_PI).shape) == 256
    f = np.sort(make_grid(1, 8, 4 * np.pi).frequencies_1d())
    assert np.diff(f) == pytest.approx([0.5] * 7)


@pytest.mark.parametrize("N", [4, 12, 2048])
def test_make_grid_rejects_sizes(N):
    with pytest.raises(InputError):
        make_grid(1, N, TWO_PI)


def test_make_grid_rejects_length():
    with pytest.raises(InputError):
        make_grid(1, 16, 0.0)


def test_build_propagator_examples():
    g = make_grid(1, 8, TWO_PI)
    tab = build_propagator(heat(), g, 0.5)
    k = g.mode_index((2,))
    assert tab.matrices[k][0, 0] * np.exp(tab.log_offset) == pytest.approx(np.exp(-2.0))
    tab = build_propagator(wave(), g, 0.0)
    np.testing.assert_allclose(tab.matrices, np.broadcast_to(np.eye(2), tab.matrices.shape), atol=1e-15)
    tab = build_propagator(wave(), g, np.pi)
    M = tab.matrices[g.mode_index((1,))] * np.exp(tab.log_offset)
    np.testing.assert_allclose(M, -np.eye(2), atol=1e-14)


def test_evolve_examples(g64):
    x = _x(g64)
    u = GridState(g64, np.exp(3j * x)[None])
    v = evolve_to(heat(), u, 0.1)
    assert np.abs(v.values - np.exp(-0.9) * u.values).max() <= 1e-12
    same = evolve(u, build_propagator(heat(), g64, 0.3), 0)
    assert np.array_equal(same.values, u.values)
    prof = lambda y: np.sin(y) + 0.3 * np.cos(5 * y) - 0.2 * np.sin(11 * y)
    v = evolve_to(transport(1.0), GridState(g64, prof(x)[None]), 1.0)
    assert np.abs(v.values[0] - prof(x + 1.0)).max() <= 1e-10


def test_evolve_grid_mismatch(g64):
    u = GridState(g64, np.ones((1, 64)))
    with pytest.raises(InputError):
        evolve(u, build_propagator(heat(), make_grid(1, 32, TWO_PI), 0.1))


def test_generator_examples(g64):
    x = _x(g64)
    out = generator_apply(heat(), GridState(g64, np.exp(2j * x)[None]))
    np.testing.assert_allclose(out.values, -4 * np.exp(2j * x)[None], atol=1e-11)
    A = np.array([[1.0, 2.0], [0.5, -1.0]])
    u = np.array([[3.0], [-1.0]]) * np.ones(64)
    np.testing.assert_allclose(generator_apply(constant(A), GridState(g64, u)).values, A @ u, atol=1e-12)
    w = np.zeros((2, 64), complex)
    w[0] = np.exp(1j * x)
    out = generator_apply(wave(), GridState(g64, w)).values
    np.testing.assert_allclose(out[0], 0, atol=1e-12)
    np.testing.assert_allclose(out[1], -np.exp(1j * x), atol=1e-12)


def test_plane_wave_examples(g64):
    assert plane_wave_exact(heat(), PlaneWave((1,), np.array([1.0])), 1.0, g64) <= 1e-12
    assert plane_wave_exact(wave(), PlaneWave((3,), np.array([1.0, 2.0])), 0.0, g64) <= 1e-13
    # wave, xi = 2, z = [1, 0]: closed form [cos 2t, -2 sin 2t] e^{2ix}
    t = 0.25
    u = evolve_to(wave(), PlaneWave((2,), np.array([1.0, 0.0])).state(g64), t)
    exact = np.array([np.cos(2 * t), -2 * np.sin(2 * t)])[:, None] * np.exp(2j * _x(g64))[None]
    assert np.abs(u.values - exact).max() <= 1e-12


def test_sobolev_examples(g64):
    x = _x(g64)
    u = GridState(g64, np.exp(1j * x)[None])
    assert sobolev_norm(u, "hinf", 1) == pytest.approx(np.sqrt(TWO_PI) * np.sqrt(2), rel=1e-12)
    z = GridState(g64, np.zeros((2, 64)))
    for space in ("cb", "hinf", "ppow"):
        assert sobolev_norm(z, space, 2, wave()) == 0
    u = GridState(g64, np.exp(2j * x)[None])
    assert sobolev_norm(u, "ppow", 1, heat()) == pytest.approx(np.sqrt(TWO_PI) * 5, rel=1e-12)
    # Cb of e^{2ix} with j=1: max(|u|, |u'|) = 2
    assert sobolev_norm(u, "cb", 1) == pytest.approx(2.0, rel=1e-12)


def test_sobolev_aliasing_guard(g64):
    u = GridState(g64, np.ones((1, 64)))
    with pytest.raises(InputError):
        sobolev_norm(u, "hinf", 33)
    with pytest.raises(InputError):
        sobolev_norm(u, "ppow", 1)


# ---------------------------------------------------------- semigroup laws


@pytest.mark.parametrize("name", list(BUNDLED))
def test_semigroup_law(name, g64):
    op = bundled(name)
    band = 16
    rng = np.random.default_rng(7)
    u = random_band_limited(g64, op.m, rng, band=band)
    for t1 in (0.1, 0.3, 1.0):
        for t2 in (0.1, 0.3, 1.0):
            if name not in CORRECT and t1 + t2 > 0.5:
                continue
            one = evolve_to(op, u, t1 + t2, band=band)
            two = evolve_to(op, evolve_to(op, u, t2, band=band), t1, band=band)
            assert _l2(GridState(g64, one.values * np.exp(one.log_scale) - two.values * np.exp(two.log_scale))) \
                <= 1e-10 * max(_l2(one), _l2(u))


@pytest.mark.parametrize("name", list(BUNDLED))
def test_identity(name, g64):
    op = bundled(name)
    u = random_band_limited(g64, op.m, np.random.default_rng(1))
    v = evolve(u, build_propagator(op, g64, 0.0))
    assert np.abs(v.values - u.values).max() <= 1e-12 * np.abs(u.values).max()


@pytest.mark.parametrize("name", CORRECT)
def test_generator_order(name, g64):
    op = bundled(name)
    u = random_band_limited(g64, op.m, np.random.default_rng(3), band=6)
    Pu = generator_apply(op, u).values
    hs = 1e-2 / 2 ** np.arange(5)
    errs = []
    for h in hs:
        Sh = evolve_to(op, u, h)
        errs.append(_l2(GridState(g64, (Sh.values - u.values) / h - Pu)))
    errs = np.array(errs)
    if errs.max() < 1e-9:  # constant or first-order exact cases
        return
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 0.95


@pytest.mark.parametrize("name", CORRECT)
def test_split_path_uniqueness(name, g64):
    op = bundled(name)
    u = random_band_limited(g64, op.m, np.random.default_rng(5))
    a = evolve(u, build_propagator(op, g64, 0.1), 10)
    b = evolve(u, build_propagator(op, g64, 0.25), 4)
    assert _l2(GridState(g64, a.values - b.values)) <= 1e-10 * max(_l2(a), _l2(u))


@pytest.mark.parametrize("name", list(BUNDLED))
def test_group_property(name, g64):
    op = bundled(name)
    band = 8
    u = random_band_limited(g64, op.m, np.random.default_rng(9), band=band)
    v = evolve_to(op, evolve_to(op, u, 0.05, band=band), -0.05, band=band)
    v = v.values * np.exp(v.log_scale)
    assert np.abs(v - u.values).max() <= 1e-9 * np.abs(u.values).max()


def test_backward_heat_grows_under_refinement():
    op = bundled("backward_heat")
    amp = []
    for N in (16, 32, 64):
        g = make_grid(1, N, TWO_PI)
        u = PlaneWave((N // 4,), np.array([1.0])).state(g)
        v = evolve_to(op, u, 0.1)
        amp.append(np.log(np.abs(v.values).max()) + v.log_scale)
    assert amp[0] < amp[1] < amp[2]


# ------------------------------------------------------------- growth rate


def test_fit_growth_exponent_recovers_slope():
    t = np.linspace(5, 10, 21)
    assert fit_growth_exponent(t, 0.7 * t + 2) == pytest.approx(0.7)
    assert fit_growth_exponent(t, 0.0 * t + np.log(t), max_poly=1) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("name,target", [("heat", 0.0), ("reaction_diffusion", 1.0),
                                         ("diagonal_constant", 0.5)])
def test_omega_E_examples(name, target):
    g = make_grid(1, 128, TWO_PI)
    assert abs(estimate_omega_E(bundled(name), g, T=10) - target) <= 0.02


def test_omega_E_incorrect_is_unbounded(g64):
    assert estimate_omega_E(bundled("backward_heat"), g64) == np.inf


def test_omega_E_short_horizon(g64):
    with pytest.raises(InputError):
        estimate_omega_E(heat(), g64, samples=3)


@pytest.mark.parametrize("name", CORRECT)
def test_loss_of_derivatives_within_bounds(name, g64):
    op = bundled(name)
    h = check_loss_of_derivatives(op, g64, "hinf", 0)
    p = check_loss_of_derivatives(op, g64, "ppow", 0)
    assert not h.saturated and h.shift <= (op.m - 1) * op.d
    assert not p.saturated and p.shift <= 2 * op.m


def test_loss_examples(g64):
    assert check_loss_of_derivatives(heat(), g64, "hinf", 0).shift == 0
    assert check_loss_of_derivatives(wave(), g64, "hinf", 0).shift <= 2
    assert check_loss_of_derivatives(bundled("backward_heat"), g64, "hinf", 0).saturated


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(CORRECT))
def test_plane_wave_property(seed, name):
    g = make_grid(1, 32, TWO_PI)
    r = np.random.default_rng(seed)
    op = bundled(name)
    k = int(r.integers(-16, 16))
    z = r.standard_normal(op.m) + 1j * r.standard_normal(op.m)
    assert plane_wave_exact(op, PlaneWave((k,), z), float(r.uniform(0, 2)), g) <= 1e-10
