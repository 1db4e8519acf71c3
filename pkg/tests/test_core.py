import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edlab.core import (
    ModelParams,
    PotentialSpec,
    WaveState,
    build_grid,
    clamped_log,
    fd_gradient,
    gradient,
    init_scenario,
    spectral_derivative,
    unwrap_phase,
    winding_number,
)


@pytest.fixture(scope="module")
def grid1():
    return build_grid(1, 1024, 40.0)


# ---------------------------------------------------------------- params


def test_quantum_params_fix_xi():
    p = ModelParams.quantum(hbar=2.0)
    assert p.xi == 0.5
    assert p.is_quantum


def test_hybrid_params_keep_independent_hbar():
    p = ModelParams.hybrid(hbar=3.0)
    assert p.xi == 0.0 and p.hbar == 3.0
    assert not p.is_quantum


@pytest.mark.parametrize("kw", [
    dict(masses=(0.0,)), dict(hbar=0.0), dict(dt=0.0), dict(epsilon=-0.1), dict(xi=-1.0), dict(eta_tilde=0.0),
])
def test_params_reject_invalid(kw):
    with pytest.raises(ValueError):
        ModelParams(**{"xi": 0.0, **kw})


def test_params_reject_inconsistent_xi():
    with pytest.raises(ValueError, match="hbar"):
        ModelParams(hbar=1.0, xi=0.2)


def test_alpha_prime_and_mass_layout():
    p = ModelParams.quantum(masses=(1.0, 2.0), epsilon=0.5, eta_tilde=2.0)
    assert p.alpha_prime == 4.0
    assert p.with_epsilon(0).alpha_prime == np.inf
    np.testing.assert_array_equal(p.mass_per_coord(4), [1, 1, 2, 2])
    with pytest.raises(ValueError):
        p.mass_per_coord(3)


# ---------------------------------------------------------------- grids


@pytest.mark.parametrize("dims, points, extent, spacing, shape", [
    (1, 1024, 40.0, 0.0390625, (1024,)),
    (2, 256, 20.0, 0.078125, (256, 256)),
])
def test_build_grid(dims, points, extent, spacing, shape):
    g = build_grid(dims, points, extent)
    assert g.shape == shape
    assert g.spacing == (spacing,) * dims
    assert g.axes[0][0] == -extent / 2


@pytest.mark.parametrize("args", [(1, 4, 10.0), (1, 64, 0.0), (1, 64, -1.0), (3, 16, 1.0)])
def test_build_grid_rejects(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_grid_equality_and_wrap():
    g = build_grid(1, 64, 10.0)
    assert g == build_grid(1, 64, 10.0) and hash(g) == hash(build_grid(1, 64, 10.0))
    np.testing.assert_allclose(g.wrap(np.array([[5.0], [-5.5], [12.0]]))[:, 0], [-5.0, 4.5, 2.0])


# ---------------------------------------------------------------- derivatives


def test_derivative_of_band_limited_sine(grid1):
    L = 40.0
    x = grid1.axes[0]
    d = spectral_derivative(np.sin(2 * np.pi * x / L), grid1).real
    assert np.max(np.abs(d - 2 * np.pi / L * np.cos(2 * np.pi * x / L))) < 1e-12


def test_derivative_of_constant_is_zero(grid1):
    assert np.max(np.abs(gradient(np.full(1024, 3.7), grid1))) < 1e-14


def test_derivative_of_gaussian(grid1):
    x = grid1.axes[0]
    f = np.exp(-(x**2) / 4)  # rho^(1/2) for sigma = 1
    d = gradient(f, grid1)[0]
    assert np.max(np.abs(d + x / 2 * f)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-6, 6), min_size=1, max_size=4), st.floats(0.1, 3.0))
def test_derivative_of_harmonic_products(modes, amp):
    g = build_grid(1, 64, 2 * np.pi)
    x = g.axes[0]
    f = amp * np.prod([np.cos(k * x) for k in modes], axis=0)
    # analytic product rule
    df = np.zeros_like(x)
    for i, k in enumerate(modes):
        others = np.prod([np.cos(q * x) for j, q in enumerate(modes) if j != i], axis=0) if len(modes) > 1 else 1.0
        df += -amp * k * np.sin(k * x) * others
    assert np.max(np.abs(gradient(f, g)[0] - df)) < 1e-10 * max(1.0, np.abs(df).max())


def test_fd_gradient_exact_on_cubic():
    g = build_grid(1, 64, 8.0)
    x = g.axes[0]
    d = fd_gradient(0.3 * x**3 - x, g)[0]
    np.testing.assert_allclose(d[2:-2], 0.9 * x[2:-2] ** 2 - 1, atol=1e-10)


# ---------------------------------------------------------------- floors and phase


def test_clamped_log_floor():
    rho = np.array([1.0, 0.0, 1e-320])
    out = clamped_log(rho)
    assert np.all(np.isfinite(out))
    assert out[1] == out[2] == np.log(1e-300)


def test_unwrap_recovers_linear_phase(grid1):
    x = grid1.axes[0]
    psi = np.exp(-(x**2) / 4 + 3j * x)
    phase = unwrap_phase(psi, hbar=1.0)
    np.testing.assert_allclose(phase - phase[512], 3 * (x - x[512]), atol=1e-9)


def test_unwrap_2d():
    g = build_grid(2, 64, 10.0)
    x, y = g.coords
    psi = np.exp(-(x**2 + y**2) / 4 + 1j * (2 * x - 1.5 * y))
    phase = unwrap_phase(psi, 1.0)
    ref = 2 * x - 1.5 * y
    np.testing.assert_allclose(phase - phase[32, 32], ref - ref[32, 32], atol=1e-9)


def test_winding_number_of_plane_wave():
    g = build_grid(1, 64, 2 * np.pi)
    assert winding_number(np.exp(3j * g.axes[0])) == 3


# ---------------------------------------------------------------- states and scenarios


def test_gaussian_scenario(grid1):
    s = init_scenario("gaussian", grid1, ModelParams.quantum(), x0=0.0, sigma0=1.0, k0=0.0)
    assert abs(s.norm() - 1) < 1e-12
    assert np.max(np.abs(s.phase)) < 1e-12


def test_boosted_gaussian_local_momentum(grid1):
    s = init_scenario("gaussian", grid1, ModelParams.quantum(), sigma0=1.0, k0=2.0)
    from edlab.fields import phase_gradient

    p = phase_gradient(s)[0]
    bulk = s.rho > 1e-8 * s.rho.max()
    np.testing.assert_allclose(p[bulk], 2.0, atol=1e-9)


def test_correlated_gaussian_covariance():
    g = build_grid(2, 128, 24.0)
    s = init_scenario("two-particle-correlated-gaussian", g, ModelParams.quantum(masses=(1.0, 1.0)), c=0.5)
    x1, x2 = (np.broadcast_to(c, g.shape) for c in g.coords)
    cov = g.integrate(s.rho * x1 * x2)
    assert abs(cov - 0.5) < 1e-9
    assert abs(s.norm() - 1) < 1e-12


@pytest.mark.parametrize("name, kw", [
    ("gaussian", dict(sigma0=0.5, x0=1.0)),
    ("coherent", dict(x0=1.0, omega=1.0)),
    ("two-gaussian-superposition", dict(a=2.0, sigma0=0.5)),
])
@pytest.mark.parametrize("params", [ModelParams.quantum(), ModelParams.hybrid()])
def test_scenarios_normalized_and_reproducible(grid1, name, kw, params):
    a = init_scenario(name, grid1, params, **kw)
    b = init_scenario(name, grid1, params, **kw)
    assert abs(a.norm() - 1) < 1e-9
    assert a.stores_psi == params.is_quantum
    np.testing.assert_array_equal(a.rho, b.rho)
    np.testing.assert_array_equal(a.phase, b.phase)


def test_under_resolved_gaussian_rejected(grid1):
    with pytest.raises(ValueError, match="under-resolved"):
        init_scenario("gaussian", grid1, ModelParams.quantum(), sigma0=0.1)


def test_unknown_scenario_and_params(grid1):
    with pytest.raises(ValueError):
        init_scenario("nope", grid1, ModelParams.quantum())
    with pytest.raises(TypeError):
        init_scenario("gaussian", grid1, ModelParams.quantum(), width=1.0)
    with pytest.raises(ValueError):
        init_scenario("two-particle-correlated-gaussian", grid1, ModelParams.quantum())


def test_wavestate_validation(grid1):
    with pytest.raises(ValueError):
        WaveState(grid1, hbar=1.0)
    with pytest.raises(ValueError):
        WaveState(grid1, hbar=1.0, rho=-np.ones(1024))
    with pytest.raises(ValueError):
        WaveState(grid1, hbar=1.0, rho=np.ones(10))
    s = WaveState(grid1, hbar=1.0, rho=np.ones(1024) / 40)
    with pytest.raises(ValueError):
        s.rho[0] = 1.0


# ---------------------------------------------------------------- potentials


def test_harmonic_potential_and_derivative(grid1):
    p = ModelParams.quantum(masses=(2.0,))
    V = PotentialSpec("harmonic", omega=3.0)
    x = grid1.axes[0]
    np.testing.assert_allclose(V.evaluate(grid1, p), 0.5 * 2 * 9 * x**2)
    np.testing.assert_allclose(V.derivative(x, p), 18 * x)


def test_barrier_and_slit():
    g1 = build_grid(1, 64, 10.0)
    V = PotentialSpec("barrier", height=2.0, width=1.0).evaluate(g1)
    assert V.max() == 2.0 and V.min() == 0.0
    g2 = build_grid(2, 64, 10.0)
    S = PotentialSpec("double-gaussian-slit", height=5.0, width=0.2, separation=2.0, opening=0.3).evaluate(g2)
    assert S.shape == (64, 64) and np.all(np.isfinite(S))
    with pytest.raises(ValueError):
        PotentialSpec("double-gaussian-slit").evaluate(g1)


def test_potential_validation():
    with pytest.raises(ValueError):
        PotentialSpec("wells")
    with pytest.raises(ValueError):
        PotentialSpec("tabulated")
    g = build_grid(1, 16, 1.0)
    with pytest.raises(ValueError):
        PotentialSpec("tabulated", values=np.full(16, np.inf)).evaluate(g)
