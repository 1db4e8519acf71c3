import numpy as np
import pytest

from edlab.core import ModelParams, PotentialSpec, WaveState, build_grid, init_scenario
from edlab.ensemble import (
    EnsembleState,
    FieldInterpolator,
    ks_critical,
    ks_distance,
    marginal_cdf,
    quadratic_variation,
    read_trajectory_binary,
    run_coupled,
    sample_initial,
    step_walkers,
)
from edlab.fields import velocity_fields
from edlab.observables import ensemble_momentum

FREE = PotentialSpec("free")


@pytest.fixture(scope="module")
def grid1():
    return build_grid(1, 512, 40.0)


def at(x, M, seed=0):
    return EnsembleState(positions=np.full((M, 1), x), time=0.0, seed=seed)


# ---------------------------------------------------------------- initial sampling


def test_ks_critical_value():
    assert ks_critical(100_000) == pytest.approx(0.005154512586074457, rel=1e-15)


def test_sampled_gaussian_moments_and_ks(grid1):
    s = init_scenario("gaussian", grid1, ModelParams.quantum(), sigma0=1.0)
    ens = sample_initial(s.rho, grid1, 100_000, seed=5)
    assert 0.99 <= ens.positions[:, 0].var() <= 1.01
    assert ks_distance(ens.positions[:, 0], s.rho, grid1) < ks_critical(100_000)


def test_sampling_is_reproducible(grid1):
    s = init_scenario("gaussian", grid1, ModelParams.quantum())
    a = sample_initial(s.rho, grid1, 1000, seed=9)
    b = sample_initial(s.rho, grid1, 1000, seed=9)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, sample_initial(s.rho, grid1, 1000, seed=10).positions)


def test_delta_like_density_lands_within_a_cell(grid1):
    rho = np.zeros(512)
    rho[300] = 1.0
    ens = sample_initial(rho, grid1, 5000, seed=1)
    h = grid1.spacing[0]
    assert np.all(np.abs(ens.positions[:, 0] - grid1.axes[0][300]) <= h)


def test_sampling_rejects_empty(grid1):
    with pytest.raises(ValueError):
        sample_initial(np.ones(512), grid1, 0, seed=1)


def test_marginal_cdf_endpoints(grid1):
    s = init_scenario("gaussian", grid1, ModelParams.quantum())
    F = marginal_cdf(s.rho, grid1)
    assert F(np.array([-20.0]))[0] == pytest.approx(0.0, abs=1e-12)
    assert F(np.array([0.0]))[0] == pytest.approx(0.5, abs=1e-9)


def test_two_dimensional_marginals():
    g = build_grid(2, 128, 24.0)
    s = init_scenario("two-particle-correlated-gaussian", g, ModelParams.quantum(masses=(1.0, 1.0)), c=0.5)
    ens = sample_initial(s.rho, g, 50_000, seed=3)
    cov = np.cov(ens.positions.T)
    assert abs(cov[0, 1] - 0.5) < 0.03
    for axis in (0, 1):
        assert ks_distance(ens.positions[:, axis], s.rho, g, axis) < ks_critical(50_000)


# ---------------------------------------------------------------- single steps


def test_bohmian_limit_step_is_deterministic(grid1):
    p = ModelParams.quantum(epsilon=0.0)
    s = init_scenario("gaussian", grid1, p, sigma0=1.0, k0=1.0)
    ens = EnsembleState(positions=np.array([[-1.0], [0.0], [0.7]]), time=0.0, seed=3)
    out = step_walkers(ens, velocity_fields(s, p), p, 1e-3)
    np.testing.assert_allclose(out.positions[:, 0], [-1.0 + 1e-3, 1e-3, 0.7 + 1e-3], atol=1e-12)
    assert out.step == 1 and out.time == 1e-3


def test_single_step_moments(grid1):
    # drift at x = 1 is v + (eps/2) d ln rho = -1/2 for the unit Gaussian at rest
    p = ModelParams.quantum(epsilon=1.0)
    s = init_scenario("gaussian", grid1, p, sigma0=1.0)
    dt = 1e-3
    out = step_walkers(at(1.0, 1_000_000), velocity_fields(s, p), p, dt).positions[:, 0]
    assert abs(out.mean() - (1.0 - 0.5 * dt)) < 1.5e-4
    assert abs(out.var() / dt - 1) < 0.01


def test_noise_variance_scales_with_epsilon(grid1):
    s = init_scenario("gaussian", grid1, ModelParams.quantum(), sigma0=1.0)
    var = []
    for eps in (2.0, 1.0):
        p = ModelParams.quantum(epsilon=eps)
        var.append(step_walkers(at(0.5, 20_000), velocity_fields(s, p), p, 1e-3).positions.var())
    assert var[1] / var[0] == pytest.approx(0.5, rel=1e-9)


def test_schemes_agree_to_first_order(grid1):
    p = ModelParams.quantum(epsilon=1.0)
    s0 = init_scenario("gaussian", grid1, p, sigma0=1.0, k0=0.5)
    from edlab.fields import step

    s1 = step(s0, p, FREE, 1e-3)
    f0, f1 = velocity_fields(s0, p), velocity_fields(s1, p)
    ens = sample_initial(s0.rho, grid1, 1000, seed=2)
    a = step_walkers(ens, f0, p, 1e-3)
    b = step_walkers(ens, f0, p, 1e-3, scheme="heun", end=f1)
    # the schemes differ by dt * db/dx * noise, of order dt^(3/2)
    assert np.max(np.abs(a.positions - b.positions)) < 1e-4


def test_step_validation(grid1):
    p = ModelParams.quantum(epsilon=1.0)
    s = init_scenario("gaussian", grid1, p)
    f = velocity_fields(s, p)
    with pytest.raises(ValueError, match="heun"):
        step_walkers(at(0.0, 4), f, p, 1e-3, scheme="heun")
    with pytest.raises(ValueError, match="unknown scheme"):
        step_walkers(at(0.0, 4), f, p, 1e-3, scheme="milstein")
    with pytest.raises(ValueError, match="substeps"):
        step_walkers(at(0.0, 4), f, p, 1e-3, substeps=0)
    late = EnsembleState(positions=np.zeros((4, 1)), time=0.5, seed=0)
    with pytest.raises(ValueError, match="fields at"):
        step_walkers(late, f, p, 1e-3)


# ---------------------------------------------------------------- Bohmian paths


def test_free_bohmian_paths_scale_with_width():
    g = build_grid(1, 512, 40.0)
    p = ModelParams.quantum(epsilon=0.0, dt=2e-3)
    s = init_scenario("gaussian", g, p, sigma0=1.0)
    x0 = np.array([[-1.5], [0.4], [1.0]])
    run = run_coupled(s, p, FREE, 2.0, 3, 1000, 0, initial=EnsembleState(x0, 0.0, 0))
    final = run.record.positions[-1, :, 0]
    np.testing.assert_allclose(final, x0[:, 0] * np.sqrt(1 + (2.0 / 2) ** 2), rtol=1e-3)


def test_plane_wave_walkers_move_uniformly():
    g = build_grid(1, 64, 2 * np.pi)
    p = ModelParams.quantum(epsilon=0.0, dt=1e-2)
    s = WaveState(g, hbar=1.0, psi=np.exp(2j * g.axes[0]) / np.sqrt(2 * np.pi))
    x0 = np.array([[-1.0], [0.5]])
    run = run_coupled(s, p, FREE, 0.5, 2, 50, 0, initial=EnsembleState(x0, 0.0, 0))
    np.testing.assert_allclose(run.record.positions[-1, :, 0], x0[:, 0] + 1.0, atol=1e-10)


def test_ensemble_momentum_matches_field(grid1):
    p = ModelParams.quantum(epsilon=0.0)
    from edlab.fields import step_quantum

    s = step_quantum(init_scenario("gaussian", grid1, p, sigma0=1.0, k0=1.0), p, FREE, 1e-3, steps=1000)
    ens = sample_initial(s.rho, grid1, 100_000, seed=4)
    walker_mean = FieldInterpolator(velocity_fields(s, p)).velocity(ens.positions).mean()
    assert abs(walker_mean - ensemble_momentum(s)[0]) < 0.01 * abs(ensemble_momentum(s)[0])


def test_run_rejects_incommensurate_horizon(grid1):
    p = ModelParams.quantum(dt=1e-3)
    s = init_scenario("gaussian", grid1, p)
    with pytest.raises(ValueError, match="multiple"):
        run_coupled(s, p, FREE, 0.0105, 10, 1, 0)


# ---------------------------------------------------------------- records


def test_trajectory_round_trip(tmp_path, grid1):
    p = ModelParams.quantum(epsilon=1.0, dt=1e-3)
    s = init_scenario("gaussian", grid1, p)
    run = run_coupled(s, p, FREE, 0.01, 7, 5, 11, track=3)
    rec = run.record
    rec.write_binary(tmp_path / "t.bin")
    times, pos, cadence = read_trajectory_binary(tmp_path / "t.bin")
    np.testing.assert_array_equal(times, rec.times)
    np.testing.assert_array_equal(pos, rec.positions)
    assert cadence == pytest.approx(5e-3)
    rec.write_csv(tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "time,walker,x0" and len(rows) == 1 + 3 * 7
    assert rec.fine_positions.shape == (11, 3, 1)
    (tmp_path / "bad.bin").write_bytes(b"x" * 64)
    with pytest.raises(ValueError):
        read_trajectory_binary(tmp_path / "bad.bin")


def test_quadratic_variation_of_known_path():
    path = np.array([[0.0], [1.0], [3.0], [2.0]])
    np.testing.assert_array_equal(quadratic_variation(path, 0, 3), [6.0])
    np.testing.assert_array_equal(quadratic_variation(path, 1, 1), [4.0])


def test_quadratic_variation_of_walkers():
    g = build_grid(1, 512, 40.0)
    p = ModelParams.quantum(epsilon=1.0, dt=1e-3)
    s = init_scenario("gaussian", g, p, sigma0=1.0)
    run = run_coupled(s, p, FREE, 0.1, 500, 100, 17, track=500)
    qv = quadratic_variation(run.record.fine_positions, 0, 100)
    assert abs(qv.mean() / 0.1 - 1) < 0.02
