import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtraj.diffusion_engine import (
    CountStatistics,
    DiffusionMethod,
    finite_mu_run,
    homodyne_signal,
    jump_count_statistics,
    propagate_diffusion,
    propagate_finite_mu,
    qsd_step,
    run_qsd_trajectory,
)
from qtraj.grid import TimeGrid
from qtraj.jump_engine import JumpEvent, StepSizeError, TrajectoryRecord
from qtraj.master_engine import me_evolve
from qtraj.presets import two_level_model
from qtraj.quantum_core import LindbladModel, basis_state, homodyne_channels, normalize, projector, pure_density
from qtraj.rng import Streams
from qtraj.validation import noise_covariance, random_model

PLUS = normalize(np.array([1.0, 1.0]))


def _complex_reference(model, phi, dt, xi):
    out = phi - 1j * dt * model.hamiltonian @ phi
    for m, c in enumerate(model.jump_ops):
        mean = np.vdot(phi, c @ phi)
        drift = np.conj(mean) * (c @ phi) - 0.5 * c.conj().T @ c @ phi - 0.5 * abs(mean) ** 2 * phi
        out = out + dt * drift + (c @ phi - mean * phi) * xi[m] / np.sqrt(2)
    return normalize(out)


def _real_reference(model, phi, dt, dz):
    out = phi - 1j * dt * model.hamiltonian @ phi
    for m, c in enumerate(model.jump_ops):
        x = np.vdot(phi, (c + c.conj().T) @ phi).real
        drift = 0.5 * (x * (c @ phi) - c.conj().T @ c @ phi - 0.25 * x**2 * phi)
        out = out + dt * drift + 0.5 * (2 * c @ phi - x * phi) * dz[m]
    return normalize(out)


def test_noise_covariance():
    cov = noise_covariance(200_000)
    tol = 4 * np.sqrt(2 / 200_000)
    assert cov[0, 0] == pytest.approx(1, abs=tol)
    assert cov[1, 1] == pytest.approx(1, abs=tol)
    assert abs(cov[0, 1]) < tol


@given(st.integers(0, 2**31), st.sampled_from(["ito_complex", "ito_real"]))
def test_step_matches_written_equations(seed, method):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 2)
    phi = normalize(rng.normal(size=3) + 1j * rng.normal(size=3))
    dt = 0.005 / max(1.0, np.abs(model.heff).sum(axis=1).max())
    if method == "ito_complex":
        xi = np.sqrt(dt) * (rng.normal(size=2) + 1j * rng.normal(size=2))
        ref = _complex_reference(model, phi, dt, xi)
    else:
        xi = np.sqrt(dt) * rng.normal(size=2)
        ref = _real_reference(model, phi, dt, xi)
    np.testing.assert_allclose(qsd_step(model, phi, dt, method, noise=xi), ref, atol=1e-13)


@pytest.mark.parametrize("method", ["ito_complex", "ito_real"])
def test_zero_channels_is_schrodinger_step(method):
    h = np.array([[0.3, 0.2], [0.2, -0.1]], dtype=complex)
    dt = 1e-3
    bare = qsd_step(LindbladModel(h), PLUS, dt, method)
    silent = qsd_step(LindbladModel(h, (np.zeros((2, 2)),)), PLUS, dt, method, noise=np.array([0.7]))
    assert np.array_equal(bare, silent)
    np.testing.assert_allclose(bare, normalize(PLUS - 1j * dt * h @ PLUS), atol=1e-15)


@pytest.mark.parametrize("method", ["ito_complex", "ito_real"])
def test_zero_noise_is_drift_only(rabi, method):
    dt = 1e-3
    phi = normalize(np.array([0.6, 0.8j]))
    ref = (_complex_reference if method == "ito_complex" else _real_reference)(rabi, phi, dt, np.zeros(1))
    np.testing.assert_allclose(qsd_step(rabi, phi, dt, method, noise=np.zeros(1)), ref, atol=1e-15)


def test_guard(rabi, ground):
    with pytest.raises(StepSizeError):
        qsd_step(rabi, ground, 0.01)
    with pytest.raises(StepSizeError):
        propagate_diffusion(rabi, ground, TimeGrid(0, 1, 0.01), (), "ito_real", Streams(0, [0]))


def test_non_finite_amplitudes(rabi):
    with pytest.raises(FloatingPointError):
        qsd_step(rabi, PLUS, 1e-4, "ito_real", noise=np.array([np.inf]))


def test_finite_mu_not_a_continuous_method(rabi, ground):
    with pytest.raises(ValueError):
        qsd_step(rabi, ground, 1e-4, DiffusionMethod.FINITE_MU)


def test_decay_mean_matches_exponential(decay, excited):
    # 5000 trajectories, mean excited population against exp(-t) at t = 0.5, 1, 2
    grid = TimeGrid(0, 2, 1e-3, sample_every=500)
    res = propagate_diffusion(decay, excited, grid, [projector(2, 0)], "ito_complex", Streams(31, np.arange(5000)))
    pe = res.values[:, :, 0]
    mean, se = pe.mean(0), pe.std(0, ddof=1) / np.sqrt(pe.shape[0])
    for s in (1, 2, 4):
        assert abs(mean[s] - np.exp(-grid.times[s])) <= 3 * se[s]


def test_complex_and_real_agree(rabi, ground):
    grid = TimeGrid(0, 2, 1e-4, sample_every=2500)
    a = propagate_diffusion(rabi, ground, grid, [projector(2, 0)], "ito_complex", Streams(41, np.arange(1000)))
    b = propagate_diffusion(rabi, ground, grid, [projector(2, 0)], "ito_real", Streams(42, np.arange(1000)))
    ma, mb = a.values[..., 0].mean(0), b.values[..., 0].mean(0)
    se = np.sqrt(a.values[..., 0].var(0, ddof=1) / 1000 + b.values[..., 0].var(0, ddof=1) / 1000)
    assert np.all(np.abs(ma - mb) <= 3 * se + 1e-12)


def test_trajectory_is_continuous(rabi, ground):
    grid = TimeGrid(0, 0.5, 1e-5, sample_every=1)
    rec = run_qsd_trajectory(rabi, ground, grid, [projector(2, 0)], "ito_complex", master_seed=3)
    assert rec.jumps == []
    assert np.max(np.abs(np.diff(rec.values[:, 0]))) <= 0.05


def test_finite_mu_guards(rabi, ground):
    grid = TimeGrid(0, 0.01, 1e-3)
    with pytest.raises(StepSizeError):
        finite_mu_run(rabi, ground, grid, mu=10.0)
    with pytest.warns(RuntimeWarning, match="diffusive"):
        finite_mu_run(rabi, ground, TimeGrid(0, 0.01, 1e-3), mu=1.0)


def test_finite_mu_matches_master_equation(rabi, ground):
    grid = TimeGrid(0, 3, 5e-4, sample_every=500)
    with pytest.warns(RuntimeWarning, match="diffusive"):
        res = propagate_finite_mu(rabi, ground, grid, [projector(2, 0)], 10.0, "four_phase", Streams(6, np.arange(1000)))
    oracle = me_evolve(rabi, pure_density(ground), grid, [projector(2, 0)]).values[:, 0]
    pe = res.values[..., 0]
    se = pe.std(0, ddof=1) / np.sqrt(1000)
    assert np.all(np.abs(pe.mean(0) - oracle) <= 4 * se + 2e-3)


def test_per_jump_change_shrinks_with_mu(decay):
    def max_jump_change(mu):
        dt = 0.05 / mu**2
        n = 4000
        grid = TimeGrid(0, n * dt, dt, sample_every=1)
        res = propagate_finite_mu(decay, PLUS, grid, [projector(2, 0)], mu, "two_phase", Streams(8, [0]))
        pe = res.values[0, :, 0]
        steps = np.rint(res.jump_time / dt).astype(int)
        return np.max(np.abs(pe[steps] - pe[steps - 1]))

    ratio = max_jump_change(10.0) / max_jump_change(100.0)
    assert 5 < ratio < 20


def test_aggregate_window_operator():
    # product of n_plus (mu + C) and n_minus (mu - C) factors ~ mu^N (1 + (n_plus - n_minus) C / mu)
    rng = np.random.default_rng(0)
    c = 0.3 * (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    mu, n_plus, n_minus = 1e3, 60, 40
    prod = np.eye(3, dtype=complex)
    for _ in range(n_plus):
        prod = prod @ (np.eye(3) + c / mu)
    for _ in range(n_minus):
        prod = prod @ (np.eye(3) - c / mu)
    approx = np.eye(3) + (n_plus - n_minus) * c / mu
    assert np.max(np.abs(prod - approx)) < (n_plus + n_minus) ** 2 * np.max(np.abs(c @ c)) / mu**2


def _record(times, jumps, dt=0.1):
    return TrajectoryRecord(np.array([0.0, times]), np.zeros((2, 0)), jumps, np.zeros(2), dt=dt)


def test_window_counts_half_open():
    rec = _record(3.0, [JumpEvent(0.5, 0), JumpEvent(1.0, 1), JumpEvent(1.001, 1), JumpEvent(2.9, 0)])
    st_ = jump_count_statistics(rec, 1.0, 2)
    np.testing.assert_array_equal(st_.counts, [[1, 1], [0, 1], [1, 0]])


def test_window_smaller_than_dt():
    with pytest.raises(ValueError, match="smaller"):
        jump_count_statistics(_record(1.0, [], dt=0.1), 0.05)


def test_homodyne_signal_shapes():
    st2 = CountStatistics(1.0, np.array([[5, 3], [2, 2]]))
    np.testing.assert_allclose(homodyne_signal(st2, 2.0), [[1.0], [0.0]])
    st4 = CountStatistics(1.0, np.array([[5, 3, 4, 1]]))
    np.testing.assert_allclose(homodyne_signal(st4, 1.0, "four_phase"), [[2 + 3j]])


def test_ground_held_counts_are_poisson(decay, ground):
    mu = 10.0
    grid = TimeGrid(0, 40, 5e-4, sample_every=80000)
    rec = finite_mu_run(decay, ground, grid, mu=mu, master_seed=12)
    stats = jump_count_statistics(rec, 1.0, 2)
    assert stats.counts.shape == (40, 2)
    assert stats.mean.mean() == pytest.approx(mu**2 / 2, rel=0.05)
    np.testing.assert_allclose(rec.final_state, ground)


def test_homodyne_channel_rates_on_ground(decay, ground):
    d = homodyne_channels(decay, 10.0)
    rates = [np.vdot(ground, op.conj().T @ op @ ground).real for op in d.jump_ops]
    np.testing.assert_allclose(rates, 50.0)
