import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from qtraj.grid import TimeGrid
from qtraj.jump_engine import (
    StepMethod,
    StepSizeError,
    jump_probabilities,
    mcwf_step,
    propagate_jumps,
    rk4_propagator,
    run_trajectory,
    waiting_time_trajectory,
)
from qtraj.presets import two_level_model
from qtraj.quantum_core import LindbladModel, basis_state, normalize, projector
from qtraj.rng import Streams, trajectory_stream
from qtraj.validation import random_model


class FixedDraw:
    def __init__(self, *values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def test_jump_probabilities(rabi):
    phi = normalize(np.array([0.6, 0.8j]))
    assert jump_probabilities(rabi, phi, 1e-2)[0] == pytest.approx(1e-2 * 0.36)


def test_no_jump_step_is_normalized_euler(rabi, ground):
    dt = 1e-2
    new, event = mcwf_step(rabi, ground, dt, "euler_order1", FixedDraw(0.99))
    expected = normalize((np.eye(2) - 1j * dt * rabi.heff) @ ground)
    assert event is None
    np.testing.assert_allclose(new, expected, atol=1e-15)


def test_jump_step(decay, excited, ground):
    new, event = mcwf_step(decay, excited, 1e-2, "euler_order1", FixedDraw(0.005), t=2.0)
    np.testing.assert_allclose(new, ground)
    assert event.channel == 0 and event.time == pytest.approx(2.01)


def test_channel_choice_first_exceeding():
    # two channels from |e>: weights 1 and 3 per unit time
    lower = np.array([[0, 0], [1, 0]], dtype=complex)
    model = LindbladModel(np.zeros((2, 2)), (lower, np.sqrt(3) * lower))
    e = basis_state(2, 0)
    dt = 0.02  # dp = (0.02, 0.06), cumulative (0.02, 0.08)
    assert mcwf_step(model, e, dt, rng=FixedDraw(0.019))[1].channel == 0
    assert mcwf_step(model, e, dt, rng=FixedDraw(0.02))[1].channel == 1
    assert mcwf_step(model, e, dt, rng=FixedDraw(0.0799))[1].channel == 1
    assert mcwf_step(model, e, dt, rng=FixedDraw(0.08))[1] is None


def test_step_size_guard(decay, excited):
    with pytest.raises(StepSizeError) as info:
        mcwf_step(decay, excited, 0.5, rng=FixedDraw(0.9))
    assert info.value.measured == pytest.approx(0.5)
    assert info.value.limit == 0.1


def test_rk4_guard_uses_stability_bound(rabi, ground):
    with pytest.raises(StepSizeError):
        propagate_jumps(rabi, ground, TimeGrid(0, 1, 0.5), (), "rk4_nonhermitian", Streams(0, [0]))


def test_waiting_time_not_a_step_method(rabi, ground):
    with pytest.raises(ValueError):
        mcwf_step(rabi, ground, 1e-3, StepMethod.WAITING_TIME)


def test_rk4_propagator_accuracy(rabi):
    h = 0.05
    exact = expm(-1j * h * rabi.heff)
    assert np.max(np.abs(rk4_propagator(rabi.heff, h) - exact)) < 1e-7


@given(st.integers(0, 2**31), st.floats(0, 1, exclude_max=True), st.sampled_from(["euler_order1", "rk4_nonhermitian"]))
def test_step_keeps_norm(seed, u, method):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 3, 2)
    phi = normalize(rng.normal(size=3) + 1j * rng.normal(size=3))
    dt = 0.02 / max(1.0, float(np.max(jump_probabilities(model, phi, 1.0).sum())))
    new, _ = mcwf_step(model, phi, dt, method, FixedDraw(u))
    assert abs(np.vdot(new, new).real - 1) < 1e-12


def test_waiting_time_matches_exact_delay(decay, excited):
    grid = TimeGrid(0, 20, 1e-3, sample_every=20000)
    for idx in range(5):
        r = trajectory_stream(9, idx).random()[0]
        rec = waiting_time_trajectory(decay, excited, grid, master_seed=9, traj_index=idx)
        assert rec.jumps[0].time == pytest.approx(-np.log(r), abs=2e-6)
        assert len(rec.jumps) == 1


def test_euler_delay_is_geometric(decay, excited):
    # the first jump happens at the first step whose draw falls below dt * gamma
    dt = 1e-2
    grid = TimeGrid(0, 5, dt, sample_every=500)
    rec = run_trajectory(decay, excited, grid, master_seed=4, traj_index=0)
    u = trajectory_stream(4, 0).random(k=500)[0]
    first = int(np.argmax(u < dt))
    assert rec.jumps[0].time == pytest.approx((first + 1) * dt)


@pytest.mark.parametrize("method", ["euler_order1", "rk4_nonhermitian", "waiting_time"])
def test_single_trajectory_equals_batch_row(rabi, ground, method):
    grid = TimeGrid(0, 3, 1e-3, sample_every=100)
    batch = propagate_jumps(rabi, ground, grid, [projector(2, 0)], method, Streams(5, np.arange(40)))
    rec = run_trajectory(rabi, ground, grid, [projector(2, 0)], method, master_seed=5, traj_index=23)
    ref = batch.record(23, 23, 5)
    assert np.array_equal(rec.values, ref.values)
    assert rec.jumps == ref.jumps
    assert np.array_equal(rec.final_state, ref.final_state)


def test_batch_jump_arrays_sorted(rabi, ground):
    res = propagate_jumps(rabi, ground, TimeGrid(0, 5, 1e-3, 1000), (), "euler_order1", Streams(1, np.arange(30)))
    assert np.all(np.diff(res.jump_row) >= 0)
    for r in range(30):
        t = res.jump_time[res.jump_row == r]
        assert np.all(np.diff(t) > 0)


def test_keep_states_and_density(rabi, ground):
    grid = TimeGrid(0, 1, 1e-2, sample_every=25)
    res = propagate_jumps(rabi, ground, grid, (), "euler_order1", Streams(2, np.arange(8)), keep_states=True, keep_density=True)
    assert res.states.shape == (8, 5, 2)
    outer = np.einsum("bsi,bsj->sij", res.states, res.states.conj())
    np.testing.assert_allclose(res.density_sum, outer, atol=1e-13)


def test_initial_states_per_row(rabi):
    psi0 = np.array([[1, 0], [0, 1]], dtype=complex)
    res = propagate_jumps(rabi, psi0, TimeGrid(0, 0.01, 1e-2), [projector(2, 0)], "euler_order1", Streams(0, [0, 1]))
    np.testing.assert_allclose(res.values[:, 0, 0], [1, 0])
    with pytest.raises(ValueError):
        propagate_jumps(rabi, psi0, TimeGrid(0, 0.01, 1e-2), (), "euler_order1", Streams(0, [0, 1, 2]))


def test_no_channels_is_pure_schrodinger():
    h = np.array([[0, 1], [1, 0]], dtype=complex)
    model = LindbladModel(h)
    grid = TimeGrid(0, 1, 1e-3, sample_every=1000)
    res = propagate_jumps(model, basis_state(2, 0), grid, (), "rk4_nonhermitian", Streams(0, [0]))
    np.testing.assert_allclose(res.final[0], expm(-1j * h) @ basis_state(2, 0), atol=1e-10)
    assert res.jump_row.size == 0


def test_waiting_time_jump_fraction():
    model = two_level_model(gamma=2.0)
    res = propagate_jumps(model, basis_state(2, 0), TimeGrid(0, 1, 1e-3, 1000), (), "waiting_time", Streams(3, np.arange(2000)))
    frac = np.unique(res.jump_row).size / 2000
    assert frac == pytest.approx(1 - np.exp(-2.0), abs=4 * np.sqrt(0.1 / 2000))
