import math

import numpy as np
import pytest

from ringtraffic import (
    HistoryBuffer,
    ModelParams,
    RingState,
    delayed_headway,
    detect_collisions,
    euler_step,
    init_ring_equilibrium,
    perturb,
    run_single_lane,
    velocity_from_headway,
)
from ringtraffic.errors import ConfigurationError, ParameterError
from ringtraffic.single_lane import ring_headways

V_EQ_50 = 40.0 * (1.0 - math.exp(-0.3125))


def test_equilibrium_positions(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    assert np.array_equal(state.positions, 20.0 * np.arange(50))


def test_equilibrium_two_vehicles(table1_params):
    state = init_ring_equilibrium(2, table1_params)
    assert np.array_equal(state.positions, [0.0, 500.0])


def test_equilibrium_rejects_spacing_at_vehicle_size(table1_params):
    with pytest.raises(ConfigurationError):
        init_ring_equilibrium(200, table1_params)  # 5 m spacing equals the car size


def test_equilibrium_warns_above_jam_density(table1_params):
    with pytest.warns(UserWarning):
        init_ring_equilibrium(150, table1_params)  # 6.67 m spacing below d_min


def test_perturb_shifts_one_vehicle(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    shifted = perturb(state, 0, 1.0, table1_params.track_length)
    h = ring_headways(shifted.positions, table1_params.track_length)
    assert h[0] == pytest.approx(19.0)
    assert h[-1] == pytest.approx(21.0)
    assert np.all(shifted.positions[1:] == state.positions[1:])


def test_perturb_zero_is_identity(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    same = perturb(state, 3, 0.0, table1_params.track_length)
    assert np.array_equal(same.positions, state.positions)


def test_perturb_rejects_closing_a_headway(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    with pytest.raises(ParameterError):
        perturb(state, 0, 20.0, table1_params.track_length)


def test_history_requires_integer_delay_multiple(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    with pytest.raises(ConfigurationError):
        HistoryBuffer(state.positions, delay=0.005, dt=0.01)
    buf = HistoryBuffer(state.positions, delay=0.75, dt=0.01)
    assert buf.delay_steps == 75


def test_delayed_headway_zero_delay_is_current(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    hist = HistoryBuffer(state.positions, delay=0.0, dt=0.01)
    assert delayed_headway(hist, 0, table1_params.track_length) == pytest.approx(20.0)


def test_delayed_headway_uniform_motion_preserves_spacing(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    hist = HistoryBuffer(state.positions, delay=0.1, dt=0.01)
    for _ in range(25):
        state = euler_step(state, hist, table1_params, 0.01)
    for j in (0, 17, 49):
        assert delayed_headway(hist, j, table1_params.track_length) == pytest.approx(20.0)


def test_delayed_headway_holds_initial_snapshot():
    """First steps of a small perturbed ring, checked against hand arithmetic."""
    p = ModelParams(track_length=100.0)
    dt, delay = 0.1, 0.2
    state = RingState(np.array([1.0, 25.0, 50.0, 75.0]))  # vehicle 0 displaced +1
    hist = HistoryBuffer(state.positions, delay, dt)
    x0 = state.positions.copy()

    # While t <= delay the perceived headways stay at the held initial values.
    expected_h0 = np.array([24.0, 25.0, 25.0, 26.0])
    for _ in range(2):
        np.testing.assert_allclose(
            ring_headways(hist.positions_at_delay(), p.track_length),
            expected_h0,
            rtol=0,
            atol=1e-12,
        )
        state = euler_step(state, hist, p, dt)
    # At t = delay the lookup still lands on the initial snapshot (t - delay = 0);
    # one more step later it returns x(dt) = x(0) + dt * v(h(initial)).
    np.testing.assert_allclose(hist.positions_at_delay(), x0, atol=1e-12)
    state = euler_step(state, hist, p, dt)
    v0 = velocity_from_headway(expected_h0, p)
    np.testing.assert_allclose(hist.positions_at_delay(), x0 + dt * v0, atol=1e-12)


def test_euler_step_advances_equilibrium_uniformly(table1_params):
    state = init_ring_equilibrium(50, table1_params)
    hist = HistoryBuffer(state.positions, delay=0.0, dt=0.01)
    stepped = euler_step(state, hist, table1_params, 0.01)
    np.testing.assert_allclose(
        stepped.positions - state.positions, 0.01 * V_EQ_50, rtol=0, atol=1e-12
    )
    h = ring_headways(stepped.positions, table1_params.track_length)
    np.testing.assert_allclose(h, 20.0, atol=1e-12)


def test_euler_step_zero_velocity_below_minimal_headway():
    p = ModelParams(track_length=100.0)
    state = RingState(np.array([0.0, 7.0, 50.0]))  # follower 0 sees 7 m < d_min
    hist = HistoryBuffer(state.positions, delay=0.0, dt=0.01)
    stepped = euler_step(state, hist, p, 0.01)
    assert stepped.positions[0] == 0.0
    assert stepped.positions[1] > 7.0


def test_euler_step_rejects_mismatched_dt(table1_params):
    state = init_ring_equilibrium(10, table1_params)
    hist = HistoryBuffer(state.positions, delay=0.0, dt=0.01)
    with pytest.raises(ConfigurationError):
        euler_step(state, hist, table1_params, 0.02)


def test_collision_detection_boundary(table1_params):
    clear = RingState(np.array([0.0, 20.0]), time=3.0)
    assert detect_collisions(clear, table1_params) == []
    touching = RingState(np.array([0.0, 5.0]), time=3.0)
    reports = detect_collisions(touching, table1_params)
    assert len(reports) == 1
    assert reports[0].follower_index == 0
    assert reports[0].headway_at_collision == pytest.approx(5.0)
    assert reports[0].time == 3.0
    apart = RingState(np.array([0.0, 5.01]), time=3.0)
    assert detect_collisions(apart, table1_params) == []


def test_equilibrium_is_fixed_point(table1_params):
    """Unperturbed spacing stays equal to L/N to 1e-9 over ten thousand steps."""
    for delay in (0.0, 0.5):
        record = run_single_lane(table1_params, 50, delay, 0.05, 500.0)
        h_final = ring_headways(record.positions[-1], table1_params.track_length)
        assert np.max(np.abs(h_final - 20.0)) < 1e-9
        assert record.termination_reason == "completed"


def test_translation_invariance(table1_params):
    base = init_ring_equilibrium(25, table1_params)
    base = perturb(base, 0, 1.0, table1_params.track_length)
    shift = 123.0

    def trajectory(initial):
        state = RingState(initial.copy())
        hist = HistoryBuffer(state.positions, delay=0.5, dt=0.05)
        out = []
        for _ in range(400):
            state = euler_step(state, hist, table1_params, 0.05)
            out.append(state.positions.copy())
        return np.stack(out)

    plain = trajectory(base.positions)
    moved = trajectory(base.positions + shift)
    assert np.max(np.abs(moved - (plain + shift))) < 1e-7


def test_headways_positive_and_sum_to_track(table1_params):
    record = run_single_lane(
        table1_params, 50, 0.75, 0.01, 300.0, perturbation=(0, 1.0), record_stride=10
    )
    assert record.termination_reason == "collision"
    for s in range(len(record.times)):
        h = ring_headways(record.positions[s], table1_params.track_length)
        assert np.all(h > 0)
        assert abs(h.sum() - table1_params.track_length) < 1e-9


def test_unperturbed_run_is_exactly_steady(table1_params):
    record = run_single_lane(table1_params, 50, 0.5, 0.05, 50.0)
    np.testing.assert_allclose(record.velocities, V_EQ_50, atol=1e-9)


def test_record_stride_subsamples(table1_params):
    full = run_single_lane(table1_params, 10, 0.0, 0.05, 10.0)
    coarse = run_single_lane(table1_params, 10, 0.0, 0.05, 10.0, record_stride=10)
    assert len(coarse.times) < len(full.times)
    np.testing.assert_allclose(coarse.times[:3], [0.0, 0.5, 1.0])
    assert coarse.times[-1] == pytest.approx(10.0)  # final state always kept


def test_trajectory_csv_round_trippable(tmp_path, table1_params, csv_columns):
    record = run_single_lane(table1_params, 5, 0.0, 0.1, 2.0)
    path = tmp_path / "traj.csv"
    record.write_csv(path)
    data = csv_columns(path)
    assert set(data) == {"t", "vehicle", "x_unwrapped", "v"}
    assert len(data["t"]) == len(record.times) * 5
    assert data["x_unwrapped"][0] == record.positions[0, 0]
