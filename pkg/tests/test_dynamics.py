import numpy as np
import pytest

from cbflearn.dynamics import (
    DynamicsError,
    Trajectory,
    aircraft_pairwise_distance,
    eval_vector_field,
    load_trajectories,
    make_aircraft,
    make_planar,
    rollout,
    save_trajectories,
    step_rk4,
)
from cbflearn.experts import circle_reference, planar_tracker


def test_planar_field_at_origin():
    sys = make_planar(1.0)
    out = eval_vector_field(sys, np.zeros(2), np.array([1.0, 0.0]))
    assert np.allclose(out, [1.0, 0.0])


def test_planar_pure_drift():
    sys = make_planar(1.0)
    out = eval_vector_field(sys, np.array([1.0, 1.0]), np.zeros(2))
    assert np.allclose(out, [-1.0, -1.0])


def test_planar_input_matrix_values():
    sys = make_planar(1.0)
    assert np.allclose(sys.input_matrix(np.zeros(2)), np.eye(2))
    assert np.allclose(sys.input_matrix(np.ones(2)), 2.0 * np.eye(2))


def test_planar_rejects_nonpositive_delta():
    with pytest.raises(DynamicsError):
        make_planar(0.0)


def test_aircraft_field_head_on():
    sys = make_aircraft()
    x = np.array([0.0, 0.0, 0.0, 1.0, 0.0, np.pi])
    u = np.array([1.0, 0.0, 0.1, 0.0])
    out = eval_vector_field(sys, x, u)
    assert np.allclose(out, [1.0, 0.0, 0.0, -0.1, 0.0, 0.0], atol=1e-12)


def test_aircraft_box_and_structure():
    sys = make_aircraft()
    assert np.allclose(sys.input_lower, [0.1, -1.0, 0.1, -1.0])
    x = np.random.default_rng(0).normal(size=6)
    assert np.allclose(sys.drift(x), 0.0)
    g = sys.input_matrix(x)
    expected = np.zeros(6)
    expected[2] = 1.0
    assert np.allclose(g[:, 1], expected)


def test_field_is_affine_in_input():
    rng = np.random.default_rng(1)
    for sys in (make_planar(1.0), make_aircraft()):
        for _ in range(20):
            x = rng.normal(size=sys.state_dim)
            u1 = rng.normal(size=sys.input_dim)
            u2 = rng.normal(size=sys.input_dim)
            lam = rng.uniform()
            lhs = eval_vector_field(sys, x, lam * u1 + (1 - lam) * u2)
            rhs = lam * eval_vector_field(sys, x, u1) + (1 - lam) * eval_vector_field(
                sys, x, u2
            )
            assert np.allclose(lhs, rhs, atol=1e-12)


def test_rk4_equilibrium_fixed_point():
    sys = make_planar(1.0)
    # drift cancelled exactly: -x + (x^2+1) u = 0
    x = np.array([0.5, -0.2])
    u = x / (x**2 + 1.0)
    out = step_rk4(sys, x, u, 0.3)
    assert np.allclose(out, x, atol=1e-14)


def test_rk4_linear_decay_accuracy():
    sys = make_planar(1.0)
    out = step_rk4(sys, np.array([1.0, 0.0]), np.zeros(2), 0.01)
    assert abs(out[0] - np.exp(-0.01)) < 1e-9


def test_rk4_straight_flight_exact():
    sys = make_aircraft()
    th = 0.7
    x = np.array([0.0, 0.0, th, 5.0, 5.0, 0.0])
    u = np.array([1.0, 0.0, 0.1, 0.0])
    out = step_rk4(sys, x, u, 0.1)
    assert abs(out[0] - 0.1 * np.cos(th)) < 1e-12
    assert abs(out[1] - 0.1 * np.sin(th)) < 1e-12


def test_rk4_fourth_order_convergence():
    sys = make_planar(1.0)
    x0 = np.array([1.0, 0.0])
    exact = np.exp(-0.2)
    errs = []
    for dt in (0.2, 0.1):
        x = x0.copy()
        for _ in range(int(round(0.2 / dt))):
            x = step_rk4(sys, x, np.zeros(2), dt)
        errs.append(abs(x[0] - exact))
    factor = errs[0] / errs[1]
    assert 12.0 <= factor <= 20.0


def test_rk4_rejects_bad_dt():
    sys = make_planar(1.0)
    with pytest.raises(DynamicsError):
        step_rk4(sys, np.zeros(2), np.zeros(2), 0.0)


def test_rollout_single_step_matches_rk4():
    sys = make_planar(1.0)
    x0 = np.array([0.3, 0.4])
    traj = rollout(sys, x0, lambda t, x: np.zeros(2), 0.05, 1)
    assert np.allclose(traj.states[0], x0)
    assert np.allclose(traj.states[1], step_rk4(sys, x0, np.zeros(2), 0.05))


def test_rollout_step_halving_agreement():
    sys = make_planar(1.0)
    u_const = np.array([0.4, -0.3])
    x0 = np.array([0.2, -0.1])
    # constant input: the integrator's full 4th order shows through
    coarse = rollout(sys, x0, lambda t, x: u_const, 0.02, 50)
    fine = rollout(sys, x0, lambda t, x: u_const, 0.01, 100)
    assert np.max(np.abs(coarse.states[-1] - fine.states[-1])) < 1e-9

    # zero-order-held time-varying inputs: first-order agreement in dt
    def controller(t, x):
        return np.array([np.sin(t), np.cos(t)])

    c2 = rollout(sys, x0, controller, 0.02, 50)
    f2 = rollout(sys, x0, controller, 0.01, 100)
    assert np.max(np.abs(c2.states[-1] - f2.states[-1])) < 0.02 * 1.0


def test_rollout_clips_controller_to_box():
    sys = make_aircraft()
    x0 = np.array([0.0, 0.0, 0.0, 2.0, 0.0, np.pi])
    traj = rollout(sys, x0, lambda t, x: np.array([5.0, 3.0, -1.0, 0.0]), 0.05, 3)
    assert np.all(traj.inputs <= sys.input_upper + 1e-15)
    assert np.all(traj.inputs >= sys.input_lower - 1e-15)


def test_rollout_rejects_nonfinite_controller():
    sys = make_planar(1.0)
    with pytest.raises(DynamicsError, match="step 2"):
        rollout(
            sys,
            np.zeros(2),
            lambda t, x: np.array([np.nan, 0.0]) if t >= 0.02 else np.zeros(2),
            0.01,
            5,
        )


def test_circle_tracker_radial_error():
    sys = make_planar(1.0)
    ref = circle_reference(0.3)
    traj = rollout(sys, ref(0.0)[0], planar_tracker(sys, ref, gain=4.0), 0.01, 628)
    radii = np.linalg.norm(traj.states[100:], axis=1)
    assert np.max(np.abs(radii - 0.3)) < 1e-2


def test_trajectory_invariant_checked():
    with pytest.raises(DynamicsError):
        Trajectory(dt=0.1, states=np.zeros((3, 2)), inputs=np.zeros((3, 2)))


def test_trajectory_jsonl_round_trip(tmp_path):
    sys = make_aircraft()
    rng = np.random.default_rng(5)
    trajs = []
    for i in range(3):
        x0 = rng.normal(size=6)
        traj = rollout(
            sys, x0, lambda t, x: np.array([0.5, 0.1, 0.3, -0.2]), 0.05, 10,
            episode_id=f"ep{i}",
        )
        trajs.append(traj)
    path = tmp_path / "trajs.jsonl"
    save_trajectories(path, trajs)
    loaded = load_trajectories(path)
    assert len(loaded) == 3
    for a, b in zip(trajs, loaded):
        assert a.episode_id == b.episode_id
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.inputs, b.inputs)
        assert a.dt == b.dt


def test_pairwise_distance_helper():
    x = np.array([1.0, 2.0, 0.0, 4.0, 6.0, 0.0])
    assert aircraft_pairwise_distance(x) == pytest.approx(5.0)
