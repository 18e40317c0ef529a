import numpy as np
import pytest

from cbflearn.dynamics import (
    ControlAffineSystem,
    aircraft_pairwise_distance,
    make_aircraft,
    make_planar,
    step_rk4,
)
from cbflearn.experts import (
    SoftMinBarrier,
    aircraft_goals,
    aircraft_nominal_mpc_lite,
    aircraft_scripted_episodes,
    aircraft_scripted_expert,
    circle_reference,
    head_on_initial_states,
    planar_tracker,
    planar_unsafe_circles,
)
from cbflearn.safety_filter import FilterConfig, cbf_qp_control, filter_step, simulate_filtered
from cbflearn import verifier as vf
from tests.conftest import paper_hyperparams


class LinearBarrier:
    """h(x) = c + <a, x> with explicit gradient, for scalar toy problems."""

    def __init__(self, a, c, alpha_coef=1.0):
        self.a = np.asarray(a, dtype=float)
        self.c = float(c)
        self.alpha_coef = alpha_coef

    def value(self, X):
        X = np.asarray(X, dtype=float)
        v = X @ self.a + self.c
        return float(v) if v.ndim == 0 else v

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self.a.copy()
        return np.repeat(self.a[None, :], len(X), axis=0)


def scalar_integrator(box=2.0):
    return ControlAffineSystem(
        state_dim=1,
        input_dim=1,
        drift=lambda x: np.zeros(1),
        input_matrix=lambda x: np.eye(1),
        input_lower=np.array([-box]),
        input_upper=np.array([box]),
        label="scalar",
    )


def test_scalar_toy_projects_onto_constraint():
    # constraint <grad h, u> >= -h with grad h = 1, h = -1: u >= 1
    sys = scalar_integrator()
    cfg = FilterConfig(model=LinearBarrier([1.0], -1.0))
    u = cbf_qp_control(cfg, sys, np.zeros(1), np.zeros(1))
    assert u[0] == pytest.approx(1.0, abs=1e-7)


def test_nominal_passthrough_when_consistent():
    sys = scalar_integrator()
    cfg = FilterConfig(model=LinearBarrier([1.0], 5.0))
    u_nom = np.array([0.7])
    u = cbf_qp_control(cfg, sys, np.zeros(1), u_nom)
    assert u[0] == pytest.approx(0.7, abs=1e-8)


def test_infeasible_falls_back_to_derivative_maximizer():
    # u >= 5 incompatible with box [-2, 2]: fallback pushes to the top corner
    sys = scalar_integrator(box=2.0)
    cfg = FilterConfig(model=LinearBarrier([1.0], -5.0))
    res = filter_step(cfg, sys, np.zeros(1), np.zeros(1))
    assert res.violation
    assert res.u[0] == pytest.approx(2.0)


def test_softmin_barrier_filters_outward_push():
    sys = make_planar(1.0)
    barrier = SoftMinBarrier(k=20.0)
    cfg = FilterConfig(model=barrier, alpha_coef=1.0)
    hp = paper_hyperparams()
    x = np.array([0.9, 0.2])  # near the x1 = 1 boundary
    u_nom = np.array([5.0, 0.0])  # pushes outward hard
    u = cbf_qp_control(cfg, sys, x, u_nom)
    q_after = vf.q_value(barrier, sys, hp, x, u)
    assert q_after >= -1e-7


def test_minimal_invasiveness_across_rollout(paper_planar_model):
    sys = make_planar(1.0)
    cfg = FilterConfig(model=paper_planar_model, alpha_coef=1.0)
    hp = paper_hyperparams()
    nominal = planar_tracker(sys, circle_reference(0.3), gain=4.0)
    res = simulate_filtered(cfg, sys, nominal, np.array([-0.3, 0.0]), 0.01, 300)
    for k in range(res.trajectory.steps):
        x = res.trajectory.states[k]
        u_nom = np.clip(res.u_nom_trace[k], sys.input_lower, sys.input_upper)
        q_nom = vf.q_value(paper_planar_model, sys, hp, x, u_nom)
        if q_nom >= 1e-7:
            assert np.max(np.abs(res.u_filtered_trace[k] - u_nom)) < 1e-5
        q_filt = vf.q_value(paper_planar_model, sys, hp, x, res.u_filtered_trace[k])
        assert q_filt >= -1e-6


def test_simulate_zero_steps_single_state(paper_planar_model):
    sys = make_planar(1.0)
    cfg = FilterConfig(model=paper_planar_model)
    res = simulate_filtered(cfg, sys, lambda t, x: np.zeros(2), np.array([-0.3, 0.0]),
                            0.01, 0)
    assert len(res.trajectory.states) == 1
    assert len(res.h_trace) == 1
    assert res.trajectory.inputs.shape[0] == 0


# ---------------------------------------------------------------------------
# expert generators
# ---------------------------------------------------------------------------


def test_planar_expert_circle_samples(planar_demos):
    radii = np.linalg.norm(planar_demos.states, axis=1)
    circle = radii[(radii > 0.29) & (radii < 0.31)]
    assert len(circle) >= 80
    assert np.max(np.abs(circle - 0.3)) < 1e-2
    assert np.all(planar_demos.states[:, 0] < 1.0)
    assert np.all(planar_demos.states[:, 1] < 1.0)


def test_planar_expert_net_of_coverage_region(planar_demos):
    from cbflearn.geometry import PointSet, verify_net
    from cbflearn.verifier import sample_region_D

    safe = planar_demos.safe_points()
    witnesses = sample_region_D(safe, 0.01666, 2, budget=20_000, rng_seed=0)
    report = verify_net(safe, witnesses, 0.01666)
    assert report.covered


def test_unsafe_circles_radii():
    ps = planar_unsafe_circles(points_per_circle=80)
    r = np.linalg.norm(ps.points, axis=1)
    assert set(np.round(np.unique(r), 6)) == {0.1, 0.5}


def test_scripted_expert_separation_and_box():
    episodes = aircraft_scripted_episodes(6, seed=0)
    sys = make_aircraft()
    for ep in episodes:
        d = aircraft_pairwise_distance(ep.states)
        assert np.min(d) >= 0.5
        assert np.all(ep.inputs >= sys.input_lower - 1e-12)
        assert np.all(ep.inputs <= sys.input_upper + 1e-12)


def test_scripted_expert_deterministic():
    a = aircraft_scripted_expert(3, seed=4)
    b = aircraft_scripted_expert(3, seed=4)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.inputs, b.inputs)


def test_mpc_lite_at_goal_idles():
    goal = np.array([1.0, 2.0, 0.5, -1.0, -2.0, 1.5])
    u = aircraft_nominal_mpc_lite(goal, goal)
    assert u[0] == pytest.approx(0.1)
    assert u[1] == pytest.approx(0.0)
    assert u[2] == pytest.approx(0.1)
    assert u[3] == pytest.approx(0.0)


def test_mpc_lite_goal_ahead_goes_straight():
    x = np.array([0.0, 0.0, 0.0, 10.0, 10.0, 0.0])
    goal = np.array([5.0, 0.0, 0.0, 10.0, 10.0, 0.0])
    u = aircraft_nominal_mpc_lite(x, goal)
    assert u[1] == pytest.approx(0.0)
    assert u[0] == pytest.approx(1.0)  # far from goal: full speed


def test_head_on_unfiltered_baseline_collides():
    sys = make_aircraft()
    x0 = head_on_initial_states(1, radius=1.0)[0]
    goal = aircraft_goals(x0)
    x = x0.copy()
    min_d = aircraft_pairwise_distance(x)
    for k in range(200):
        u = sys.clip_input(aircraft_nominal_mpc_lite(x, goal))
        x = step_rk4(sys, x, u, 0.05)
        min_d = min(min_d, aircraft_pairwise_distance(x))
    assert min_d < 0.5


def test_goal_assignment_rule():
    right = np.array([1.0, 0.0, np.pi, -1.0, 0.0, 0.0])
    assert np.allclose(aircraft_goals(right), [-5.0, 0.0, np.pi, 5.0, 0.0, 0.0])
    left = np.array([-1.0, 0.0, 0.0, 1.0, 0.0, np.pi])
    assert np.allclose(aircraft_goals(left), [5.0, 0.0, 0.0, -5.0, 0.0, np.pi])


def test_aircraft_mirror_symmetry_of_scripted_expert():
    """Mirroring the initial state across the x-axis mirrors the episode."""
    sys = make_aircraft()
    from cbflearn.experts import _scripted_agent_input

    x = np.array([0.6, 0.2, 2.5, -0.6, -0.2, -0.4])
    goal = aircraft_goals(x)

    def mirror(state):
        out = state.copy()
        out[1] = -out[1]
        out[4] = -out[4]
        out[2] = -out[2]
        out[5] = -out[5]
        return out

    xm = mirror(x)
    goal_m = aircraft_goals(xm)
    for _ in range(40):
        va, wa = _scripted_agent_input(x[0:2], x[2], x[3:5], goal[0:2], 0.5)
        vb, wb = _scripted_agent_input(x[3:5], x[5], x[0:2], goal[3:5], 0.5)
        x = step_rk4(sys, x, np.array([va, wa, vb, wb]), 0.05)
        va_m, wa_m = _scripted_agent_input(xm[0:2], xm[2], xm[3:5], goal_m[0:2], 0.5)
        vb_m, wb_m = _scripted_agent_input(xm[3:5], xm[5], xm[0:2], goal_m[3:5], 0.5)
        xm = step_rk4(sys, xm, np.array([va_m, wa_m, vb_m, wb_m]), 0.05)
        diff = mirror(x) - xm
        diff[2] = (diff[2] + np.pi) % (2 * np.pi) - np.pi
        diff[5] = (diff[5] + np.pi) % (2 * np.pi) - np.pi
        assert np.max(np.abs(diff)) < 1e-6
