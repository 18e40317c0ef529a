"""Expert demonstration generators and nominal controllers for both benchmarks.

The planar expert tracks reference curves through feedback linearization and
runs behind a CBF-QP filter built on a smoothed box barrier. The aircraft
expert is a scripted waypoint tracker with a geometric avoidance rule that
turns away and slows down on close approach; episodes that ever dip under the
separation distance are discarded and resampled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from cbflearn.dynamics import (
    ControlAffineSystem,
    Trajectory,
    aircraft_pairwise_distance,
    make_aircraft,
    make_planar,
    rollout,
    step_rk4,
)
from cbflearn.geometry import DemonstrationSet, PointSet
from cbflearn.safety_filter import FilterConfig, cbf_qp_control

__all__ = [
    "SoftMinBarrier",
    "circle_reference",
    "radial_reference",
    "planar_tracker",
    "planar_expert_generator",
    "planar_unsafe_circles",
    "aircraft_scripted_episodes",
    "aircraft_scripted_expert",
    "aircraft_nominal_mpc_lite",
    "aircraft_goals",
    "head_on_initial_states",
]


# ---------------------------------------------------------------------------
# Planar benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoftMinBarrier:
    """Smoothed min(1 - x_1, 1 - x_2) via -1/k log-sum-exp; preserves the safe
    box to within log(2)/k."""

    k: float = 20.0
    alpha_coef: float = 1.0

    def value(self, X: np.ndarray):
        X = np.asarray(X, dtype=float)
        margins = 1.0 - X  # (..., 2)
        m = -self.k * margins
        mmax = np.max(m, axis=-1, keepdims=True)
        out = -(mmax[..., 0] + np.log(np.sum(np.exp(m - mmax), axis=-1))) / self.k
        return float(out) if out.ndim == 0 else out

    def grad(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        m = -self.k * (1.0 - X)
        mmax = np.max(m, axis=-1, keepdims=True)
        w = np.exp(m - mmax)
        w = w / np.sum(w, axis=-1, keepdims=True)
        return -w


def circle_reference(radius: float, omega: float = 1.0) -> Callable[[float], tuple]:
    """x_d(t) = r [-cos(wt), sin(wt)] and its time derivative."""

    def ref(t: float):
        xd = radius * np.array([-np.cos(omega * t), np.sin(omega * t)])
        vd = radius * omega * np.array([np.sin(omega * t), np.cos(omega * t)])
        return xd, vd

    return ref


def radial_reference(theta: float, r0: float, r1: float, t_f: float) -> Callable[[float], tuple]:
    """Constant-speed ray trajectory from r0 v(theta) to r1 v(theta) over [0, t_f]."""
    v = np.array([-np.cos(theta), np.sin(theta)])

    def ref(t: float):
        s = min(max(t / t_f, 0.0), 1.0)
        xd = (r0 + (r1 - r0) * s) * v
        vd = ((r1 - r0) / t_f) * v if 0.0 <= t < t_f else np.zeros(2)
        return xd, vd

    return ref


def planar_tracker(
    sys: ControlAffineSystem, ref: Callable[[float], tuple], gain: float = 4.0
) -> Callable[[float, np.ndarray], np.ndarray]:
    """Feedback-linearizing tracking controller: cancels the dynamics exactly."""

    def controller(t: float, x: np.ndarray) -> np.ndarray:
        xd, vd = ref(t)
        v_des = vd + gain * (xd - x)
        return np.linalg.solve(sys.input_matrix(x), v_des - sys.drift(x))

    return controller


def _filtered_tracker(sys, cfg, ref, gain):
    tracker = planar_tracker(sys, ref, gain)

    def controller(t, x):
        return cbf_qp_control(cfg, sys, x, tracker(t, x))

    return controller


def _subsample(traj: Trajectory, count: int, endpoint: bool = False):
    if endpoint:
        idx = np.round(np.linspace(0, traj.steps - 1, count)).astype(int)
    else:
        idx = np.floor(np.linspace(0, traj.steps, count, endpoint=False)).astype(int)
    return traj.states[idx], traj.inputs[idx]


def planar_expert_generator(
    delta: float = 1.0,
    radii: Sequence[float] = (0.2666, 0.3, 0.3333),
    points_per_circle: int = 80,
    radial_specs: Sequence[tuple] = ((0.4666, 0.3666), (0.1333, 0.2333)),
    n_thetas: int = 64,
    points_per_ray: int = 20,
    t_f: float = 1.0,
    dt: float = 0.01,
    gain: float = 4.0,
    smoothing_k: float = 20.0,
) -> DemonstrationSet:
    """Safe expert data for the planar system.

    Three circular sweeps sampled at equi-spaced times plus inward/outward ray
    segments gridded over the start angle; every trajectory runs the
    feedback-linearizing tracker behind the smoothed-box CBF-QP filter.
    """
    sys = make_planar(delta)
    cfg = FilterConfig(model=SoftMinBarrier(k=smoothing_k), alpha_coef=1.0)
    xs, us = [], []
    for r in radii:
        ref = circle_reference(r)
        steps = int(round(2.0 * np.pi / dt))
        traj = rollout(sys, ref(0.0)[0], _filtered_tracker(sys, cfg, ref, gain), dt, steps)
        X, U = _subsample(traj, points_per_circle)
        xs.append(X)
        us.append(U)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_thetas, endpoint=False)
    for r0, r1 in radial_specs:
        for theta in thetas:
            ref = radial_reference(theta, r0, r1, t_f)
            steps = int(round(t_f / dt))
            traj = rollout(sys, ref(0.0)[0], _filtered_tracker(sys, cfg, ref, gain), dt, steps)
            X, U = _subsample(traj, points_per_ray, endpoint=True)
            xs.append(X)
            us.append(U)
    return DemonstrationSet(
        states=np.concatenate(xs, axis=0),
        inputs=np.concatenate(us, axis=0),
        source="planar-expert",
    )


def planar_unsafe_circles(
    radii: Sequence[float] = (0.1, 0.5), points_per_circle: int = 160
) -> PointSet:
    """Layer samples on circles around the expert annulus (inside and outside)."""
    pts = []
    for r in radii:
        ang = np.linspace(0.0, 2.0 * np.pi, points_per_circle, endpoint=False)
        pts.append(np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1))
    return PointSet(dim=2, points=np.concatenate(pts, axis=0), tag="unsafe")


def planar_disk_expert(
    delta: float = 1.0,
    radii: Sequence[float] = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30),
    points_per_circle: int = 224,
    dt: float = 0.01,
    gain: float = 4.0,
) -> DemonstrationSet:
    """Disk-shaped expert coverage: concentric circle sweeps plus a rest point.

    Used by the certified planar stage, where a single outer transition keeps
    the learned function gentle enough for sound Lipschitz bounds.
    """
    sys = make_planar(delta)
    cfg = FilterConfig(model=SoftMinBarrier(k=20.0), alpha_coef=1.0)
    xs = [np.zeros((1, 2))]
    us = [np.zeros((1, 2))]  # resting at the origin is an equilibrium demo
    for r in radii:
        ref = circle_reference(r)
        steps = int(round(2.0 * np.pi / dt))
        traj = rollout(sys, ref(0.0)[0], _filtered_tracker(sys, cfg, ref, gain), dt, steps)
        X, U = _subsample(traj, points_per_circle)
        xs.append(X)
        us.append(U)
    return DemonstrationSet(
        states=np.concatenate(xs, axis=0),
        inputs=np.concatenate(us, axis=0),
        source="planar-disk-expert",
    )


def ring_samples(radius: float, count: int, tag: str = "unsafe") -> PointSet:
    ang = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    return PointSet(
        dim=2,
        points=np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1),
        tag=tag,
    )


# ---------------------------------------------------------------------------
# Aircraft benchmark
# ---------------------------------------------------------------------------


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def aircraft_goals(x0: np.ndarray) -> np.ndarray:
    """Target joint state per the initial-side assignment rule."""
    if x0[0] >= 0.0:
        return np.array([-5.0, 0.0, np.pi, 5.0, 0.0, 0.0])
    return np.array([5.0, 0.0, 0.0, -5.0, 0.0, np.pi])


def head_on_initial_states(count: int, radius: float = 1.0) -> np.ndarray:
    """Symmetric initial states on the circle |p| = radius, agents facing each other."""
    out = np.empty((count, 6))
    for i, phi in enumerate(2.0 * np.pi * np.arange(count) / count):
        c, s = np.cos(phi), np.sin(phi)
        out[i] = [radius * c, radius * s, _wrap(phi + np.pi), -radius * c, -radius * s, phi]
    return out


def _scripted_agent_input(p, th, other_p, goal_p, d_s):
    """Waypoint P-controller with a turn-away/slow-down avoidance override."""
    to_goal = goal_p - p
    psi = np.arctan2(to_goal[1], to_goal[0])
    omega = np.clip(2.5 * _wrap(psi - th), -1.0, 1.0)
    v = np.clip(np.linalg.norm(to_goal), 0.1, 1.0)
    dist = np.linalg.norm(other_p - p)
    if dist < 3.0 * d_s:
        beta = _wrap(np.arctan2(other_p[1] - p[1], other_p[0] - p[0]) - th)
        if abs(beta) < 0.5 * np.pi:
            # steer away from the other agent; break the exact head-on tie to the right
            omega = -1.0 if beta >= 0.0 else 1.0
            v = float(np.clip((dist - d_s) / (2.0 * d_s), 0.1, v))
    return v, omega


def aircraft_scripted_episodes(
    n_episodes: int,
    seed: int = 0,
    d_s: float = 0.5,
    dt: float = 0.05,
    max_steps: int = 400,
    stop_mult: float = 5.0,
    radius_range: tuple = (0.55, 1.0),
    heading_noise: float = 0.3,
) -> list[Trajectory]:
    """Scripted near-head-on avoidance episodes with min separation >= d_s.

    Episodes terminate once the agents separate beyond stop_mult * d_s;
    episodes that ever dip under d_s are discarded and fresh initial
    conditions drawn.
    """
    sys = make_aircraft()
    rng = np.random.default_rng(seed)
    episodes: list[Trajectory] = []
    attempt = 0
    while len(episodes) < n_episodes:
        attempt += 1
        if attempt > 50 * n_episodes:
            raise RuntimeError("scripted expert keeps violating the separation distance")
        R = rng.uniform(*radius_range)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        na, nb = rng.uniform(-heading_noise, heading_noise, size=2)
        c, s = np.cos(phi), np.sin(phi)
        x = np.array([R * c, R * s, _wrap(phi + np.pi + na), -R * c, -R * s, _wrap(phi + nb)])
        goal = aircraft_goals(x)
        states = [x.copy()]
        inputs = []
        ok = True
        for _ in range(max_steps):
            va, wa = _scripted_agent_input(x[0:2], x[2], x[3:5], goal[0:2], d_s)
            vb, wb = _scripted_agent_input(x[3:5], x[5], x[0:2], goal[3:5], d_s)
            u = np.array([va, wa, vb, wb])
            x = step_rk4(sys, x, u, dt)
            inputs.append(u)
            states.append(x.copy())
            if aircraft_pairwise_distance(x) < d_s:
                ok = False
                break
            if aircraft_pairwise_distance(x) > stop_mult * d_s:
                break
        if not ok:
            continue
        episodes.append(
            Trajectory(
                dt=dt,
                states=np.array(states),
                inputs=np.array(inputs),
                episode_id=f"scripted-{len(episodes):03d}",
                meta={"seed": seed, "d_s": d_s},
            )
        )
    return episodes


def aircraft_scripted_expert(
    n_episodes: int, seed: int = 0, d_s: float = 0.5, stride: int = 1, **kwargs
) -> DemonstrationSet:
    """Flatten scripted episodes into state-action pairs (optionally strided)."""
    episodes = aircraft_scripted_episodes(n_episodes, seed=seed, d_s=d_s, **kwargs)
    xs = np.concatenate([ep.states[:-1:stride] for ep in episodes], axis=0)
    us = np.concatenate([ep.inputs[::stride] for ep in episodes], axis=0)
    return DemonstrationSet(states=xs, inputs=us, source=f"aircraft-scripted(seed={seed})")


_MPC_V_LATTICE = np.array([0.1, 0.4, 0.7, 1.0])
_MPC_W_LATTICE = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])


def _agent_lattice_input(p, th, goal_p, goal_th, dt, horizon):
    best = None
    best_cost = np.inf
    for v in _MPC_V_LATTICE:
        for w in _MPC_W_LATTICE:
            px, py, a = p[0], p[1], th
            cost = 0.0
            for _ in range(horizon):
                px += dt * v * np.cos(a)
                py += dt * v * np.sin(a)
                a = a + dt * w
                cost += (px - goal_p[0]) ** 2 + (py - goal_p[1]) ** 2
                cost += 0.2 * _wrap(a - goal_th) ** 2
            cost += 1e-6 * (w * w + (v - 0.1) ** 2)
            if cost < best_cost - 1e-15:
                best_cost = cost
                best = (v, w)
    return best


def aircraft_nominal_mpc_lite(
    x: np.ndarray, goal: np.ndarray, dt: float = 0.1, horizon: int = 5
) -> np.ndarray:
    """Short-horizon tracking input chosen by enumeration over a coarse lattice.

    Each agent independently rolls out constant (v, w) candidates over the
    horizon and picks the cheapest tracking cost; a tiny effort term breaks
    ties deterministically.
    """
    x = np.asarray(x, dtype=float)
    goal = np.asarray(goal, dtype=float)
    va, wa = _agent_lattice_input(x[0:2], x[2], goal[0:2], goal[2], dt, horizon)
    vb, wb = _agent_lattice_input(x[3:5], x[5], goal[3:5], goal[5], dt, horizon)
    return np.array([va, wa, vb, wb])
