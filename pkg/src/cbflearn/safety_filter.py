"""Minimally invasive CBF-QP safety filter and closed-loop simulation.

At each step the filter solves

    min ||u - u_nom||^2   s.t.  <grad h(x), g(x) u> >= -alpha h(x) - <grad h(x), f(x)>,
                                u in the input box,

returning the nominal input whenever it already satisfies the barrier
constraint. An infeasible QP (constraint incompatible with the box) falls back
to the box input maximizing the barrier derivative and flags the step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from cbflearn.dynamics import (
    ControlAffineSystem,
    Trajectory,
    aircraft_pairwise_distance,
    step_rk4,
)
from cbflearn.qp import QuadraticProgram, solve_qp

__all__ = ["FilterConfig", "FilterStep", "SimResult", "cbf_qp_control", "simulate_filtered"]


@dataclass
class FilterConfig:
    """Barrier model (anything with value(x)/grad(x)), class-K slope, QP settings."""

    model: object
    alpha_coef: Optional[float] = None
    qp_tol: float = 1e-8
    input_lower: Optional[np.ndarray] = None  # default: the system box
    input_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.qp_tol <= 0:
            raise ValueError("qp tolerance must be positive")
        if self.alpha_coef is None:
            self.alpha_coef = getattr(self.model, "alpha_coef", 1.0)

    def box(self, sys: ControlAffineSystem):
        lo = self.input_lower if self.input_lower is not None else sys.input_lower
        hi = self.input_upper if self.input_upper is not None else sys.input_upper
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


@dataclass
class FilterStep:
    u: np.ndarray
    status: str
    violation: bool
    constraint_row: np.ndarray
    constraint_lb: float


def filter_step(cfg: FilterConfig, sys: ControlAffineSystem, x, u_nom) -> FilterStep:
    x = np.asarray(x, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state passed to the safety filter")
    lo, hi = cfg.box(sys)
    grad = np.asarray(cfg.model.grad(x), dtype=float)
    h = float(cfg.model.value(x))
    row = sys.input_matrix(x).T @ grad
    lb_row = -cfg.alpha_coef * h - float(grad @ sys.drift(x))

    m = sys.input_dim
    A = np.vstack([row[None, :], np.eye(m)])
    lb = np.concatenate([[lb_row], lo])
    ub = np.concatenate([[np.inf], hi])
    qp = QuadraticProgram(P=2.0 * np.eye(m), q=-2.0 * u_nom, A=A, lb=lb, ub=ub)
    sol = solve_qp(qp, tol=cfg.qp_tol, max_iter=20000)
    if sol.status == "optimal":
        u = np.clip(sol.x, lo, hi)
        return FilterStep(u=u, status="optimal", violation=False,
                          constraint_row=row, constraint_lb=lb_row)
    # constraint incompatible with the box: maximize the barrier derivative
    u = np.where(row > 0, hi, np.where(row < 0, lo, np.clip(u_nom, lo, hi)))
    return FilterStep(u=u, status=sol.status, violation=True,
                      constraint_row=row, constraint_lb=lb_row)


def cbf_qp_control(cfg: FilterConfig, sys: ControlAffineSystem, x, u_nom) -> np.ndarray:
    """Filtered input at state x; see filter_step for diagnostics."""
    return filter_step(cfg, sys, x, u_nom).u


@dataclass
class SimResult:
    trajectory: Trajectory
    h_trace: np.ndarray  # h along states, length steps + 1
    u_nom_trace: np.ndarray
    u_filtered_trace: np.ndarray
    violations: np.ndarray  # bool per step
    min_pairwise_distance: Optional[float] = None
    meta: dict = field(default_factory=dict)


def simulate_filtered(
    cfg: FilterConfig,
    sys: ControlAffineSystem,
    nominal: Callable[[float, np.ndarray], np.ndarray],
    x0,
    dt: float,
    steps: int,
    episode_id: str = "",
) -> SimResult:
    """Closed-loop rollout under the CBF-QP filter, recording barrier traces."""
    x = np.asarray(x0, dtype=float).copy()
    states = np.empty((steps + 1, sys.state_dim))
    inputs = np.empty((steps, sys.input_dim))
    u_noms = np.empty((steps, sys.input_dim))
    h_trace = np.empty(steps + 1)
    violations = np.zeros(steps, dtype=bool)
    states[0] = x
    h_trace[0] = float(cfg.model.value(x))
    for k in range(steps):
        u_nom = np.asarray(nominal(k * dt, x), dtype=float)
        res = filter_step(cfg, sys, x, u_nom)
        x = step_rk4(sys, x, res.u, dt)
        inputs[k] = res.u
        u_noms[k] = u_nom
        violations[k] = res.violation
        states[k + 1] = x
        h_trace[k + 1] = float(cfg.model.value(x))
    traj = Trajectory(dt=dt, states=states, inputs=inputs.reshape(steps, sys.input_dim),
                      episode_id=episode_id)
    min_dist = None
    if sys.state_dim == 6 and sys.label == "aircraft":
        min_dist = float(np.min(aircraft_pairwise_distance(states)))
    return SimResult(
        trajectory=traj,
        h_trace=h_trace,
        u_nom_trace=u_noms,
        u_filtered_trace=inputs,
        violations=violations,
        min_pairwise_distance=min_dist,
    )
