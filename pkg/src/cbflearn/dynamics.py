"""Control-affine systems, benchmark models, and fixed-step integration.

Systems have the form ``xdot = f(x) + g(x) u`` with a box constraint on the
input. Two benchmark systems are provided: a planar feedback-linearizable
system and a two-aircraft unicycle model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ControlAffineSystem",
    "Trajectory",
    "DynamicsError",
    "eval_vector_field",
    "step_rk4",
    "rollout",
    "make_planar",
    "make_aircraft",
    "save_trajectories",
    "load_trajectories",
]


class DynamicsError(RuntimeError):
    """Raised on contract violations and failed integrations."""


@dataclass(frozen=True)
class ControlAffineSystem:
    """Dynamics ``xdot = drift(x) + input_matrix(x) @ u`` with input box bounds.

    ``vf_jacobian(x, u)``, when provided, returns the n-by-n Jacobian of the
    closed vector field with respect to x; callers fall back to finite
    differences when it is None.
    """

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]
    input_lower: np.ndarray
    input_upper: np.ndarray
    label: str = ""
    vf_jacobian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        lo = np.asarray(self.input_lower, dtype=float)
        hi = np.asarray(self.input_upper, dtype=float)
        if lo.shape != (self.input_dim,) or hi.shape != (self.input_dim,):
            raise DynamicsError("input bounds must have shape (input_dim,)")
        if np.any(lo > hi):
            raise DynamicsError("input_lower must be <= input_upper componentwise")
        object.__setattr__(self, "input_lower", lo)
        object.__setattr__(self, "input_upper", hi)

    def clip_input(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.input_lower, self.input_upper)


@dataclass
class Trajectory:
    """A rollout sampled at a fixed step: len(states) == len(inputs) + 1."""

    dt: float
    states: np.ndarray  # (T+1, n)
    inputs: np.ndarray  # (T, m)
    episode_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.size == 0:
            self.inputs = self.inputs.reshape(0, self.inputs.shape[-1] if self.inputs.ndim == 2 else 0)
        if self.states.ndim != 2 or self.inputs.ndim != 2:
            raise DynamicsError("states and inputs must be 2-D arrays")
        if len(self.states) != len(self.inputs) + 1:
            raise DynamicsError("need len(states) == len(inputs) + 1")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.inputs))):
            raise DynamicsError("non-finite entries in trajectory")

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))


def _check_dims(sys: ControlAffineSystem, x: np.ndarray, u: np.ndarray) -> tuple:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (sys.state_dim,):
        raise DynamicsError(f"state has shape {x.shape}, expected ({sys.state_dim},)")
    if u.shape != (sys.input_dim,):
        raise DynamicsError(f"input has shape {u.shape}, expected ({sys.input_dim},)")
    return x, u


def eval_vector_field(sys: ControlAffineSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate f(x) + g(x) u."""
    x, u = _check_dims(sys, x, u)
    return sys.drift(x) + sys.input_matrix(x) @ u


def step_rk4(sys: ControlAffineSystem, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step with u held constant over the step."""
    if dt <= 0:
        raise DynamicsError("dt must be positive")
    x, u = _check_dims(sys, x, u)
    k1 = sys.drift(x) + sys.input_matrix(x) @ u
    x2 = x + 0.5 * dt * k1
    k2 = sys.drift(x2) + sys.input_matrix(x2) @ u
    x3 = x + 0.5 * dt * k2
    k3 = sys.drift(x3) + sys.input_matrix(x3) @ u
    x4 = x + dt * k3
    k4 = sys.drift(x4) + sys.input_matrix(x4) @ u
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DynamicsError("integration produced non-finite state")
    return out


def rollout(
    sys: ControlAffineSystem,
    x0: np.ndarray,
    controller: Callable[[float, np.ndarray], np.ndarray],
    dt: float,
    steps: int,
    episode_id: str = "",
) -> Trajectory:
    """Closed-loop rollout; controller outputs are clipped into the input box."""
    if steps < 1:
        raise DynamicsError("steps must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    states = np.empty((steps + 1, sys.state_dim))
    inputs = np.empty((steps, sys.input_dim))
    states[0] = x
    for k in range(steps):
        u = np.asarray(controller(k * dt, x), dtype=float)
        if u.shape != (sys.input_dim,) or not np.all(np.isfinite(u)):
            raise DynamicsError(f"controller returned invalid input at step {k}")
        u = sys.clip_input(u)
        x = step_rk4(sys, x, u, dt)
        inputs[k] = u
        states[k + 1] = x
    return Trajectory(dt=dt, states=states, inputs=inputs, episode_id=episode_id)


# ---------------------------------------------------------------------------
# Benchmark systems
# ---------------------------------------------------------------------------

_PLANAR_BOX = 1e9  # effectively unconstrained input


def make_planar(delta: float) -> ControlAffineSystem:
    """Planar system xdot_i = -x_i + (x_i^2 + delta) u_i, i = 1, 2.

    delta > 0 makes the system globally feedback linearizable. The input is
    unconstrained (represented by a +-1e9 box).
    """
    if delta <= 0:
        raise DynamicsError("delta must be positive")

    def drift(x):
        return -x

    def input_matrix(x):
        return np.diag(x * x + delta)

    def vf_jacobian(x, u):
        return -np.eye(2) + np.diag(2.0 * x * u)

    return ControlAffineSystem(
        state_dim=2,
        input_dim=2,
        drift=drift,
        input_matrix=input_matrix,
        input_lower=np.full(2, -_PLANAR_BOX),
        input_upper=np.full(2, _PLANAR_BOX),
        label=f"planar(delta={delta})",
        vf_jacobian=vf_jacobian,
    )


def make_aircraft() -> ControlAffineSystem:
    """Two-aircraft unicycle model.

    State [pxa, pya, tha, pxb, pyb, thb]; input [va, wa, vb, wb] with
    0.1 <= v <= 1.0 and -1 <= w <= 1 per agent. Kinematics are drift free:
    each agent moves with px' = v cos(th), py' = v sin(th), th' = w.
    """

    def drift(x):
        return np.zeros(6)

    def input_matrix(x):
        g = np.zeros((6, 4))
        g[0, 0] = np.cos(x[2])
        g[1, 0] = np.sin(x[2])
        g[2, 1] = 1.0
        g[3, 2] = np.cos(x[5])
        g[4, 2] = np.sin(x[5])
        g[5, 3] = 1.0
        return g

    def vf_jacobian(x, u):
        jac = np.zeros((6, 6))
        jac[0, 2] = -u[0] * np.sin(x[2])
        jac[1, 2] = u[0] * np.cos(x[2])
        jac[3, 5] = -u[2] * np.sin(x[5])
        jac[4, 5] = u[2] * np.cos(x[5])
        return jac

    return ControlAffineSystem(
        state_dim=6,
        input_dim=4,
        drift=drift,
        input_matrix=input_matrix,
        input_lower=np.array([0.1, -1.0, 0.1, -1.0]),
        input_upper=np.array([1.0, 1.0, 1.0, 1.0]),
        label="aircraft",
        vf_jacobian=vf_jacobian,
    )


def aircraft_pairwise_distance(x: np.ndarray):
    """Planar distance between the two aircraft of a 6-D joint state.

    Accepts a single state or a batch; returns a scalar or an array.
    """
    x = np.asarray(x, dtype=float)
    d = np.hypot(x[..., 0] - x[..., 3], x[..., 1] - x[..., 4])
    return float(d) if d.ndim == 0 else d


# ---------------------------------------------------------------------------
# Trajectory serialization (JSON Lines)
#
# One record per step: {"episode", "k", "t", "x", "u"}, fields in that order,
# floats printed with 17 significant digits (lossless round trip). A terminal
# record with u = [] carries the final state.
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _vec(v: np.ndarray) -> str:
    return "[" + ", ".join(_fmt(c) for c in v) + "]"


def trajectory_records(traj: Trajectory) -> list[str]:
    """Serialize one trajectory to JSONL record strings."""
    eid = json.dumps(traj.episode_id)
    lines = []
    for k in range(traj.steps):
        lines.append(
            f'{{"episode": {eid}, "k": {k}, "t": {_fmt(k * traj.dt)}, '
            f'"x": {_vec(traj.states[k])}, "u": {_vec(traj.inputs[k])}}}'
        )
    k = traj.steps
    lines.append(
        f'{{"episode": {eid}, "k": {k}, "t": {_fmt(k * traj.dt)}, '
        f'"x": {_vec(traj.states[k])}, "u": []}}'
    )
    return lines


def save_trajectories(path, trajectories: Sequence[Trajectory]) -> None:
    with open(path, "w") as fh:
        for traj in trajectories:
            for line in trajectory_records(traj):
                fh.write(line + "\n")


def load_trajectories(path) -> list[Trajectory]:
    """Load trajectories written by save_trajectories, grouped by episode."""
    episodes: dict[str, dict] = {}
    order: list[str] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DynamicsError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if "meta" in rec:
                # optional per-episode metadata record (see demo service)
                ep = episodes.setdefault(rec["episode"], {"rows": [], "meta": {}})
                if rec["episode"] not in order:
                    order.append(rec["episode"])
                ep["meta"] = rec["meta"]
                continue
            for key in ("episode", "k", "t", "x", "u"):
                if key not in rec:
                    raise DynamicsError(f"{path}: line {lineno}: missing field '{key}'")
            ep = episodes.setdefault(rec["episode"], {"rows": [], "meta": {}})
            if rec["episode"] not in order:
                order.append(rec["episode"])
            ep["rows"].append((lineno, rec))

    out = []
    for eid in order:
        rows = episodes[eid]["rows"]
        rows.sort(key=lambda item: item[1]["k"])
        states = [r["x"] for _, r in rows]
        inputs = [r["u"] for _, r in rows if len(r["u"]) > 0]
        if len(inputs) == len(states):
            raise DynamicsError(f"episode '{eid}' lacks a terminal record (u == [])")
        ts = [r["t"] for _, r in rows]
        dt = ts[1] - ts[0] if len(ts) > 1 else 0.0
        out.append(
            Trajectory(
                dt=dt,
                states=np.array(states),
                inputs=np.array(inputs),
                episode_id=eid,
                meta=episodes[eid]["meta"],
            )
        )
    return out
