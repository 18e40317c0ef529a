"""Real-time demonstration-collection backend for the two-aircraft simulator.

The server owns the state: clients submit absolute (v, omega) setpoints per
agent, which are clipped to the input box and held between updates (zero-order
hold); the dynamics advance only through the shared fixed-step integrator, so
recorded episodes replay bit-identically through the dynamics module. Each
session serializes its mutations behind a lock; sessions are independent.

HTTP: POST /session, GET /session/{id}, POST /session/{id}/save.
WS /session/{id}/stream: client messages {"type": "controls"|"record"|"save"|
"step"}, server pushes {"type": "state", ...} at the tick rate (or on demand
for sessions created with auto_tick=false).
"""

from __future__ import annotations

import asyncio
import itertools
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from cbflearn.dynamics import (
    Trajectory,
    aircraft_pairwise_distance,
    make_aircraft,
    step_rk4,
    trajectory_records,
)

__all__ = ["Session", "DemoService", "create_app", "HEAD_ON_PRESET"]

HEAD_ON_PRESET = np.array([1.0, 0.0, np.pi, -1.0, 0.0, 0.0])


class SessionNotFound(KeyError):
    pass


@dataclass
class Session:
    id: str
    x: np.ndarray
    dt: float
    tick: int = 0
    recording: bool = False
    held_input: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.0, 0.1, 0.0]))
    buffer: list = field(default_factory=list)  # (state, input) pairs
    episode_count: int = 0
    auto_tick: bool = True
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)


class DemoService:
    """Session management and fixed-tick stepping; thread-safe per session."""

    def __init__(self, out_root="runs/episodes", dt: float = 0.05, d_s: float = 0.5,
                 model=None):
        self.system = make_aircraft()
        self.dt = dt
        self.d_s = d_s
        self.model = model
        self.out_root = Path(out_root)
        self._sessions: dict[str, Session] = {}
        self._ids = itertools.count(1)
        self._registry_lock = threading.Lock()

    # -- session lifecycle ---------------------------------------------------

    def create_session(self, x0=None, preset: Optional[str] = None,
                       auto_tick: bool = True) -> Session:
        if preset == "head_on":
            x = HEAD_ON_PRESET.copy()
        elif x0 is not None:
            x = np.asarray(x0, dtype=float)
            if x.shape != (6,) or not np.all(np.isfinite(x)):
                raise ValueError("x0 must be a finite 6-vector")
        else:
            raise ValueError("provide x0 or preset='head_on'")
        with self._registry_lock:
            sid = f"s{next(self._ids):04d}"
            session = Session(id=sid, x=x, dt=self.dt, auto_tick=auto_tick)
            self._sessions[sid] = session
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise SessionNotFound(session_id) from None

    # -- operations ------------------------------------------------------------

    def submit_controls(self, session_id: str, agent: str, v: float, omega: float) -> dict:
        s = self.get(session_id)
        if agent not in ("a", "b"):
            raise ValueError("agent must be 'a' or 'b'")
        lo, hi = self.system.input_lower, self.system.input_upper
        base = 0 if agent == "a" else 2
        with s.lock:
            s.held_input[base] = float(np.clip(v, lo[base], hi[base]))
            s.held_input[base + 1] = float(np.clip(omega, lo[base + 1], hi[base + 1]))
            held = s.held_input.copy()
        return {"agent": agent, "v": held[base], "omega": held[base + 1]}

    def set_recording(self, session_id: str, on: bool) -> None:
        s = self.get(session_id)
        with s.lock:
            s.recording = bool(on)

    def tick(self, session_id: str) -> dict:
        """Advance one fixed step with the held inputs; returns telemetry."""
        s = self.get(session_id)
        with s.lock:
            u = s.held_input.copy()
            if s.recording:
                s.buffer.append((s.x.copy(), u.copy()))
            s.x = step_rk4(self.system, s.x, u, s.dt)
            s.tick += 1
            return self.snapshot(session_id)

    def snapshot(self, session_id: str) -> dict:
        s = self.get(session_id)
        with s.lock:
            out = {
                "id": s.id,
                "tick": s.tick,
                "t": s.tick * s.dt,
                "dt": s.dt,
                "x": [float(v) for v in s.x],
                "held_input": [float(v) for v in s.held_input],
                "distance": float(aircraft_pairwise_distance(s.x)),
                "recording": s.recording,
                "buffered": len(s.buffer),
                "d_s": self.d_s,
            }
            if self.model is not None:
                out["h"] = float(self.model.value(s.x))
            return out

    def save_episode(self, session_id: str, label: str = "") -> dict:
        s = self.get(session_id)
        with s.lock:
            if not s.buffer:
                raise ValueError("episode buffer is empty")
            states = np.array([x for x, _ in s.buffer] + [s.x])
            inputs = np.array([u for _, u in s.buffer])
            violation = bool(np.min(aircraft_pairwise_distance(states)) < self.d_s)
            episode_id = label or f"{s.id}-ep{s.episode_count:03d}"
            traj = Trajectory(dt=s.dt, states=states, inputs=inputs, episode_id=episode_id)
            self.out_root.mkdir(parents=True, exist_ok=True)
            path = self.out_root / f"{s.id}_ep{s.episode_count:03d}.jsonl"
            meta = {
                "violation": violation,
                "label": label,
                "dt": s.dt,
                "d_s": self.d_s,
            }
            with open(path, "w") as fh:
                fh.write(json.dumps({"episode": episode_id, "meta": meta}) + "\n")
                for line in trajectory_records(traj):
                    fh.write(line + "\n")
            s.buffer.clear()
            s.episode_count += 1
        return {"path": str(path), "violation": violation, "episode": episode_id}


def create_app(service: Optional[DemoService] = None, tick_rate: float = 20.0,
               ui_dir: Optional[str] = None):
    """FastAPI app over a DemoService; the WS stream pushes at tick_rate Hz."""
    from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

    if service is None:
        service = DemoService()
    app = FastAPI(title="cbflearn demonstration service")
    app.state.service = service

    def _get_or_404(session_id: str) -> Session:
        try:
            return service.get(session_id)
        except SessionNotFound:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")

    @app.post("/session")
    async def create_session(payload: dict):
        try:
            session = service.create_session(
                x0=payload.get("x0"),
                preset=payload.get("preset"),
                auto_tick=bool(payload.get("auto_tick", True)),
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return service.snapshot(session.id)

    @app.get("/session/{session_id}")
    async def get_session(session_id: str):
        _get_or_404(session_id)
        return service.snapshot(session_id)

    @app.post("/session/{session_id}/save")
    async def save_episode(session_id: str, payload: Optional[dict] = None):
        _get_or_404(session_id)
        try:
            return service.save_episode(session_id, (payload or {}).get("label", ""))
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.websocket("/session/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        try:
            session = service.get(session_id)
        except SessionNotFound:
            await ws.close(code=4404)
            return
        await ws.accept()
        await ws.send_json({"type": "state", **service.snapshot(session_id)})

        async def pusher():
            while True:
                await asyncio.sleep(1.0 / tick_rate)
                if session.auto_tick:
                    await ws.send_json({"type": "state", **service.tick(session_id)})

        task = asyncio.create_task(pusher())
        try:
            while True:
                msg = await ws.receive_json()
                kind = msg.get("type")
                if kind == "controls":
                    try:
                        ack = service.submit_controls(
                            session_id, msg.get("agent", ""), float(msg.get("v", 0.1)),
                            float(msg.get("omega", 0.0)),
                        )
                        await ws.send_json({"type": "ack", **ack})
                    except ValueError as exc:
                        await ws.send_json({"type": "error", "message": str(exc)})
                elif kind == "record":
                    service.set_recording(session_id, bool(msg.get("on", True)))
                    await ws.send_json({"type": "state", **service.snapshot(session_id)})
                elif kind == "step":
                    n = int(msg.get("n", 1))
                    out = None
                    for _ in range(max(1, n)):
                        out = service.tick(session_id)
                    await ws.send_json({"type": "state", **out})
                elif kind == "save":
                    try:
                        result = service.save_episode(session_id, msg.get("label", ""))
                        await ws.send_json({"type": "saved", **result})
                    except ValueError as exc:
                        await ws.send_json({"type": "error", "message": str(exc)})
                else:
                    await ws.send_json(
                        {"type": "error", "message": f"unknown message type {kind!r}"}
                    )
        except WebSocketDisconnect:
            pass
        finally:
            task.cancel()

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
