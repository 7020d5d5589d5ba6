"""Live mission session server.

One asyncio task per session owns the mission state (single writer).
Clients reach it through request/response endpoints for lifecycle,
snapshots, and action submission, and subscribe to the event stream over
a WebSocket (or the polling endpoint). Submitted actions are queued and
applied at the next tick boundary; the acknowledgment carries the tick
they landed on.

Wire protocol (JSON everywhere):

  POST   /sessions                        create session
  GET    /sessions                        list sessions
  GET    /sessions/{sid}                  snapshot (phase, tick, state doc)
  POST   /sessions/{sid}/actions          submit one operator action
  POST   /sessions/{sid}/phase            {"phase": "scanning"} leaves Setup
  POST   /sessions/{sid}/step             advance N ticks (speed-0 sessions)
  GET    /sessions/{sid}/events?since=N   backlog slice (polling)
  WS     /sessions/{sid}/events/stream    backlog, then live events
  DELETE /sessions/{sid}                  close; persists the event log

Stream events all carry {"v": 1, "seq", "tick", "t", "type", "source"}
with source in {"drone", "agent", "system"}; seq is strictly monotone so
no two events share a (tick, seq) pair. The persisted log feeds
``trajlog.trajectory_from_events`` and reconstructs the same demonstration
record the headless runner writes. Session ids stay out of event payloads
so equal scenarios, seeds, and action scripts produce identical logs.

Silent drone failures emit no event at all: the operator is expected to
notice the stalled drone, so telling the console would defeat the
scenario. The snapshot reports the drone's last self-reported status.
"""
from __future__ import annotations

import asyncio
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field

from dronesar.advisor import Advisor
from dronesar.features import featurize
from dronesar.harness.pipeline import RewardBundle
from dronesar.scenarios import Scenario, initial_state, make_scenario
from dronesar.session import mission_metrics, summarize
from dronesar.sim import DetectionOracle, advance_inplace
from dronesar.trajlog import TrajectoryRecord, save_events
from dronesar.world import (
    NotApplicable,
    WorldError,
    action_class_in,
    action_from_dict,
    action_to_dict,
    apply_action,
)

WIRE_VERSION = 1

PHASE_SETUP = "setup"
PHASE_SCANNING = "scanning"
PHASE_DONE = "done"
PHASE_CLOSED = "closed"

_ERROR_STATUS = {
    "NotApplicable": 409,
    "OutOfBounds": 422,
    "UnknownId": 404,
    "WorldError": 409,
    "BadAction": 422,
    "SessionClosed": 410,
}


class SessionClosed(RuntimeError):
    pass


class _Submit:
    __slots__ = ("kind", "action", "elapsed", "ticks", "future")

    def __init__(self, kind, action=None, elapsed=0.0, ticks=0):
        self.kind = kind
        self.action = action
        self.elapsed = elapsed
        self.ticks = ticks
        self.future: asyncio.Future = asyncio.get_running_loop().create_future()


class Session:
    """State owner. Everything that mutates the mission runs inside
    ``_run``; endpoints only enqueue work and await the result."""

    def __init__(
        self,
        sid: str,
        scenario: Scenario,
        seed: int,
        *,
        agent_enabled: bool,
        advisor: Optional[Advisor],
        speed: float,
        log_dir: Path,
        dt: float = 1.0,
    ):
        self.id = sid
        self.scenario = scenario
        self.seed = seed
        self.agent_enabled = agent_enabled
        self.advisor = advisor
        self.speed = speed
        self.dt = dt
        self.log_dir = Path(log_dir)
        # same substream layout as the headless runner, so a live session
        # with equal seed sees the oracle behave identically
        oracle_seq, _, _ = np.random.SeedSequence(seed).spawn(3)
        self.oracle = DetectionOracle(scenario.oracle, np.random.default_rng(oracle_seq))
        self.state = initial_state(scenario)
        self.phase = PHASE_SETUP
        self.tick = 0
        self.seq = 0
        self.events: list[dict] = []
        self.initial_config: list[dict] = []
        self.queue: asyncio.Queue[_Submit] = asyncio.Queue()
        self.subscribers: list[asyncio.Queue] = []
        self.log_path: Optional[Path] = None
        self._last_found = 0
        self._closing = False
        self._task: Optional[asyncio.Task] = None

    # ------------------------------------------------------------- stream

    def _emit(self, type_: str, source: str, **payload) -> dict:
        e = {
            "v": WIRE_VERSION,
            "seq": self.seq,
            "tick": self.tick,
            "t": round(self.state.clock, 3),
            "type": type_,
            "source": source,
            **payload,
        }
        self.seq += 1
        self.events.append(e)
        for q in list(self.subscribers):
            q.put_nowait(e)
        return e

    def subscribe(self) -> tuple[list[dict], asyncio.Queue]:
        """Backlog copy plus a live queue; atomic on the event loop, so a
        subscriber never misses or double-sees an event."""
        q: asyncio.Queue = asyncio.Queue()
        self.subscribers.append(q)
        return list(self.events), q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        if q in self.subscribers:
            self.subscribers.remove(q)

    def _notify_end(self) -> None:
        for q in list(self.subscribers):
            q.put_nowait(None)  # stream sentinel

    # --------------------------------------------------------------- api

    def start(self) -> None:
        self._task = asyncio.create_task(self._run())
        self._task.add_done_callback(self._on_task_done)

    def _on_task_done(self, task: asyncio.Task) -> None:
        # last-resort net: a crashed loop must not strand awaiting clients
        if task.cancelled() or task.exception() is None:
            return
        e = task.exception()
        self._emit("session_error", "system", error=type(e).__name__, detail=str(e))
        self._finalize()

    def snapshot(self) -> dict:
        return {
            "session_id": self.id,
            "phase": self.phase,
            "tick": self.tick,
            "seed": self.seed,
            "agent_enabled": self.agent_enabled,
            "scenario": self.scenario.name,
            "state": self.state.to_dict(),
        }

    async def submit(self, action, elapsed: float) -> dict:
        if self.phase in (PHASE_DONE, PHASE_CLOSED):
            raise SessionClosed(f"session is {self.phase}")
        sub = _Submit("action", action, elapsed)
        self.queue.put_nowait(sub)
        return await sub.future

    async def start_scanning(self) -> dict:
        if self.phase in (PHASE_DONE, PHASE_CLOSED):
            raise SessionClosed(f"session is {self.phase}")
        sub = _Submit("start")
        self.queue.put_nowait(sub)
        return await sub.future

    async def step(self, ticks: int) -> dict:
        if self.phase in (PHASE_DONE, PHASE_CLOSED):
            raise SessionClosed(f"session is {self.phase}")
        sub = _Submit("step", ticks=ticks)
        self.queue.put_nowait(sub)
        return await sub.future

    async def close(self) -> dict:
        if self._task is not None and not self._task.done():
            sub = _Submit("close")
            self.queue.put_nowait(sub)
            await sub.future
        self.phase = PHASE_CLOSED
        self._notify_end()
        return {"summary": summarize(self.state), "log": str(self.log_path)}

    # ------------------------------------------------------ state changes

    def _fail(self, sub: _Submit, err: Exception) -> None:
        sub.future.set_result({"error": type(err).__name__, "detail": str(err)})

    def _apply_submit(self, sub: _Submit) -> None:
        before_open = {a.id for a in self.state.alerts if a.open}
        cls = None
        try:
            cls = action_class_in(self.state, sub.action)
            self.state = apply_action(self.state, sub.action, sub.elapsed)
        except WorldError as e:
            self._fail(sub, e)
            return
        except (TypeError, ValueError, KeyError) as e:
            # wire payloads can carry ill-typed fields that only blow up
            # deep in the world code; that is the client's mistake
            sub.future.set_result({"error": "BadAction", "detail": f"{type(e).__name__}: {e}"})
            return
        # think time consumed mission clock; let dynamics catch up
        sim_events = advance_inplace(self.state, self.scenario, self.oracle, to_clock=self.state.clock)
        self._map_sim_events(sim_events)
        if self.phase == PHASE_SETUP:
            self.initial_config.append(action_to_dict(sub.action))
        else:
            self._record_action(sub, cls)
        for a in self.state.alerts:
            if a.id in before_open and not a.open:
                self._emit("alert_update", "system", alert=a.to_dict(), update="closed")
        sub.future.set_result({"applied_tick": self.tick, "t": round(self.state.clock, 3)})

    def _record_action(self, sub: _Submit, cls: Optional[str]) -> None:
        found = self.state.targets_found()
        metrics = mission_metrics(self.state)
        metrics["reward"] = 1.0 if found > self._last_found else 0.0
        self._last_found = found
        rec = TrajectoryRecord(
            t=self.state.clock,
            action=action_to_dict(sub.action),
            action_class=cls,
            elapsed=round(sub.elapsed, 3),
            features=featurize(self.state).tolist(),
            metrics=metrics,
            digest=self.state.digest(),
        )
        self._emit("action_record", "system", record=rec.to_dict())

    def _map_sim_events(self, sim_events: list[dict]) -> None:
        for ev in sim_events:
            t = ev["type"]
            if t == "alert_raised":
                alert = ev["alert"]
                if alert["kind"] == "intelligence":
                    self._emit("intel", "system", alert=alert)
                else:
                    self._emit("alert", "drone", alert=alert)
            elif t == "alert_escalated":
                self._emit("alert_update", "drone", alert=ev["alert"], update="escalated")
            elif t == "alert_expired":
                self._emit("alert_update", "drone", alert_id=ev["alert_id"], update="expired")
            elif t == "area_complete":
                self._emit("area_complete", "drone", area_id=ev["area_id"], drone_id=ev["drone_id"])
            # malfunction_silent intentionally unmapped

    def _advance_tick(self) -> None:
        target = min(self.state.duration, self.state.clock + self.dt)
        sim_events = advance_inplace(self.state, self.scenario, self.oracle, to_clock=target)
        self.tick += 1
        self._map_sim_events(sim_events)
        if self.advisor is not None:
            advice = self.advisor.maybe_advise(self.state, self.state.clock)
            if advice is not None and advice.entries:
                self._emit("advice", "agent", advice=advice.to_dict())
        self._emit("state_delta", "system", state=self.state.to_dict())

    # ---------------------------------------------------------- main loop

    async def _run(self) -> None:
        self._emit(
            "session_created", "system",
            scenario=self.scenario.to_dict(), seed=self.seed,
            operator="live", agent_enabled=self.agent_enabled,
        )
        self._emit("state_delta", "system", state=self.state.to_dict())

        # Setup: configuration applies immediately at tick 0
        while True:
            sub = await self.queue.get()
            if sub.kind == "close":
                self._closing = True
                self._finalize()
                sub.future.set_result({})
                return
            if sub.kind == "start":
                break
            if sub.kind == "step":
                self._fail(sub, NotApplicable("still in setup"))
                continue
            self._apply_submit(sub)
            self._emit("state_delta", "system", state=self.state.to_dict())

        # entering Scanning: setup bookkeeping stays out of behavior stats,
        # same as the headless runner
        h = self.state.history
        h.actions_performed = 0
        h.action_time_sum.clear()
        h.action_time_count.clear()
        self._last_found = self.state.targets_found()
        self.phase = PHASE_SCANNING
        self._emit("phase", "system", phase=PHASE_SCANNING, initial_config=list(self.initial_config))
        sub.future.set_result({"phase": self.phase, "tick": self.tick})

        if self.speed > 0:
            await self._paced_loop()
        else:
            await self._manual_loop()

        if self.state.terminal:
            self.phase = PHASE_DONE
            self._emit("mission_end", "system", summary=summarize(self.state))
        self._finalize()

    async def _paced_loop(self) -> None:
        """Free-running wall-clock pacing: `speed` sim seconds per wall
        second; queued actions land at the next boundary."""
        next_wall = time.monotonic()
        while not self.state.terminal and not self._closing:
            while not self.queue.empty():
                queued = self.queue.get_nowait()
                if queued.kind == "close":
                    self._closing = True
                    queued.future.set_result({})
                elif queued.kind == "action":
                    self._apply_submit(queued)
                else:
                    self._fail(queued, NotApplicable(f"{queued.kind} not applicable while paced"))
            if self.state.terminal or self._closing:
                break
            self._advance_tick()
            next_wall += self.dt / self.speed
            delay = next_wall - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_wall = time.monotonic()

    async def _manual_loop(self) -> None:
        """Lockstep mode (speed 0): time only moves on step requests, so a
        scripted driver controls exactly which tick every action lands on."""
        while not self.state.terminal and not self._closing:
            sub = await self.queue.get()
            if sub.kind == "close":
                self._closing = True
                sub.future.set_result({})
            elif sub.kind == "start":
                self._fail(sub, NotApplicable("already scanning"))
            elif sub.kind == "action":
                self._apply_submit(sub)
            else:
                for _ in range(max(1, sub.ticks)):
                    if self.state.terminal:
                        break
                    self._advance_tick()
                sub.future.set_result({"tick": self.tick, "t": round(self.state.clock, 3)})

    def _finalize(self) -> None:
        if self.phase not in (PHASE_DONE, PHASE_CLOSED):
            self.phase = PHASE_DONE
        while not self.queue.empty():
            pending = self.queue.get_nowait()
            if not pending.future.done():
                self._fail(pending, SessionClosed("session is closed"))
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.log_dir / f"session_{self.id}.jsonl"
        save_events(self.events, self.log_path)
        self._notify_end()


# --------------------------------------------------------------- fastapi


class CreateSessionRequest(BaseModel):
    scenario: Optional[str] = Field(None, description="Builder name or scenario JSON path")
    seed: Optional[int] = None
    agent_enabled: bool = False
    speed: Optional[float] = Field(None, description="Sim seconds per wall second; 0 means unpaced")


class ActionRequest(BaseModel):
    action: dict
    elapsed: float = Field(0.0, ge=0.0, description="Operator think time in sim seconds")


class PhaseRequest(BaseModel):
    phase: str


class StepRequest(BaseModel):
    ticks: int = Field(1, ge=1, le=10_000)


def _http_error(name: str, detail: str) -> HTTPException:
    return HTTPException(status_code=_ERROR_STATUS.get(name, 409), detail={"error": name, "detail": detail})


def create_app(
    default_scenario: str = "default",
    default_seed: int = 0,
    default_speed: float = 1.0,
    log_dir: str = "out",
    bundle_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="dronesar session service", version=f"wire/{WIRE_VERSION}")
    sessions: dict[str, Session] = {}
    counter = {"next": 1}
    bundle: Optional[RewardBundle] = RewardBundle.load(bundle_dir) if bundle_dir else None

    def _get(sid: str) -> Session:
        if sid not in sessions:
            raise HTTPException(status_code=404, detail={"error": "UnknownSession", "detail": sid})
        return sessions[sid]

    @app.post("/sessions")
    async def create_session(req: CreateSessionRequest):
        seed = default_seed if req.seed is None else req.seed
        try:
            scenario = make_scenario(req.scenario or default_scenario, seed)
        except (OSError, KeyError, ValueError) as e:
            raise _http_error("InvalidScenario", str(e))
        advisor = None
        if req.agent_enabled:
            if bundle is None:
                raise _http_error("InvalidScenario", "agent_enabled requires a reward bundle (serve --bundle)")
            advisor = Advisor(bundle.model, bundle.steps)
        sid = f"s{counter['next']:04d}"
        counter["next"] += 1
        session = Session(
            sid, scenario, seed,
            agent_enabled=req.agent_enabled, advisor=advisor,
            speed=default_speed if req.speed is None else req.speed,
            log_dir=Path(log_dir),
        )
        sessions[sid] = session
        session.start()
        return {"session_id": sid, "phase": session.phase, "seed": seed, "scenario": scenario.name}

    @app.get("/sessions")
    async def list_sessions():
        return [
            {"session_id": s.id, "phase": s.phase, "tick": s.tick, "scenario": s.scenario.name}
            for s in sessions.values()
        ]

    @app.get("/sessions/{sid}")
    async def snapshot(sid: str):
        return _get(sid).snapshot()

    @app.post("/sessions/{sid}/actions")
    async def submit_action(sid: str, req: ActionRequest):
        session = _get(sid)
        try:
            action = action_from_dict(req.action)
        except (KeyError, ValueError) as e:
            raise HTTPException(status_code=422, detail={"error": "BadAction", "detail": str(e)})
        try:
            result = await session.submit(action, req.elapsed)
        except SessionClosed as e:
            raise _http_error("SessionClosed", str(e))
        if "error" in result:
            raise _http_error(result["error"], result["detail"])
        return result

    @app.post("/sessions/{sid}/step")
    async def step_session(sid: str, req: StepRequest):
        session = _get(sid)
        try:
            result = await session.step(req.ticks)
        except SessionClosed as e:
            raise _http_error("SessionClosed", str(e))
        if "error" in result:
            raise _http_error(result["error"], result["detail"])
        return result

    @app.post("/sessions/{sid}/phase")
    async def set_phase(sid: str, req: PhaseRequest):
        if req.phase != PHASE_SCANNING:
            raise HTTPException(status_code=422, detail={"error": "BadPhase", "detail": req.phase})
        session = _get(sid)
        try:
            result = await session.start_scanning()
        except SessionClosed as e:
            raise _http_error("SessionClosed", str(e))
        if "error" in result:
            raise _http_error(result["error"], result["detail"])
        return result

    @app.get("/sessions/{sid}/events")
    async def events_since(sid: str, since: int = 0):
        session = _get(sid)
        return {"events": session.events[since:], "next": session.seq, "phase": session.phase}

    @app.delete("/sessions/{sid}")
    async def close_session(sid: str):
        session = _get(sid)
        result = await session.close()
        del sessions[sid]
        return result

    @app.websocket("/sessions/{sid}/events/stream")
    async def event_stream(ws: WebSocket, sid: str):
        await ws.accept()
        if sid not in sessions:
            await ws.close(code=4404)
            return
        session = sessions[sid]
        backlog, q = session.subscribe()
        try:
            for e in backlog:
                await ws.send_json(e)
            while True:
                e = await q.get()
                if e is None:
                    break
                await ws.send_json(e)
            await ws.close()
        except WebSocketDisconnect:
            pass
        finally:
            session.unsubscribe(q)

    return app
