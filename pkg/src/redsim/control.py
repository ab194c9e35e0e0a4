"""Control surface: the boundary external tools talk to.

ControlAPI is the complete set of operations; everything it returns is
JSON-friendly, and nothing it exposes bypasses the attacker's knowledge
store (ground truth stays inside the engine).  EngineThread runs the world
on a dedicated thread and is the only thing that mutates it; SocketService
carries the same operations over newline-delimited JSON on TCP.
"""
from __future__ import annotations

import json
import logging
import socketserver
import threading
from typing import Any

from . import agents, model, scenario, sched
from .errors import ApiError, SimError
from .model import AssetKind, AssetTemplate
from .world import World

logger = logging.getLogger(__name__)


class ControlAPI:
    """Operations over one world.  Call on the engine track only; external
    threads go through EngineThread.call."""

    def __init__(self, world: World):
        self.world = world
        self._boxes: dict[str, dict] = {}

    # -- introspection --

    def describe(self) -> dict[str, Any]:
        w = self.world
        return {
            "name": w.scenario_name,
            "seed": w.seed,
            "clock": round(w.clock, 3),
            "machines": len(w.machines),
            "networks": len(w.segments),
            "local_agent": w.local_agent,
            "event_seq": w._seq,
        }

    def stats(self) -> dict[str, Any]:
        w = self.world
        return {
            "clock": round(w.clock, 3),
            "syscalls_executed": w.stats.syscalls_executed,
            "machine_runs": w.stats.machine_runs,
            "sleeps": w.stats.sleeps,
            "runs_to_sleep": w.sched_config.runs_to_sleep,
            "route_calls": w.route_calls,
            "connections": w.connections,
            "arrivals": w.arrivals,
            "agents_alive": sum(1 for a in w.agents.values() if a.alive),
            "noise_events": len(w.noise.events),
        }

    def list_agents(self) -> list[dict[str, Any]]:
        return [agent.to_dict() for agent in self.world.agents.values()]

    def list_actions(self) -> list[dict[str, Any]]:
        return [self.world.actions[name].describe()
                for name in sorted(self.world.actions)]

    def list_vulnerabilities(self) -> list[dict[str, Any]]:
        db = self.world.vulndb
        return [{"id": vid, "name": db.entries[vid].name,
                 "locality": db.entries[vid].locality,
                 "category": db.entries[vid].category,
                 "noise": db.entries[vid].noise}
                for vid in db.order]

    # -- knowledge --

    def query_env(self, kind: str | None = None,
                  attrs: dict[str, Any] | None = None) -> list[dict[str, Any]]:
        if kind is None:
            assets = self.world.env.assets()
        else:
            try:
                template = AssetTemplate(AssetKind(kind), attrs or {})
            except ValueError:
                raise ApiError("bad-kind", f"unknown asset kind {kind!r}") from None
            assets = [a for a, _ in self.world.env.query(template)]
        out = [a.to_dict() for a in assets]
        out.sort(key=lambda d: (d["kind"], json.dumps(d["attributes"], sort_keys=True)))
        return out

    def noise_report(self) -> list[dict[str, Any]]:
        return [ev.to_dict() for ev in self.world.noise.events]

    def events_since(self, since: int = 0, limit: int = 1000) -> list[dict[str, Any]]:
        return [e.to_dict() for e in self.world.events if e.seq > since][:limit]

    # -- acting --

    def estimate_cost(self, agent: str, action: str,
                      params: dict[str, Any] | None = None) -> dict[str, Any]:
        self.world.find_alive_agent(agent)
        act = self.world.actions.get(action)
        if act is None:
            raise ApiError("unknown-action", f"no action named {action!r}")
        return model.estimate_cost(act.spec, self.world.env, params).to_dict()

    def execute_action(self, agent: str, action: str,
                       params: dict[str, Any] | None = None,
                       request_id: str | None = None) -> dict[str, str]:
        request_id = request_id or self.world.next_request_id()
        action_id, box = self.world.start_action(agent, action, params, request_id)
        self._boxes[action_id] = box
        return {"request_id": request_id, "action_id": action_id}

    def action_result(self, action_id: str) -> dict[str, Any] | None:
        box = self._boxes.get(action_id)
        if box is None:
            raise ApiError("unknown-action-id", f"no action {action_id!r} was started")
        outcome = box.get("outcome")
        return None if outcome is None else outcome.to_dict()

    def run_action(self, agent: str, action: str,
                   params: dict[str, Any] | None = None) -> dict[str, Any]:
        started = self.execute_action(agent, action, params)
        self.world.pump()
        result = self.action_result(started["action_id"])
        if result is None:
            raise ApiError("still-running", "engine went idle without an outcome")
        return {**started, "outcome": result}

    def cleanup(self, agent: str) -> dict[str, int]:
        removed = self.world.cleanup(agent)
        return {"removed": len(removed)}

    def shell(self, agent: str, command: str) -> dict[str, str]:
        output = agents.agent_shell(self.world, agent, command)
        return {"output": output.decode("utf-8", "replace")}

    def syscall(self, chain: list[str], opcode: str,
                args: list[Any] | None = None) -> dict[str, Any]:
        """Proxy one raw syscall down an agent chain."""
        request = agents.SyscallRequest(opcode, list(args or []))
        response = agents.proxy_syscall(self.world, list(chain), request)
        results = [v.decode("utf-8", "replace") if isinstance(v, bytes) else v
                   for v in response.results]
        return {"status": response.status, "results": results}

    def install_agent(self, machine: str, method: str, parent: str,
                      port: int | None = None) -> dict[str, Any]:
        agent = agents.install_agent(
            self.world, machine, agents.ConnectionMethod(method, port), parent)
        return agent.to_dict()

    def snapshot(self) -> dict[str, Any]:
        self.world.pump()
        return scenario.take_snapshot(self.world)


class EngineThread:
    """Runs a world on its own thread; everything else posts work to it.

    Between bursts of work the thread naps to give arrivals a chance to
    batch up; how often is controlled by the adaptive runs-to-sleep knob,
    which doubles when a nap made commands wait and decays otherwise.
    """

    def __init__(self, world: World, name: str = "engine"):
        self.world = world
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._stop = threading.Event()

    def start(self) -> "EngineThread":
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        self.world.post(lambda: None)  # kick the queue so the loop notices
        self._thread.join(timeout)

    def call(self, fn, timeout: float = 30.0) -> Any:
        """Run `fn()` on the engine track and return its value."""
        return self.world.post(fn).wait(timeout)

    def _run(self) -> None:
        world = self.world
        config = world.sched_config
        while not self._stop.is_set():
            world.pump()
            arrivals_before = world.arrivals
            if sched.idle_sleep(config, world.stats):
                world.stats.syscalls_lost_per_sleep = world.arrivals - arrivals_before
                sched.adjust_runs_to_sleep(config, world.stats)
                continue
            world.drain_one(timeout=config.sleep_ms / 1000.0)


# --- line-JSON service -------------------------------------------------------------

def _error_payload(exc: BaseException) -> dict[str, str]:
    if isinstance(exc, ApiError):
        return {"code": exc.code, "message": str(exc)}
    return {"code": type(exc).__name__, "message": str(exc)}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        service: SocketService = self.server.service  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                self._send({"id": None, "ok": False, "error":
                            {"code": "bad-json", "message": str(exc)}})
                continue
            msg_id = msg.get("id")
            op = msg.get("op")
            args = msg.get("args") or {}
            if op == "stream_events":
                self._send({"id": msg_id, "ok": True, "value": {"streaming": True}})
                self._stream(service, int(args.get("since", 0)))
                return
            try:
                value = service.dispatch(op, args)
                self._send({"id": msg_id, "ok": True, "value": value})
            except Exception as exc:  # noqa: BLE001 - all errors go to the client
                self._send({"id": msg_id, "ok": False, "error": _error_payload(exc)})

    def _send(self, payload: dict[str, Any]) -> bool:
        try:
            self.wfile.write(json.dumps(payload, sort_keys=True,
                                        separators=(",", ":")).encode() + b"\n")
            self.wfile.flush()
            return True
        except OSError:
            return False

    def _stream(self, service: "SocketService", since: int) -> None:
        last = since
        while not service.closed.is_set():
            batch = service.engine.call(
                lambda: service.api.events_since(last, limit=500))
            for event in batch:
                if not self._send({"event": event}):
                    return
                last = event["seq"]
            if not batch:
                service.world.wait_events(last, timeout=0.25)


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class SocketService:
    """Newline-delimited JSON over TCP: {"id", "op", "args"} in,
    {"id", "ok", "value"|"error"} out.  `stream_events` switches the
    connection into a one-way event feed."""

    def __init__(self, world: World, engine: EngineThread,
                 host: str = "127.0.0.1", port: int = 0):
        self.world = world
        self.engine = engine
        self.api = ControlAPI(world)
        self.closed = threading.Event()
        self._server = _Server((host, port), _Handler)
        self._server.service = self  # type: ignore[attr-defined]
        self.address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="control-service", daemon=True)

    def dispatch(self, op: str, args: dict[str, Any]) -> Any:
        method = getattr(self.api, op, None)
        if op.startswith("_") or method is None or not callable(method):
            raise ApiError("unknown-op", f"no operation named {op!r}")
        return self.engine.call(lambda: method(**args))

    def start(self) -> "SocketService":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.closed.set()
        self._server.shutdown()
        self._server.server_close()


def serve(world: World, host: str = "127.0.0.1", port: int = 0) -> SocketService:
    engine = EngineThread(world).start()
    service = SocketService(world, engine, host, port).start()
    service._engine_owned = engine  # type: ignore[attr-defined]
    return service


def shutdown(service: SocketService) -> None:
    service.stop()
    engine = getattr(service, "_engine_owned", None)
    if engine is not None:
        engine.stop()
