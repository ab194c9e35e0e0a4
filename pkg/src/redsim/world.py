"""The simulated world: topology, clock, knowledge, events, and the command
queue that external tracks use to reach the engine.

All mutation happens on the engine's single logical execution track; real
threads (control service, socket bridges) only enqueue work that the engine
drains at round boundaries.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import logging
import queue as queuelib
import random
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from . import net, sched
from .errors import (DeadAgentError, SimError, UnknownActionError,
                     ValidationError)
from .exploitdb import VulnDB
from .model import (ActionOutcome, Asset, Cost, EnvironmentKnowledge,
                    NoiseCategory, NoiseEvent, NoiseLog, agent_presence)
from .vfs import FileCache, TemplateFS

logger = logging.getLogger(__name__)


@dataclass
class WorldConfig:
    filtered_timeout_ms: float = 3000.0
    reboot_ms: float = 5000.0
    app_restart_ms: float = 1000.0
    fingerprint_accuracy: float = 0.9
    cache_capacity: int = 1024


@dataclass
class EventRecord:
    seq: int
    time: float
    category: str  # asset | noise | agent | machine-state | action-result
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "time": self.time,
                "category": self.category, "payload": self.payload}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class Timer:
    __slots__ = ("at", "seq", "kind", "data", "canceled")

    def __init__(self, at: float, seq: int, kind: str, data: dict[str, Any]):
        self.at = at
        self.seq = seq
        self.kind = kind
        self.data = data
        self.canceled = False

    def cancel(self) -> None:
        self.canceled = True

    def __lt__(self, other: "Timer") -> bool:
        return (self.at, self.seq) < (other.at, other.seq)


class Reply:
    """Completion slot for a command posted from another thread."""

    def __init__(self):
        self._event = threading.Event()
        self.value: Any = None
        self.error: BaseException | None = None

    def resolve(self, value: Any) -> None:
        self.value = value
        self._event.set()

    def reject(self, error: BaseException) -> None:
        self.error = error
        self._event.set()

    def wait(self, timeout: float | None = None) -> Any:
        if not self._event.wait(timeout):
            raise TimeoutError("engine did not answer in time")
        if self.error is not None:
            raise self.error
        return self.value


class World:
    """Owns every simulated machine plus the attacker's view of them."""

    def __init__(self, seed: int, config: WorldConfig | None = None,
                 sched_config: sched.SchedulerConfig | None = None,
                 action_registry: dict[str, Any] | None = None):
        self.seed = seed
        self.rng = random.Random(seed)
        self.scenario_name = "unnamed"
        self.config = config or WorldConfig()
        self.sched_config = sched_config or sched.SchedulerConfig()
        self.clock = 0.0
        self.machines: dict[str, net.Machine] = {}
        self.segments: dict[str, net.NetworkSegment] = {}
        self.templates: dict[str, TemplateFS] = {}
        self.cache = FileCache(self.config.cache_capacity)
        self._machine_index: dict[str, int] = {}
        self._by_address: dict[str, net.Machine] = {}
        self.env = EnvironmentKnowledge()
        self.agents: dict[str, Any] = {}
        self.local_agent: str | None = None
        self.noise = NoiseLog()
        self.events: list[EventRecord] = []
        self._event_cv = threading.Condition()
        self._seq = 0
        self.action_log: dict[str, dict[str, str]] = {}
        self.stats = sched.RunStats()
        self.route_calls = 0
        self.connections = 0
        self.bridges: list[Any] = []
        self.vulndb = VulnDB([])
        self.signature_db: Any = None
        self._timers: list[Timer] = []
        self._timer_seq = 0
        self._queue: queuelib.SimpleQueue = queuelib.SimpleQueue()
        self.arrivals = 0
        self._maybe_runnable: set[str] = set()
        self._agent_seq = 0
        self._action_seq = 0
        self._request_seq = 0
        if action_registry is None:
            from .actions import REGISTRY
            action_registry = REGISTRY
        self.actions = action_registry

    # -- topology -------------------------------------------------------------

    def add_segment(self, segment: net.NetworkSegment) -> net.NetworkSegment:
        if segment.id in self.segments:
            raise ValidationError(f"duplicate segment id {segment.id!r}")
        for other in self.segments.values():
            if other.prefix == segment.prefix:
                raise ValidationError(
                    f"segment {segment.id!r} reuses prefix {segment.prefix!r}")
        self.segments[segment.id] = segment
        return segment

    def add_machine(self, machine: net.Machine) -> net.Machine:
        if machine.id in self.machines:
            raise ValidationError(f"duplicate machine id {machine.id!r}")
        for iface in machine.interfaces:
            if iface.network not in self.segments:
                raise ValidationError(
                    f"machine {machine.id!r} references unknown segment {iface.network!r}")
            if iface.address in self._by_address:
                raise ValidationError(f"duplicate address {iface.address!r}")
            if not self.segments[iface.network].contains(iface.address):
                raise ValidationError(
                    f"address {iface.address!r} outside segment {iface.network!r}")
        self._machine_index[machine.id] = len(self.machines)
        self.machines[machine.id] = machine
        for iface in machine.interfaces:
            self._by_address[iface.address] = machine
            self.segments[iface.network].attached.append(machine.id)
        return machine

    def add_template(self, template: TemplateFS) -> TemplateFS:
        if template.id in self.templates:
            raise ValidationError(f"duplicate template id {template.id!r}")
        self.templates[template.id] = template
        return template

    def machine_by_address(self, address: str) -> net.Machine | None:
        return self._by_address.get(address)

    def segment_for_address(self, address: str) -> net.NetworkSegment | None:
        for segment in self.segments.values():
            if segment.contains(address):
                return segment
        return None

    def ids_sensors_on(self, segment_ids: list[str]) -> list[str]:
        wanted = set(segment_ids)
        sensors = []
        for machine in self.machines.values():
            if "ids" in machine.roles and machine.state == "up" and \
                    any(iface.network in wanted for iface in machine.interfaces):
                sensors.append(f"ids:{machine.id}")
        return sensors

    # -- events, knowledge, noise ----------------------------------------------

    def emit(self, category: str, payload: dict[str, Any]) -> EventRecord:
        self._seq += 1
        record = EventRecord(self._seq, round(self.clock, 3), category, payload)
        self.events.append(record)
        with self._event_cv:
            self._event_cv.notify_all()
        return record

    def wait_events(self, last_seq: int, timeout: float) -> bool:
        with self._event_cv:
            if self._seq > last_seq:
                return True
            return self._event_cv.wait(timeout)

    def assert_asset(self, asset: Asset) -> Asset:
        stored = self.env.assert_asset(asset)
        self.emit("asset", asset.to_dict())
        return stored

    def record_noise(self, sensor: str, category: NoiseCategory,
                     magnitude: float, action_id: str) -> NoiseEvent:
        event = NoiseEvent(sensor, category, magnitude, action_id, round(self.clock, 3))
        self.noise.record(event)
        self.emit("noise", event.to_dict())
        return event

    # -- agents -----------------------------------------------------------------

    def next_agent_id(self) -> str:
        self._agent_seq += 1
        return f"agent-{self._agent_seq}"

    def find_alive_agent(self, agent_id: str):
        agent = self.agents.get(agent_id)
        if agent is None or not agent.alive:
            raise DeadAgentError(f"agent {agent_id!r} is unknown or dead")
        return agent

    def kill_agent(self, agent_id: str, reason: str = "") -> None:
        agent = self.agents.get(agent_id)
        if agent is None or not agent.alive:
            return
        agent.alive = False
        self.emit("agent", {"agent": agent_id, "machine": agent.machine,
                            "alive": False, "reason": reason})
        for child in list(self.agents.values()):
            if child.alive and child.parent == agent_id:
                self.kill_agent(child.id, reason=f"parent {agent_id} died")

    # -- command queue and timers -------------------------------------------------

    def post(self, fn: Callable[[], Any]) -> Reply:
        reply = Reply()
        self._queue.put((fn, reply))
        self.arrivals += 1
        return reply

    def drain_commands(self) -> int:
        drained = 0
        while True:
            try:
                fn, reply = self._queue.get_nowait()
            except queuelib.Empty:
                return drained
            drained += 1
            try:
                reply.resolve(fn())
            except BaseException as exc:  # noqa: BLE001 - handed to the caller
                reply.reject(exc)

    def drain_one(self, timeout: float | None = None) -> bool:
        """Wait up to `timeout` seconds for one posted command and run it."""
        try:
            fn, reply = self._queue.get(timeout=timeout)
        except queuelib.Empty:
            return False
        try:
            reply.resolve(fn())
        except BaseException as exc:  # noqa: BLE001 - handed to the caller
            reply.reject(exc)
        return True

    def queue_empty(self) -> bool:
        return self._queue.empty()

    def add_timer(self, delay_ms: float, kind: str, data: dict[str, Any]) -> Timer:
        self._timer_seq += 1
        timer = Timer(self.clock + delay_ms, self._timer_seq, kind, data)
        heapq.heappush(self._timers, timer)
        return timer

    def fire_timers(self) -> None:
        while self._timers and self._timers[0].at <= self.clock + 1e-9:
            timer = heapq.heappop(self._timers)
            if timer.canceled:
                continue
            if timer.kind == "wake-thread":
                timer.data["callback"]()
            elif timer.kind == "reboot-os":
                net.finish_reboot(self, timer.data["machine"])
            elif timer.kind == "restart-app":
                net.finish_app_restart(self, timer.data["machine"], timer.data["app"])
            else:
                raise SimError(f"unknown timer kind {timer.kind!r}")

    def _next_timer_at(self) -> float | None:
        while self._timers and self._timers[0].canceled:
            heapq.heappop(self._timers)
        return self._timers[0].at if self._timers else None

    # -- scheduler hooks ------------------------------------------------------------

    def note_runnable(self, machine: net.Machine) -> None:
        self._maybe_runnable.add(machine.id)

    def note_state_change(self, machine: net.Machine) -> None:
        pass  # lazily pruned in runnable_machines

    def runnable_machines(self) -> list[net.Machine]:
        if not self._maybe_runnable:
            return []
        runnable = []
        stale = []
        for mid in sorted(self._maybe_runnable, key=self._machine_index.__getitem__):
            machine = self.machines[mid]
            if any(t.state == sched.RUNNABLE
                   for p in machine.processes for t in p.threads):
                runnable.append(machine)
            else:
                stale.append(mid)
        for mid in stale:
            self._maybe_runnable.discard(mid)
        return runnable

    def has_live_threads(self) -> bool:
        return any(p.threads for m in self.machines.values() for p in m.processes)

    def abort_threads(self, threads: list[Any], reason: str) -> None:
        for thread in threads:
            thread.finish(error=reason)

    def spawn_thread(self, machine: net.Machine, process: net.Process,
                     gen, name: str, on_finish: Callable | None = None) -> sched.SimThread:
        return sched.SimThread(self, machine, process, gen, name, on_finish)

    # -- engine -------------------------------------------------------------------

    def pump(self, max_rounds: int | None = None) -> int:
        """Run rounds until the world is idle and the queue is empty.

        Simulated time jumps to the next timer whenever nothing is runnable.
        Never sleeps for real; service embeddings handle politeness.
        """
        rounds = 0
        while True:
            self.drain_commands()
            self.fire_timers()
            if self.runnable_machines():
                sched.run_round(self)
                rounds += 1
                if max_rounds is not None and rounds >= max_rounds:
                    return rounds
                continue
            next_at = self._next_timer_at()
            if next_at is not None:
                self.clock = max(self.clock, next_at)
                continue
            if self.queue_empty():
                return rounds

    # -- actions --------------------------------------------------------------------

    def next_request_id(self) -> str:
        self._request_seq += 1
        return f"req-{self._request_seq}"

    def start_action(self, agent_id: str, action_name: str,
                     params: dict[str, Any] | None = None,
                     request_id: str | None = None) -> tuple[str, dict]:
        """Validate and launch an action; returns (action_id, outcome box).

        The box gets the ActionOutcome under "outcome" when the action's
        thread finishes (immediately for goal-satisfied shortcuts).
        """
        from .actions import ActionContext, action_body

        agent = self.find_alive_agent(agent_id)
        action = self.actions.get(action_name)
        if action is None:
            raise UnknownActionError(f"no action named {action_name!r}")
        params = action.validate(self, agent, dict(params or {}))
        request_id = request_id or self.next_request_id()
        self._action_seq += 1
        action_id = f"act-{self._action_seq}"
        box: dict[str, Any] = {}

        matched = action.satisfied(self, agent, params)
        if matched is not None:
            outcome = ActionOutcome("success", matched, [], 0.0, Cost.zero(),
                                    {"goal_satisfied": True})
            self.finish_action(action_id, request_id, agent_id, action_name, outcome, box)
            return action_id, box

        machine = self.machines[agent.machine]
        if machine.state != "up":
            raise DeadAgentError(f"agent {agent_id!r} host is {machine.state}")
        process = None
        for proc in machine.processes:
            if proc.pid == agent.process:
                process = proc
                break
        if process is None:
            process = machine.processes[0]
        ctx = ActionContext(self, agent, action, params, action_id, request_id, box)
        self.spawn_thread(machine, process, action_body(ctx),
                          f"{action_name}:{action_id}", on_finish=ctx.thread_finished)
        return action_id, box

    def finish_action(self, action_id: str, request_id: str, agent_id: str,
                      action_name: str, outcome: ActionOutcome, box: dict) -> None:
        self.action_log[action_id] = {"agent": agent_id, "status": outcome.status,
                                      "action": action_name}
        box["outcome"] = outcome
        self.emit("action-result", {
            "request_id": request_id,
            "action_id": action_id,
            "agent": agent_id,
            "action": action_name,
            "status": outcome.status,
            "elapsed": round(outcome.elapsed, 3),
            "produced": len(outcome.produced_assets),
            "noise": len(outcome.noise_events),
            "detail": outcome.detail,
        })

    def run_action(self, agent_id: str, action_name: str,
                   params: dict[str, Any] | None = None) -> ActionOutcome:
        _, box = self.start_action(agent_id, action_name, params)
        self.pump()
        return box["outcome"]

    def cleanup(self, agent_id: str) -> list[NoiseEvent]:
        """Scrub every trace this agent's actions are allowed to remove."""
        agent = self.find_alive_agent(agent_id)
        mine = {aid: rec["status"] for aid, rec in self.action_log.items()
                if rec["agent"] == agent.id}
        removed = self.noise.cleanup_for(mine)
        self.emit("action-result", {
            "request_id": self.next_request_id(),
            "action_id": "cleanup",
            "agent": agent.id,
            "action": "cleanup",
            "status": "success",
            "elapsed": 0.0,
            "produced": 0,
            "noise": 0,
            "detail": {"removed": len(removed)},
        })
        return removed

    # -- state digest -----------------------------------------------------------------

    def state_digest(self) -> str:
        """Hash of the mutable ground truth, excluding observability logs."""
        view: dict[str, Any] = {"machines": {}, "agents": {}, "env": self.env.snapshot()}
        for mid, machine in self.machines.items():
            view["machines"][mid] = {
                "state": machine.state,
                "apps": [(a.name, a.status) for a in machine.applications],
                "fs": machine.fs.state(),
            }
        for aid, agent in self.agents.items():
            view["agents"][aid] = {"machine": agent.machine, "alive": agent.alive,
                                   "privilege": agent.privilege}
        blob = json.dumps(view, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
