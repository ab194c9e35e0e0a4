"""Cooperative scheduler: the engine's single logical execution track.

Simulated threads are generators, not OS threads.  A round visits every
machine that has runnable threads, in registration order, and resumes each
runnable thread until it issues one syscall or finishes.  Blocking syscalls
park the thread on a waiter or timer; simulated time only moves when nothing
is runnable and the clock jumps to the next timer.

To stay polite on a shared host the engine sleeps after a fixed number of
machine runs.  The runs-to-sleep knob adapts: syscall requests arriving
during a sleep are "lost" responsiveness, so heavy loss doubles the knob
(exponential increment) while quiet sleeps walk it back down linearly.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Generator

from . import net
from .errors import SimError

logger = logging.getLogger(__name__)

RUNNABLE = 0
WAITING = 1
DONE = 2


@dataclass
class SchedulerConfig:
    runs_to_sleep: int = 512
    sleep_ms: float = 20.0
    lost_threshold: int = 8
    rts_min: int = 64
    rts_max: int = 8192
    linear_step: int = 64

    @classmethod
    def from_mapping(cls, mapping: dict[str, Any] | None) -> "SchedulerConfig":
        cfg = cls()
        for key, value in (mapping or {}).items():
            if not hasattr(cfg, key):
                raise SimError(f"unknown scheduler config key {key!r}")
            setattr(cfg, key, type(getattr(cfg, key))(value))
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return {"runs_to_sleep": self.runs_to_sleep, "sleep_ms": self.sleep_ms,
                "lost_threshold": self.lost_threshold, "rts_min": self.rts_min,
                "rts_max": self.rts_max, "linear_step": self.linear_step}


@dataclass
class RunStats:
    machine_runs: int = 0
    syscalls_executed: int = 0
    syscalls_lost_per_sleep: int = 0
    wall_time: float = 0.0  # milliseconds spent inside run_round
    sleeps: int = 0
    runs_at_last_sleep: int = 0


# --- syscall requests a thread may yield -------------------------------------

class Op:
    __slots__ = ()


@dataclass
class Sleep(Op):
    ms: float


@dataclass
class YieldCpu(Op):
    """Give up the CPU for one round; counts as a scheduling syscall."""


@dataclass
class Probe(Op):
    target: str


@dataclass
class Connect(Op):
    host: str
    port: int


@dataclass
class Send(Op):
    fd: int
    data: bytes


@dataclass
class Recv(Op):
    fd: int
    maxn: int
    timeout_ms: float | None = None


@dataclass
class CloseFd(Op):
    fd: int


@dataclass
class Listen(Op):
    port: int
    addr: str | None = None


@dataclass
class Accept(Op):
    fd: int
    timeout_ms: float | None = None


@dataclass
class Sys(Op):
    """Run one universal syscall request on the thread's own machine."""
    request: Any


@dataclass
class OpResult:
    ok: bool
    value: Any = None
    outcome: str = ""
    segments: list[str] = field(default_factory=list)
    error: str = ""


class SimThread:
    """One cooperative task attached to a process on a machine."""

    _counter = 0

    def __init__(self, world, machine, process, gen: Generator, name: str,
                 on_finish: Callable | None = None):
        SimThread._counter += 1
        self.tid = SimThread._counter
        self.world = world
        self.machine = machine
        self.process = process
        self.gen = gen
        self.name = name
        self.state = RUNNABLE
        self.pending: Any = None
        self.on_finish = on_finish
        self.finish_error: str | None = None
        process.threads.append(self)
        world.note_runnable(machine)

    def park(self) -> None:
        self.state = WAITING
        self.world.note_state_change(self.machine)

    def wake(self, result: Any) -> None:
        if self.state == DONE:
            return
        self.pending = result
        self.state = RUNNABLE
        self.world.note_runnable(self.machine)

    def finish(self, error: str | None = None) -> None:
        if self.state == DONE:
            return
        self.state = DONE
        self.finish_error = error
        if self in self.process.threads:
            self.process.threads.remove(self)
        self.world.note_state_change(self.machine)
        if self.on_finish is not None:
            callback, self.on_finish = self.on_finish, None
            callback(self, error)


# --- waiters ------------------------------------------------------------------

class _RecvWaiter:
    def __init__(self, world, thread: SimThread, maxn: int, timeout_ms: float | None):
        self.thread = thread
        self.maxn = maxn
        self.done = False
        self.timer = None
        if timeout_ms is not None:
            self.timer = world.add_timer(timeout_ms, "wake-thread",
                                         {"callback": self._timed_out})

    def _timed_out(self) -> None:
        if not self.done:
            self.done = True
            self.thread.wake(OpResult(True, b"", outcome="timeout"))

    def try_satisfy(self, world, desc) -> bool:
        if self.done:
            return True
        try:
            data, eof = net.sock_recv(world, desc.machine, desc.fd, self.maxn)
        except SimError as exc:
            self._fire(OpResult(False, error=str(exc), outcome="reset"))
            return True
        if data is None and not eof:
            return False
        self._fire(OpResult(True, data if data is not None else b"",
                            outcome="eof" if eof else "data"))
        return True

    def _fire(self, result: OpResult) -> None:
        self.done = True
        if self.timer is not None:
            self.timer.cancel()
        self.thread.wake(result)


class _AcceptWaiter:
    def __init__(self, world, thread: SimThread, timeout_ms: float | None):
        self.thread = thread
        self.done = False
        self.timer = None
        if timeout_ms is not None:
            self.timer = world.add_timer(timeout_ms, "wake-thread",
                                         {"callback": self._timed_out})

    def _timed_out(self) -> None:
        if not self.done:
            self.done = True
            self.thread.wake(OpResult(False, outcome="timeout", error="accept timed out"))

    def try_satisfy(self, world, desc) -> bool:
        if self.done:
            return True
        got = net.accept_pending(world, desc.machine, desc.fd)
        if got is None:
            return False
        self.done = True
        if self.timer is not None:
            self.timer.cancel()
        self.thread.wake(OpResult(True, got, outcome="accepted"))
        return True


# --- op dispatch ----------------------------------------------------------------

def _execute_op(world, thread: SimThread, op: Op) -> None:
    """Run one yielded syscall.  Either sets thread.pending or parks it."""
    machine = thread.machine
    if isinstance(op, Sleep):
        thread.park()
        world.add_timer(op.ms, "wake-thread",
                        {"callback": lambda: thread.wake(OpResult(True))})
        return
    world.stats.syscalls_executed += 1
    if isinstance(op, YieldCpu):
        thread.pending = OpResult(True)
    elif isinstance(op, Probe):
        outcome, r = net.probe_host(world, machine, op.target)
        thread.pending = OpResult(True, outcome=outcome, segments=list(r.segments))
    elif isinstance(op, Connect):
        res = net.connect_tcp(world, machine, op.host, op.port)
        if res.outcome == "timeout":
            thread.park()
            result = OpResult(True, outcome="timeout", segments=list(res.route.segments))
            world.add_timer(world.config.filtered_timeout_ms, "wake-thread",
                            {"callback": lambda: thread.wake(result)})
        else:
            thread.pending = OpResult(True, res.fd, outcome=res.outcome,
                                      segments=list(res.route.segments))
    elif isinstance(op, Send):
        try:
            n = net.sock_send(world, machine, op.fd, op.data)
            thread.pending = OpResult(True, n, outcome="sent")
        except SimError as exc:
            thread.pending = OpResult(False, error=str(exc), outcome="reset")
    elif isinstance(op, Recv):
        try:
            data, eof = net.sock_recv(world, machine, op.fd, op.maxn)
        except SimError as exc:
            thread.pending = OpResult(False, error=str(exc), outcome="reset")
            return
        if data is not None or eof:
            thread.pending = OpResult(True, data if data is not None else b"",
                                      outcome="eof" if eof else "data")
        else:
            desc = machine.get_desc(op.fd)
            thread.park()
            desc.waiters.append(_RecvWaiter(world, thread, op.maxn, op.timeout_ms))
    elif isinstance(op, CloseFd):
        try:
            net.close_fd(world, machine, op.fd)
            thread.pending = OpResult(True)
        except SimError as exc:
            thread.pending = OpResult(False, error=str(exc))
    elif isinstance(op, Listen):
        try:
            fd = net.listen_tcp(world, machine, op.port, op.addr)
            thread.pending = OpResult(True, fd)
        except SimError as exc:
            thread.pending = OpResult(False, error=str(exc))
    elif isinstance(op, Accept):
        got = net.accept_pending(world, machine, op.fd)
        if got is not None:
            thread.pending = OpResult(True, got, outcome="accepted")
        else:
            desc = machine.get_desc(op.fd)
            thread.park()
            desc.waiters.append(_AcceptWaiter(world, thread, op.timeout_ms))
    elif isinstance(op, Sys):
        # execute_syscall does its own accounting
        world.stats.syscalls_executed -= 1
        from . import agents
        resp = agents.execute_syscall(world, machine, op.request)
        thread.pending = OpResult(resp.status == 0, resp, outcome=str(resp.status))
    else:
        thread.pending = OpResult(False, error=f"unknown op {op!r}")


def _resume(world, thread: SimThread) -> None:
    sent, thread.pending = thread.pending, None
    try:
        op = thread.gen.send(sent)
    except StopIteration:
        thread.finish()
        return
    except SimError as exc:
        logger.debug("thread %s died: %s", thread.name, exc)
        thread.finish(error=str(exc))
        return
    _execute_op(world, thread, op)


def run_round(world) -> RunStats:
    """Visit every machine with runnable threads exactly once."""
    t0 = time.perf_counter()
    before = world.stats.syscalls_executed
    delta = RunStats()
    for machine in world.runnable_machines():
        ran = False
        for process in list(machine.processes):
            for thread in list(process.threads):
                if thread.state == RUNNABLE:
                    ran = True
                    _resume(world, thread)
        if ran:
            delta.machine_runs += 1
    delta.syscalls_executed = world.stats.syscalls_executed - before
    wall = (time.perf_counter() - t0) * 1000.0
    world.stats.machine_runs += delta.machine_runs
    world.stats.wall_time += wall
    delta.wall_time = wall
    return delta


def adjust_runs_to_sleep(config: SchedulerConfig, stats: RunStats) -> int:
    """Adapt the runs-to-sleep knob after one sleep event.

    Loss above the threshold doubles it; otherwise it backs off by the
    linear step.  The result stays inside [rts_min, rts_max].
    """
    if stats.syscalls_lost_per_sleep > config.lost_threshold:
        value = config.runs_to_sleep * 2
    else:
        value = config.runs_to_sleep - config.linear_step
    config.runs_to_sleep = max(config.rts_min, min(config.rts_max, value))
    return config.runs_to_sleep


def idle_sleep(config: SchedulerConfig, stats: RunStats,
               sleeper: Callable[[float], None] = time.sleep) -> bool:
    """Sleep once the configured number of machine runs has accumulated."""
    if stats.machine_runs - stats.runs_at_last_sleep < config.runs_to_sleep:
        return False
    sleeper(config.sleep_ms / 1000.0)
    stats.sleeps += 1
    stats.runs_at_last_sleep = stats.machine_runs
    return True
