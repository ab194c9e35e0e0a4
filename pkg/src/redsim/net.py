"""Simulated network: machines, segments, routing, and sockets.

The simulation stops at the socket interface.  Machines expose descriptor
tables and lazily-answered listeners instead of full protocol stacks, which
keeps a thousand idle hosts nearly free.  Routing runs only while a
connection is being established; once two direct sockets are paired, bytes
move peer to peer without touching the topology again.
"""
from __future__ import annotations

import logging
import socket as realsocket
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import (AddressingError, BadDescriptorError, DeadMachineError,
                     FileError, PeerResetError, PortBindError, ValidationError)
from .vfs import FileCache, MachineFS, TemplateFS

logger = logging.getLogger(__name__)

FORWARDING_ROLES = {"router", "firewall"}

_EMPTY_TEMPLATE = TemplateFS("empty", {})


@dataclass
class OSDescriptor:
    name: str
    arch: str = "i386"
    version: str = ""
    edition: str = ""
    servicepack: str = ""

    def describe(self) -> str:
        parts = [self.name]
        for extra in (self.version, self.edition, self.servicepack):
            if extra:
                parts.append(extra)
        return " ".join(parts)

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "arch": self.arch, "version": self.version,
                "edition": self.edition, "servicepack": self.servicepack}


ACTIVE_APP_STATUSES = ("running", "target-eligible")
APP_STATUSES = ("running", "target-eligible", "installed", "not-running")


@dataclass
class ApplicationInstance:
    name: str
    version: tuple[int, int] = (1, 0)
    status: str = "running"
    listen_ports: list[int] = field(default_factory=list)
    banner: str = ""
    configured_status: str = ""

    def __post_init__(self):
        self.version = tuple(self.version)  # type: ignore[assignment]
        if self.status not in APP_STATUSES:
            raise ValidationError(f"bad application status {self.status!r}")
        if not self.configured_status:
            self.configured_status = self.status

    def is_active(self) -> bool:
        return self.status in ACTIVE_APP_STATUSES

    @property
    def version_str(self) -> str:
        return ".".join(str(v) for v in self.version)


@dataclass
class FilterRule:
    """One entry of a machine's ordered filter table; first match wins."""

    direction: str  # "in", "out" or "both"
    pattern: str    # "any", exact address, "10.0.1.*" or "10.0.1.0/24"
    ports: tuple[int, int] | None
    verdict: str    # "allow" or "deny"

    def matches(self, addr: str, port: int | None) -> bool:
        if self.ports is not None:
            if port is None or not self.ports[0] <= port <= self.ports[1]:
                return False
        return _addr_match(self.pattern, addr)


def _addr_match(pattern: str, addr: str) -> bool:
    if pattern in ("any", "*", ""):
        return True
    if pattern.endswith(".*"):
        return addr.rsplit(".", 1)[0] == pattern[:-2]
    if pattern.endswith("/24"):
        return addr.rsplit(".", 1)[0] == pattern[:-3].rsplit(".", 1)[0]
    return addr == pattern


@dataclass
class Interface:
    address: str
    network: str


SEGMENT_KINDS = ("hub", "switch", "vlan", "dialup")


class NetworkSegment:
    """A broadcast domain; `prefix` is the first three address octets."""

    def __init__(self, segment_id: str, prefix: str, kind: str = "switch"):
        if kind not in SEGMENT_KINDS:
            raise ValidationError(f"bad segment kind {kind!r}")
        self.id = segment_id
        self.prefix = prefix
        self.kind = kind
        self.attached: list[str] = []

    def contains(self, address: str) -> bool:
        return address.rsplit(".", 1)[0] == self.prefix


@dataclass
class PCB:
    """Protocol control block; consulted only while establishing."""

    protocol: str
    local_addr: str
    local_port: int
    remote_addr: str
    remote_port: int


class Descriptor:
    __slots__ = ("fd", "machine")

    def __init__(self):
        self.fd = -1
        self.machine: "Machine | None" = None


class DirectSocket(Descriptor):
    """In-simulation socket endpoint; connected pairs reference each other."""

    __slots__ = ("protocol", "state", "local_addr", "local_port", "remote_addr",
                 "remote_port", "peer", "rbuf", "dgrams", "backlog", "waiters",
                 "peer_closed", "reset", "app", "pcb")

    def __init__(self, protocol: str = "tcp"):
        super().__init__()
        self.protocol = protocol
        self.state = "closed"  # closed|bound|listening|connected
        self.local_addr: str | None = None
        self.local_port: int | None = None
        self.remote_addr: str | None = None
        self.remote_port: int | None = None
        self.peer: "DirectSocket | BridgeEndpoint | None" = None
        self.rbuf = bytearray()
        self.dgrams: deque[bytes] = deque()
        self.backlog: deque[DirectSocket] = deque()
        self.waiters: list[Any] = []
        self.peer_closed = False
        self.reset = False
        self.app: str | None = None
        self.pcb: PCB | None = None


class BridgeEndpoint:
    """Stand-in peer for a connection that terminates outside the simulation."""

    __slots__ = ("send", "close", "machine")

    def __init__(self, send: Callable[[bytes], None], close: Callable[[], None]):
        self.send = send
        self.close = close
        self.machine = None


class FileHandle(Descriptor):
    __slots__ = ("path", "mode", "pos")

    def __init__(self, path: str, mode: str):
        super().__init__()
        self.path = path
        self.mode = mode
        self.pos = 0


class Process:
    """Process tree node; threads are attached by the scheduler."""

    def __init__(self, pid: int, name: str, owner: str = "root", app: str | None = None):
        self.pid = pid
        self.name = name
        self.owner = owner
        self.app = app
        self.threads: list[Any] = []


class Machine:
    """One simulated host: descriptor table, filesystem view, process tree."""

    def __init__(self, machine_id: str, os: OSDescriptor,
                 interfaces: list[Interface] | None = None,
                 applications: list[ApplicationInstance] | None = None,
                 roles: set[str] | None = None,
                 filter_rules: list[FilterRule] | None = None,
                 template: TemplateFS | None = None,
                 cache: FileCache | None = None,
                 users: list[str] | None = None,
                 hidden: dict[str, str] | None = None):
        self.id = machine_id
        self.os = os
        self.interfaces = list(interfaces or [])
        self.applications = list(applications or [])
        self.roles = set(roles or ())
        self.filter_rules = list(filter_rules or [])
        self.fs = MachineFS(template or _EMPTY_TEMPLATE, cache)
        self.users = list(users or ["root"])
        self.hidden = dict(hidden or {})
        self.state = "up"  # up|crashed|rebooting
        self.descriptors: dict[int, Descriptor] = {}
        self._free_fds: list[int] = []
        self._next_fd = 0
        self.pcbs: list[PCB] = []
        self.processes: list[Process] = []
        self._next_pid = 1
        self._next_ephemeral = 40000
        self.touch_count = 0
        self.boot_processes()

    @property
    def primary_address(self) -> str | None:
        return self.interfaces[0].address if self.interfaces else None

    def touch(self) -> None:
        self.touch_count += 1

    def is_forwarder(self) -> bool:
        return bool(self.roles & FORWARDING_ROLES)

    # -- process tree --

    def spawn_process(self, name: str, owner: str = "root", app: str | None = None) -> Process:
        proc = Process(self._next_pid, name, owner, app)
        self._next_pid += 1
        self.processes.append(proc)
        return proc

    def boot_processes(self) -> None:
        self.processes = []
        self._next_pid = 1
        self.spawn_process("init", "root")
        for app in self.applications:
            if app.is_active():
                self.spawn_process(app.name, "root", app=app.name)

    def find_process(self, app: str) -> Process | None:
        for proc in self.processes:
            if proc.app == app:
                return proc
        return None

    # -- descriptor table --

    def alloc_fd(self, desc: Descriptor) -> int:
        if self._free_fds:
            self._free_fds.sort()
            fd = self._free_fds.pop(0)
        else:
            fd = self._next_fd
            self._next_fd += 1
        desc.fd = fd
        desc.machine = self
        self.descriptors[fd] = desc
        return fd

    def free_fd(self, fd: int) -> None:
        if fd in self.descriptors:
            del self.descriptors[fd]
            self._free_fds.append(fd)

    def get_desc(self, fd: int) -> Descriptor:
        try:
            return self.descriptors[fd]
        except KeyError:
            raise BadDescriptorError(f"{self.id}: no descriptor {fd}") from None

    def open_tcp(self) -> tuple[int, DirectSocket]:
        desc = DirectSocket("tcp")
        return self.alloc_fd(desc), desc

    def open_udp(self) -> tuple[int, DirectSocket]:
        desc = DirectSocket("udp")
        return self.alloc_fd(desc), desc

    def next_ephemeral(self) -> int:
        port = self._next_ephemeral
        self._next_ephemeral += 1
        return port

    # -- lookup helpers --

    def find_app(self, name: str | None = None, port: int | None = None) -> ApplicationInstance | None:
        for app in self.applications:
            if name is not None and app.name.lower() != name.lower():
                continue
            if port is not None and port not in app.listen_ports:
                continue
            return app
        return None

    def find_listener(self, port: int, addr: str | None = None):
        for desc in self.descriptors.values():
            if (isinstance(desc, DirectSocket) and desc.state == "listening"
                    and desc.protocol == "tcp" and desc.local_port == port
                    and desc.local_addr in (None, "0.0.0.0", addr)):
                return ("sock", desc)
        for app in self.applications:
            if app.is_active() and port in app.listen_ports:
                return ("app", app)
        return None

    def host_denies(self, direction: str, other_addr: str, port: int | None) -> bool:
        for rule in self.filter_rules:
            if rule.direction in (direction, "both") and rule.matches(other_addr, port):
                return rule.verdict == "deny"
        return False

    def transit_denies(self, src: str, dst: str, port: int | None) -> bool:
        for rule in self.filter_rules:
            if rule.direction in ("in", "both") and rule.matches(src, port):
                return rule.verdict == "deny"
            if rule.direction in ("out", "both") and rule.matches(dst, port):
                return rule.verdict == "deny"
        return False


# --- routing ----------------------------------------------------------------

@dataclass
class RouteResult:
    status: str  # "ok" | "unreachable" | "filtered"
    path: list[str] = field(default_factory=list)      # segment and router ids
    segments: list[str] = field(default_factory=list)  # segment ids crossed
    blocked_by: str | None = None


def route(world, source: str, destination: str, port: int | None = None,
          protocol: str = "tcp") -> RouteResult:
    """Find an allowed path from `source` to `destination`.

    Consulted at connection establishment only; filter rules along the way
    turn an otherwise reachable path into a filtered one.
    """
    world.route_calls += 1
    src_m = world.machine_by_address(source)
    if src_m is None:
        raise AddressingError(f"source address {source!r} has no machine")
    dst_seg = world.segment_for_address(destination)
    if dst_seg is None:
        return RouteResult("unreachable")
    if src_m.host_denies("out", destination, port):
        return RouteResult("filtered", blocked_by=src_m.id)
    dst_m = world.machine_by_address(destination)

    seen: set[str] = set()
    frontier: deque[tuple[str, list[str]]] = deque()
    for iface in src_m.interfaces:
        if iface.network not in seen:
            seen.add(iface.network)
            frontier.append((iface.network, [iface.network]))
    blocked: str | None = None
    while frontier:
        seg_id, path = frontier.popleft()
        if seg_id == dst_seg.id:
            if dst_m is not None and dst_m.id != src_m.id and \
                    dst_m.host_denies("in", source, port):
                blocked = dst_m.id
                continue
            return RouteResult("ok", path, [p for p in path if p in world.segments])
        seg = world.segments[seg_id]
        for mid in seg.attached:
            router = world.machines[mid]
            if mid == src_m.id or not router.is_forwarder() or router.state != "up":
                continue
            if router.transit_denies(source, destination, port):
                blocked = router.id
                continue
            for iface in router.interfaces:
                if iface.network not in seen:
                    seen.add(iface.network)
                    frontier.append((iface.network, path + [mid, iface.network]))
    if blocked is not None:
        return RouteResult("filtered", blocked_by=blocked)
    return RouteResult("unreachable")


def probe_host(world, machine: Machine, target: str) -> tuple[str, RouteResult]:
    """Reachability probe from `machine`.  Outcomes: up | absent | filtered
    | unreachable.  Hosts that are down answer nothing, like filtered ones."""
    source = machine.primary_address
    if source is None:
        raise AddressingError(f"{machine.id} has no interface")
    r = route(world, source, target, port=None)
    if r.status != "ok":
        return (r.status, r)
    dst = world.machine_by_address(target)
    if dst is None:
        return ("absent", r)
    dst.touch()
    if dst.state != "up":
        return ("filtered", r)
    return ("up", r)


# --- sockets ----------------------------------------------------------------

@dataclass
class ConnectResult:
    outcome: str  # "connected" | "refused" | "timeout"
    fd: int | None
    route: RouteResult
    client: DirectSocket | None = None
    server: DirectSocket | None = None


def _notify(world, desc: DirectSocket) -> None:
    if not desc.waiters:
        return
    remaining = []
    for waiter in desc.waiters:
        if not waiter.try_satisfy(world, desc):
            remaining.append(waiter)
    desc.waiters = remaining


def connect_tcp(world, machine: Machine, dst_addr: str, dst_port: int) -> ConnectResult:
    if machine.state != "up":
        raise DeadMachineError(f"{machine.id} is {machine.state}")
    source = machine.primary_address
    if source is None:
        raise AddressingError(f"{machine.id} has no interface")
    r = route(world, source, dst_addr, dst_port)
    if r.status != "ok":
        return ConnectResult("timeout", None, r)
    dst = world.machine_by_address(dst_addr)
    if dst is None:
        return ConnectResult("timeout", None, r)
    dst.touch()
    if dst.state != "up":
        return ConnectResult("timeout", None, r)
    listener = dst.find_listener(dst_port, dst_addr)
    if listener is None:
        return ConnectResult("refused", None, r)

    cfd, client = machine.open_tcp()
    client.state = "connected"
    client.local_addr, client.local_port = source, machine.next_ephemeral()
    client.remote_addr, client.remote_port = dst_addr, dst_port
    server = DirectSocket("tcp")
    dst.alloc_fd(server)
    server.state = "connected"
    server.local_addr, server.local_port = dst_addr, dst_port
    server.remote_addr, server.remote_port = client.local_addr, client.local_port
    client.peer, server.peer = server, client
    client.pcb = PCB("tcp", client.local_addr, client.local_port, dst_addr, dst_port)
    server.pcb = PCB("tcp", dst_addr, dst_port, client.local_addr, client.local_port)
    machine.pcbs.append(client.pcb)
    dst.pcbs.append(server.pcb)
    world.connections += 1

    kind, endpoint = listener
    if kind == "app":
        server.app = endpoint.name
        if endpoint.banner:
            client.rbuf += endpoint.banner.encode("utf-8")
    else:
        endpoint.backlog.append(server)
        _notify(world, endpoint)
    return ConnectResult("connected", cfd, r, client, server)


def listen_tcp(world, machine: Machine, port: int, addr: str | None = None,
               app: str | None = None) -> int:
    if machine.state != "up":
        raise DeadMachineError(f"{machine.id} is {machine.state}")
    if machine.find_listener(port, addr) is not None:
        raise PortBindError(f"{machine.id}: port {port} already claimed")
    fd, desc = machine.open_tcp()
    desc.state = "listening"
    desc.local_addr = addr
    desc.local_port = port
    desc.app = app
    return fd


def bind_udp(world, machine: Machine, port: int, addr: str | None = None) -> int:
    for d in machine.descriptors.values():
        if isinstance(d, DirectSocket) and d.protocol == "udp" and d.local_port == port:
            raise PortBindError(f"{machine.id}: udp port {port} already bound")
    fd, desc = machine.open_udp()
    desc.state = "bound"
    desc.local_addr = addr
    desc.local_port = port
    return fd


def accept_pending(world, machine: Machine, fd: int):
    """Pop one established connection off a listener, or None."""
    desc = machine.get_desc(fd)
    if not isinstance(desc, DirectSocket) or desc.state != "listening":
        raise BadDescriptorError(f"{machine.id}: fd {fd} is not listening")
    if not desc.backlog:
        return None
    server = desc.backlog.popleft()
    return (server.fd, server.remote_addr, server.remote_port)


def sock_send(world, machine: Machine, fd: int, data: bytes) -> int:
    desc = machine.get_desc(fd)
    if not isinstance(desc, DirectSocket):
        raise BadDescriptorError(f"{machine.id}: fd {fd} is not a socket")
    if desc.protocol != "tcp" or desc.state != "connected":
        raise BadDescriptorError(f"{machine.id}: fd {fd} is not a connected stream")
    if desc.reset:
        raise PeerResetError(f"{machine.id}: fd {fd} peer went away")
    peer = desc.peer
    if isinstance(peer, BridgeEndpoint):
        peer.send(bytes(data))
        return len(data)
    if peer is None or desc.peer_closed:
        raise PeerResetError(f"{machine.id}: fd {fd} peer closed")
    if peer.machine is not None and peer.machine.state != "up":
        desc.reset = True
        raise PeerResetError(f"{machine.id}: fd {fd} peer machine is down")
    peer.rbuf += data
    if peer.machine is not None:
        peer.machine.touch()
    _notify(world, peer)
    return len(data)


def sock_sendto(world, machine: Machine, fd: int, data: bytes,
                dst_addr: str, dst_port: int) -> int:
    """Datagram send: fire and forget.  The reported count is bytes handed
    to the network, not bytes delivered; undeliverable datagrams vanish."""
    desc = machine.get_desc(fd)
    if not isinstance(desc, DirectSocket) or desc.protocol != "udp":
        raise BadDescriptorError(f"{machine.id}: fd {fd} is not a datagram socket")
    source = machine.primary_address
    r = route(world, source, dst_addr, dst_port, protocol="udp")
    if r.status != "ok":
        return len(data)
    dst = world.machine_by_address(dst_addr)
    if dst is None or dst.state != "up":
        return len(data)
    dst.touch()
    for d in dst.descriptors.values():
        if (isinstance(d, DirectSocket) and d.protocol == "udp"
                and d.state == "bound" and d.local_port == dst_port):
            d.dgrams.append(bytes(data))
            _notify(world, d)
            break
    return len(data)


def sock_recv(world, machine: Machine, fd: int, maxn: int) -> tuple[bytes | None, bool]:
    """Returns (data, eof).  data None means nothing available right now."""
    desc = machine.get_desc(fd)
    if not isinstance(desc, DirectSocket):
        raise BadDescriptorError(f"{machine.id}: fd {fd} is not a socket")
    if desc.protocol == "udp":
        if desc.dgrams:
            return (desc.dgrams.popleft()[:maxn], False)
        return (None, False)
    if desc.rbuf:
        data = bytes(desc.rbuf[:maxn])
        del desc.rbuf[:maxn]
        return (data, False)
    if desc.reset:
        raise PeerResetError(f"{machine.id}: fd {fd} connection reset")
    if desc.peer_closed:
        return (b"", True)
    return (None, False)


def close_fd(world, machine: Machine, fd: int) -> None:
    desc = machine.get_desc(fd)
    if isinstance(desc, DirectSocket):
        if desc.pcb is not None and desc.pcb in machine.pcbs:
            machine.pcbs.remove(desc.pcb)
        peer = desc.peer
        if isinstance(peer, BridgeEndpoint):
            peer.close()
        elif isinstance(peer, DirectSocket) and peer.peer is desc:
            peer.peer_closed = True
            _notify(world, peer)
        desc.peer = None
    machine.free_fd(fd)


# --- machine lifecycle -------------------------------------------------------

def _teardown_sockets(world, machine: Machine) -> None:
    for desc in list(machine.descriptors.values()):
        if isinstance(desc, DirectSocket):
            peer = desc.peer
            if isinstance(peer, BridgeEndpoint):
                peer.close()
            elif isinstance(peer, DirectSocket) and peer.peer is desc:
                peer.reset = True
                _notify(world, peer)
    machine.descriptors.clear()
    machine._free_fds.clear()
    machine._next_fd = 0
    machine.pcbs.clear()


def crash_machine(world, machine_id: str, what: str = "os", app: str | None = None) -> None:
    """Crash the OS or one application.  A crashed machine answers nothing
    until reset; a crashed application just loses its listeners and agents."""
    machine = world.machines[machine_id]
    if what == "application":
        _down_application(world, machine, app, restart=False)
        return
    machine.state = "crashed"
    _teardown_sockets(world, machine)
    for proc in list(machine.processes):
        world.abort_threads(list(proc.threads), f"{machine_id} crashed")
    machine.processes = []
    for agent in list(world.agents.values()):
        if agent.alive and agent.machine == machine_id:
            world.kill_agent(agent.id, reason=f"{machine_id} crashed")
    world.emit("machine-state", {"machine": machine_id, "state": "crashed", "what": "os"})


def reset_machine(world, machine_id: str, what: str = "os", app: str | None = None) -> None:
    """Reboot the OS (or restart one application) after the configured delay."""
    machine = world.machines[machine_id]
    if what == "application":
        _down_application(world, machine, app, restart=True)
        return
    machine.state = "rebooting"
    _teardown_sockets(world, machine)
    for proc in list(machine.processes):
        world.abort_threads(list(proc.threads), f"{machine_id} rebooting")
    machine.processes = []
    for agent in list(world.agents.values()):
        if agent.alive and agent.machine == machine_id:
            world.kill_agent(agent.id, reason=f"{machine_id} rebooting")
    world.emit("machine-state", {"machine": machine_id, "state": "rebooting", "what": "os"})
    world.add_timer(world.config.reboot_ms, "reboot-os", {"machine": machine_id})


def finish_reboot(world, machine_id: str) -> None:
    machine = world.machines[machine_id]
    if machine.state != "rebooting":
        return
    machine.state = "up"
    for app in machine.applications:
        app.status = app.configured_status
    machine.boot_processes()
    world.emit("machine-state", {"machine": machine_id, "state": "up", "what": "os"})


def _down_application(world, machine: Machine, app_name: str | None, restart: bool) -> None:
    app = machine.find_app(name=app_name)
    if app is None:
        raise AddressingError(f"{machine.id} has no application {app_name!r}")
    app.status = "not-running"
    for proc in [p for p in machine.processes if p.app == app.name]:
        world.abort_threads(list(proc.threads), f"{app.name} on {machine.id} went down")
        machine.processes.remove(proc)
        for agent in list(world.agents.values()):
            if agent.alive and agent.machine == machine.id and agent.process == proc.pid:
                world.kill_agent(agent.id, reason=f"{app.name} on {machine.id} went down")
    for desc in list(machine.descriptors.values()):
        if isinstance(desc, DirectSocket) and desc.app == app.name:
            peer = desc.peer
            if isinstance(peer, BridgeEndpoint):
                peer.close()
            elif isinstance(peer, DirectSocket) and peer.peer is desc:
                peer.reset = True
                _notify(world, peer)
            machine.free_fd(desc.fd)
    state = "restarting" if restart else "crashed"
    world.emit("machine-state", {"machine": machine.id, "state": state, "what": app.name})
    if restart:
        world.add_timer(world.config.app_restart_ms, "restart-app",
                        {"machine": machine.id, "app": app.name})


def finish_app_restart(world, machine_id: str, app_name: str) -> None:
    machine = world.machines[machine_id]
    app = machine.find_app(name=app_name)
    if app is None:
        return
    app.status = app.configured_status
    if app.is_active() and machine.find_process(app.name) is None:
        machine.spawn_process(app.name, "root", app=app.name)
    world.emit("machine-state", {"machine": machine_id, "state": "up", "what": app.name})


# --- real-socket bridge ------------------------------------------------------

class ExternalBridge:
    """Accepts real TCP connections and feeds them into the simulation.

    Socket IO happens on real threads; everything that touches the world is
    posted onto the engine's command queue and runs at round boundaries.
    """

    def __init__(self, world, handler_factory: Callable,
                 host: str = "127.0.0.1", port: int = 0):
        self.world = world
        self.handler_factory = handler_factory
        self._listener = realsocket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.host, self.real_port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._conns: list[realsocket.socket] = []
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except realsocket.timeout:
                continue
            except OSError:
                break
            self._conns.append(conn)
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: realsocket.socket) -> None:
        closed = threading.Event()

        def send(data: bytes) -> None:
            try:
                conn.sendall(data)
            except OSError:
                pass

        def close() -> None:
            closed.set()
            try:
                conn.shutdown(realsocket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()

        box: dict[str, Any] = {}
        self.world.post(lambda: box.update(sink=self.handler_factory(self.world, send, close)))
        while not closed.is_set():
            try:
                data = conn.recv(4096)
            except OSError:
                break
            if not data:
                break
            self.world.post(lambda d=data: box["sink"].deliver(d))
        self.world.post(lambda: box["sink"].closed())
        if not closed.is_set():
            conn.close()

    def close(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for conn in self._conns:
            try:
                conn.close()
            except OSError:
                pass


class _SimConnSink:
    """Engine-side endpoint of one bridged connection."""

    def __init__(self, world, sim_addr: str, sim_port: int,
                 send: Callable[[bytes], None], close: Callable[[], None]):
        self.world = world
        self.server: DirectSocket | None = None
        dst = world.machine_by_address(sim_addr)
        if dst is None or dst.state != "up":
            close()
            return
        listener = dst.find_listener(sim_port, sim_addr)
        if listener is None:
            close()
            return
        dst.touch()
        server = DirectSocket("tcp")
        dst.alloc_fd(server)
        server.state = "connected"
        server.local_addr, server.local_port = sim_addr, sim_port
        server.remote_addr, server.remote_port = "external", 0
        server.peer = BridgeEndpoint(send, close)
        self.server = server
        kind, endpoint = listener
        if kind == "app":
            server.app = endpoint.name
            if endpoint.banner:
                send(endpoint.banner.encode("utf-8"))
        else:
            endpoint.backlog.append(server)
            _notify(world, endpoint)

    def deliver(self, data: bytes) -> None:
        if self.server is not None and self.server.machine is not None:
            self.server.rbuf += data
            self.server.machine.touch()
            _notify(self.world, self.server)

    def closed(self) -> None:
        if self.server is not None:
            self.server.peer_closed = True
            _notify(self.world, self.server)


def external_bind(world, sim_addr: str, sim_port: int,
                  host: str = "127.0.0.1", real_port: int = 0) -> ExternalBridge:
    """Expose a simulated listener on a real TCP port."""

    def factory(w, send, close):
        return _SimConnSink(w, sim_addr, sim_port, send, close)

    bridge = ExternalBridge(world, factory, host, real_port)
    world.bridges.append(bridge)
    return bridge
