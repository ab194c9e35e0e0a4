"""Agents: attacker footholds forming a tree rooted at the local agent.

Every agent speaks the same small syscall set regardless of the platform it
sits on.  Requests and responses have a stable wire form (version byte,
length-prefixed fields, little-endian integers) so they survive proxying
through chains of agents bit for bit.
"""
from __future__ import annotations

import json
import logging
import shlex
import struct
from dataclasses import dataclass, field
from typing import Any

from . import net
from .errors import (BadDescriptorError, ChainBrokenError, ChannelError,
                     CommandError, DeadAgentError, DeadMachineError, FileError,
                     PeerResetError, PortBindError, SimError)
from .model import agent_presence

logger = logging.getLogger(__name__)

WIRE_VERSION = 1
KIND_REQUEST = 1
KIND_RESPONSE = 2

TAG_INT = 0x49    # 'I'
TAG_BYTES = 0x42  # 'B'
TAG_STR = 0x53    # 'S'
TAG_NONE = 0x4E   # 'N'
TAG_LIST = 0x4C   # 'L'

OK = 0
E_NOENT = 2
E_IO = 5
E_BADF = 9
E_AGAIN = 11
E_INVAL = 22
E_NOSYS = 38
E_ADDRINUSE = 98
E_RESET = 104
E_TIMEDOUT = 110
E_REFUSED = 111
E_HOSTDOWN = 112

SYSCALL_SET = ("open", "read", "write", "close", "connect", "bind", "listen",
               "accept", "send", "recv", "list-dir", "exec-builtin", "getinfo")


class ConnectionKind:
    CONNECT_TO = "connect-to-target"
    CONNECT_FROM = "connect-from-target"
    REUSE = "reuse-connection"
    HTTP_TUNNEL = "http-tunnel"

    ALL = (CONNECT_TO, CONNECT_FROM, REUSE, HTTP_TUNNEL)


@dataclass
class ConnectionMethod:
    kind: str
    port: int | None = None

    def __post_init__(self):
        if self.kind not in ConnectionKind.ALL:
            raise ChannelError(f"unknown connection method {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "port": self.port}


@dataclass
class Agent:
    id: str
    machine: str
    privilege: str = "user"  # "user" or "root"
    parent: str | None = None
    channel: ConnectionMethod | None = None
    alive: bool = True
    process: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "machine": self.machine, "privilege": self.privilege,
                "parent": self.parent, "alive": self.alive,
                "channel": self.channel.to_dict() if self.channel else None}


@dataclass
class SyscallRequest:
    opcode: str
    args: list[Any] = field(default_factory=list)


@dataclass
class SyscallResponse:
    status: int
    results: list[Any] = field(default_factory=list)


# --- wire marshaling ----------------------------------------------------------

def _encode_value(value: Any, out: bytearray) -> None:
    if value is None:
        out.append(TAG_NONE)
    elif isinstance(value, bool):
        raise SimError("wire format carries ints, not booleans")
    elif isinstance(value, int):
        out.append(TAG_INT)
        out += struct.pack("<q", value)
    elif isinstance(value, (bytes, bytearray)):
        out.append(TAG_BYTES)
        out += struct.pack("<I", len(value))
        out += bytes(value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(TAG_STR)
        out += struct.pack("<I", len(raw))
        out += raw
    elif isinstance(value, (list, tuple)):
        out.append(TAG_LIST)
        out += struct.pack("<H", len(value))
        for item in value:
            _encode_value(item, out)
    else:
        raise SimError(f"value {value!r} has no wire form")


def _decode_value(data: bytes, pos: int) -> tuple[Any, int]:
    tag = data[pos]
    pos += 1
    if tag == TAG_NONE:
        return None, pos
    if tag == TAG_INT:
        return struct.unpack_from("<q", data, pos)[0], pos + 8
    if tag == TAG_BYTES:
        n = struct.unpack_from("<I", data, pos)[0]
        pos += 4
        return bytes(data[pos:pos + n]), pos + n
    if tag == TAG_STR:
        n = struct.unpack_from("<I", data, pos)[0]
        pos += 4
        return data[pos:pos + n].decode("utf-8"), pos + n
    if tag == TAG_LIST:
        count = struct.unpack_from("<H", data, pos)[0]
        pos += 2
        items = []
        for _ in range(count):
            item, pos = _decode_value(data, pos)
            items.append(item)
        return items, pos
    raise SimError(f"bad wire tag 0x{tag:02x} at offset {pos - 1}")


def encode_request(request: SyscallRequest) -> bytes:
    out = bytearray((WIRE_VERSION, KIND_REQUEST))
    opcode = request.opcode.encode("ascii")
    out.append(len(opcode))
    out += opcode
    out += struct.pack("<H", len(request.args))
    for arg in request.args:
        _encode_value(arg, out)
    return bytes(out)


def decode_request(data: bytes) -> SyscallRequest:
    if len(data) < 4 or data[0] != WIRE_VERSION:
        raise SimError("bad wire version")
    if data[1] != KIND_REQUEST:
        raise SimError("frame is not a request")
    n = data[2]
    opcode = data[3:3 + n].decode("ascii")
    pos = 3 + n
    argc = struct.unpack_from("<H", data, pos)[0]
    pos += 2
    args = []
    for _ in range(argc):
        value, pos = _decode_value(data, pos)
        args.append(value)
    if pos != len(data):
        raise SimError("trailing bytes after request")
    return SyscallRequest(opcode, args)


def encode_response(response: SyscallResponse) -> bytes:
    out = bytearray((WIRE_VERSION, KIND_RESPONSE))
    out += struct.pack("<i", response.status)
    out += struct.pack("<H", len(response.results))
    for value in response.results:
        _encode_value(value, out)
    return bytes(out)


def decode_response(data: bytes) -> SyscallResponse:
    if len(data) < 4 or data[0] != WIRE_VERSION:
        raise SimError("bad wire version")
    if data[1] != KIND_RESPONSE:
        raise SimError("frame is not a response")
    status = struct.unpack_from("<i", data, 2)[0]
    pos = 6
    count = struct.unpack_from("<H", data, pos)[0]
    pos += 2
    results = []
    for _ in range(count):
        value, pos = _decode_value(data, pos)
        results.append(value)
    if pos != len(data):
        raise SimError("trailing bytes after response")
    return SyscallResponse(status, results)


def wire_pack(frame: bytes) -> bytes:
    """Outer length prefix for frames carried over a byte stream."""
    return struct.pack("<I", len(frame)) + frame


def wire_unpack(buffer: bytearray) -> bytes | None:
    if len(buffer) < 4:
        return None
    n = struct.unpack_from("<I", buffer, 0)[0]
    if len(buffer) < 4 + n:
        return None
    frame = bytes(buffer[4:4 + n])
    del buffer[:4 + n]
    return frame


# --- universal syscall execution ------------------------------------------------

def execute_syscall(world, machine: net.Machine, request: SyscallRequest,
                    privilege: str = "user") -> SyscallResponse:
    """Run one universal syscall against a machine's simulated OS.

    Never blocks: operations that would wait return E_AGAIN and the caller
    retries.  Counts toward the engine's syscall throughput statistics.
    """
    world.stats.syscalls_executed += 1
    if machine.state != "up":
        return SyscallResponse(E_HOSTDOWN, [f"{machine.id} is {machine.state}"])
    machine.touch()
    try:
        return _dispatch_syscall(world, machine, request, privilege)
    except BadDescriptorError as exc:
        return SyscallResponse(E_BADF, [str(exc)])
    except FileError as exc:
        return SyscallResponse(E_NOENT, [str(exc)])
    except PortBindError as exc:
        return SyscallResponse(E_ADDRINUSE, [str(exc)])
    except PeerResetError as exc:
        return SyscallResponse(E_RESET, [str(exc)])
    except CommandError as exc:
        return SyscallResponse(E_INVAL, [str(exc)])
    except (IndexError, TypeError, ValueError) as exc:
        return SyscallResponse(E_INVAL, [f"bad arguments: {exc}"])


def _dispatch_syscall(world, machine: net.Machine, request: SyscallRequest,
                      privilege: str) -> SyscallResponse:
    op = request.opcode
    args = request.args
    if op == "open":
        path, mode = args[0], (args[1] if len(args) > 1 else "r")
        if mode not in ("r", "w", "a"):
            return SyscallResponse(E_INVAL, [f"bad mode {mode!r}"])
        if mode == "r" and not machine.fs.exists(path):
            return SyscallResponse(E_NOENT, [f"{path!r} does not exist"])
        if mode == "w":
            machine.fs.write(path, b"")
        handle = net.FileHandle(path, mode)
        fd = machine.alloc_fd(handle)
        if mode == "a" and machine.fs.exists(path):
            handle.pos = len(machine.fs.read(path))
        return SyscallResponse(OK, [fd])
    if op == "read":
        fd, n = args[0], args[1]
        desc = machine.get_desc(fd)
        if isinstance(desc, net.FileHandle):
            content = machine.fs.read(desc.path)
            data = content[desc.pos:desc.pos + n]
            desc.pos += len(data)
            return SyscallResponse(OK, [data])
        data, eof = net.sock_recv(world, machine, fd, n)
        if data is None and not eof:
            return SyscallResponse(E_AGAIN, [b""])
        return SyscallResponse(OK, [data if data is not None else b""])
    if op == "write":
        fd, data = args[0], args[1]
        desc = machine.get_desc(fd)
        if isinstance(desc, net.FileHandle):
            if desc.mode == "r":
                return SyscallResponse(E_INVAL, ["descriptor is read-only"])
            current = machine.fs.read(desc.path) if machine.fs.exists(desc.path) else b""
            new = current[:desc.pos] + bytes(data) + current[desc.pos + len(data):]
            machine.fs.write(desc.path, new)
            desc.pos += len(data)
            return SyscallResponse(OK, [len(data)])
        n = net.sock_send(world, machine, fd, bytes(data))
        return SyscallResponse(OK, [n])
    if op == "close":
        net.close_fd(world, machine, args[0])
        return SyscallResponse(OK, [])
    if op == "connect":
        host, port = args[0], args[1]
        res = net.connect_tcp(world, machine, host, port)
        if res.outcome == "connected":
            return SyscallResponse(OK, [res.fd])
        if res.outcome == "refused":
            return SyscallResponse(E_REFUSED, [f"{host}:{port} refused"])
        return SyscallResponse(E_TIMEDOUT, [f"{host}:{port} timed out"])
    if op == "bind":
        port = args[0]
        proto = args[1] if len(args) > 1 else "udp"
        if proto == "udp":
            fd = net.bind_udp(world, machine, port)
        else:
            fd = net.listen_tcp(world, machine, port)
        return SyscallResponse(OK, [fd])
    if op == "listen":
        fd = args[0]
        desc = machine.get_desc(fd)
        if not isinstance(desc, net.DirectSocket) or desc.protocol != "tcp":
            return SyscallResponse(E_BADF, ["not a stream socket"])
        desc.state = "listening"
        return SyscallResponse(OK, [])
    if op == "accept":
        got = net.accept_pending(world, machine, args[0])
        if got is None:
            return SyscallResponse(E_AGAIN, [])
        fd, addr, port = got
        return SyscallResponse(OK, [fd, addr, port])
    if op == "send":
        n = net.sock_send(world, machine, args[0], bytes(args[1]))
        return SyscallResponse(OK, [n])
    if op == "recv":
        data, eof = net.sock_recv(world, machine, args[0], args[1])
        if data is None and not eof:
            return SyscallResponse(E_AGAIN, [b""])
        return SyscallResponse(OK, [data if data is not None else b""])
    if op == "list-dir":
        names = machine.fs.list_dir(args[0] if args else "/")
        return SyscallResponse(OK, [names])
    if op == "exec-builtin":
        output = run_builtin(world, machine, privilege, args[0])
        return SyscallResponse(OK, [output])
    if op == "getinfo":
        return _getinfo(machine, args[0] if args else "os")
    return SyscallResponse(E_NOSYS, [f"unknown opcode {op!r}"])


def _getinfo(machine: net.Machine, what: str) -> SyscallResponse:
    if what == "os":
        payload: Any = machine.os.to_dict()
    elif what == "users":
        payload = list(machine.users)
    elif what == "apps":
        payload = [{"name": a.name, "version": list(a.version), "status": a.status,
                    "ports": list(a.listen_ports)} for a in machine.applications]
    elif what == "ifaces":
        payload = [{"address": i.address, "network": i.network}
                   for i in machine.interfaces]
    else:
        return SyscallResponse(E_INVAL, [f"getinfo {what!r} not understood"])
    return SyscallResponse(OK, [json.dumps(payload, sort_keys=True).encode("utf-8")])


# --- shell builtins ---------------------------------------------------------------

def run_builtin(world, machine: net.Machine, privilege: str, cmdline: str) -> bytes:
    argv = shlex.split(cmdline)
    if not argv:
        raise CommandError("empty command")
    cmd, args = argv[0], argv[1:]
    if cmd == "whoami":
        return (("root" if privilege == "root" else "user") + "\n").encode()
    if cmd == "ls":
        names = machine.fs.list_dir(args[0] if args else "/")
        return ("\n".join(names) + "\n").encode()
    if cmd == "cat":
        if not args:
            raise CommandError("cat needs a path")
        return machine.fs.read(args[0])
    if cmd == "ps":
        lines = ["PID NAME OWNER"]
        for proc in machine.processes:
            lines.append(f"{proc.pid} {proc.name} {proc.owner}")
        return ("\n".join(lines) + "\n").encode()
    if cmd == "ifconfig":
        lines = [f"eth{i}: {iface.address} ({iface.network})"
                 for i, iface in enumerate(machine.interfaces)]
        return ("\n".join(lines) + "\n").encode()
    raise CommandError(f"unknown builtin {cmd!r}")


def agent_shell(world, agent_id: str, cmdline: str) -> bytes:
    agent = world.find_alive_agent(agent_id)
    machine = world.machines[agent.machine]
    if machine.state != "up":
        raise DeadMachineError(f"{machine.id} is {machine.state}")
    machine.touch()
    world.stats.syscalls_executed += 1
    return run_builtin(world, machine, agent.privilege, cmdline)


# --- installation and proxying ------------------------------------------------------

DEFAULT_AGENT_PORT = 4444
DEFAULT_CALLBACK_PORT = 4445
DEFAULT_TUNNEL_PORT = 80


def install_agent(world, machine_id: str, method: ConnectionMethod,
                  parent_id: str, reuse_socket: net.DirectSocket | None = None,
                  process: net.Process | None = None,
                  privilege: str = "user") -> Agent:
    """Plant an agent on a machine, checking its control channel first.

    connect-to-target and http-tunnel dial the machine from the parent's
    host; connect-from-target dials back out, so it works through firewalls
    that only block inbound traffic.  reuse-connection rides an existing
    connected socket and never opens a new connection.
    """
    machine = world.machines.get(machine_id)
    if machine is None or machine.state != "up":
        raise DeadMachineError(f"machine {machine_id!r} is unavailable")
    parent = world.find_alive_agent(parent_id)
    parent_machine = world.machines[parent.machine]

    if method.kind == ConnectionKind.REUSE:
        if reuse_socket is None or reuse_socket.state != "connected":
            raise ChannelError("reuse-connection needs an established socket")
        peer = reuse_socket.peer
        if not isinstance(peer, net.DirectSocket) or peer.machine is not machine:
            raise ChannelError("existing connection does not reach the target")
    elif method.kind == ConnectionKind.CONNECT_TO:
        port = method.port or DEFAULT_AGENT_PORT
        r = net.route(world, parent_machine.primary_address,
                      machine.primary_address, port)
        if r.status != "ok":
            raise ChannelError(f"cannot reach {machine_id} on port {port}: {r.status}")
        world.connections += 1
    elif method.kind == ConnectionKind.HTTP_TUNNEL:
        port = method.port or DEFAULT_TUNNEL_PORT
        r = net.route(world, parent_machine.primary_address,
                      machine.primary_address, port)
        if r.status != "ok":
            raise ChannelError(f"no tunnel path to {machine_id}: {r.status}")
        world.connections += 1
    elif method.kind == ConnectionKind.CONNECT_FROM:
        port = method.port or DEFAULT_CALLBACK_PORT
        r = net.route(world, machine.primary_address,
                      parent_machine.primary_address, port)
        if r.status != "ok":
            raise ChannelError(f"{machine_id} cannot call back: {r.status}")
        world.connections += 1

    if process is None:
        process = machine.spawn_process("agentd", owner="root" if privilege == "root" else "user")
    agent = Agent(world.next_agent_id(), machine_id, privilege,
                  parent_id, method, True, process.pid)
    world.agents[agent.id] = agent
    machine.touch()
    world.assert_asset(agent_presence(machine.primary_address or machine_id, agent.id))
    world.emit("agent", {"agent": agent.id, "machine": machine_id, "alive": True,
                         "parent": parent_id, "method": method.kind})
    return agent


def proxy_syscall(world, chain: list[str], request: SyscallRequest) -> SyscallResponse:
    """Run a syscall on the last agent of a chain, hop by hop.

    The request is re-marshaled at every hop exactly as it would be on the
    wire, so a response that comes back bit-identical to local execution is
    a real guarantee, not an artifact of sharing objects.
    """
    if not chain:
        raise ChannelError("empty agent chain")
    agents = []
    for agent_id in chain:
        agent = world.agents.get(agent_id)
        if agent is None or not agent.alive:
            raise ChainBrokenError(agent_id)
        agents.append(agent)
    for parent, child in zip(agents, agents[1:]):
        if child.parent != parent.id:
            raise ChannelError(f"{child.id} has no channel from {parent.id}")

    wire = encode_request(request)
    for _ in agents[1:]:
        wire = encode_request(decode_request(wire))
    final = agents[-1]
    machine = world.machines[final.machine]
    response = execute_syscall(world, machine, decode_request(wire), final.privilege)
    back = encode_response(response)
    for _ in agents[1:]:
        back = encode_response(decode_response(back))
    return decode_response(back)


# --- external wire endpoint -----------------------------------------------------------

class _AgentFrameSink:
    """Feeds length-prefixed syscall frames from a real socket to an agent."""

    def __init__(self, world, agent_id: str, send, close):
        self.world = world
        self.agent_id = agent_id
        self.send = send
        self.close = close
        self.buffer = bytearray()

    def deliver(self, data: bytes) -> None:
        self.buffer += data
        while True:
            frame = wire_unpack(self.buffer)
            if frame is None:
                return
            try:
                agent = self.world.find_alive_agent(self.agent_id)
                request = decode_request(frame)
                machine = self.world.machines[agent.machine]
                response = execute_syscall(self.world, machine, request, agent.privilege)
            except SimError as exc:
                response = SyscallResponse(E_IO, [str(exc)])
            self.send(wire_pack(encode_response(response)))

    def closed(self) -> None:
        pass


def bind_agent_endpoint(world, agent_id: str, host: str = "127.0.0.1",
                        real_port: int = 0) -> net.ExternalBridge:
    """Expose an agent's syscall interface on a real TCP port."""

    def factory(w, send, close):
        return _AgentFrameSink(w, agent_id, send, close)

    bridge = net.ExternalBridge(world, factory, host, real_port)
    world.bridges.append(bridge)
    return bridge
