"""Scenario documents: JSON in, a fully built world out, and back again.

A scenario is the static description (networks, machines, templates, the
vulnerability database, signature rules, seed).  A snapshot embeds the
scenario plus everything mutable, so a restored world continues exactly
where the original stopped; taking one requires a quiescent engine.
"""
from __future__ import annotations

import json
import os
from typing import Any

from . import net
from .actions import OSSignatureDB
from .agents import Agent, ConnectionMethod
from .errors import BusyError, ValidationError
from .exploitdb import parse_vulndb
from .model import (Asset, AssetKind, EnvironmentKnowledge, NoiseCategory,
                    NoiseEvent, agent_presence)
from .sched import SchedulerConfig
from .vfs import TemplateFS
from .world import EventRecord, World, WorldConfig

SCENARIO_VERSION = 1
SNAPSHOT_VERSION = 1

WORLD_CONFIG_KEYS = ("filtered_timeout_ms", "reboot_ms", "app_restart_ms",
                     "fingerprint_accuracy", "cache_capacity")


def _need(doc: dict, key: str, kinds, where: str) -> Any:
    if key not in doc:
        raise ValidationError(f"missing required key {key!r}", where)
    value = doc[key]
    if not isinstance(value, kinds):
        names = kinds.__name__ if isinstance(kinds, type) else \
            "/".join(k.__name__ for k in kinds)
        raise ValidationError(f"{key!r} must be {names}, got {type(value).__name__}",
                              f"{where}.{key}" if where else key)
    return value


def _opt(doc: dict, key: str, kinds, where: str, default: Any = None) -> Any:
    if key not in doc or doc[key] is None:
        return default
    return _need(doc, key, kinds, where)


def _no_unknown_keys(doc: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ValidationError(f"unknown keys {unknown}", where)


# --- document pieces ----------------------------------------------------------

def _load_template(doc: dict, index: int, base_dir: str) -> TemplateFS:
    where = f"templates[{index}]"
    if "path" in doc:
        path = doc["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if not os.path.isdir(path):
            raise ValidationError(f"template directory {path!r} does not exist", where)
        template = TemplateFS.from_dir(path)
        declared = doc.get("id")
        if declared is not None and declared != template.id:
            raise ValidationError(
                f"bundle manifest says id {template.id!r}, scenario says {declared!r}",
                where)
        return template
    tid = _need(doc, "id", str, where)
    files = _need(doc, "files", dict, where)
    return TemplateFS(tid, files)


def _load_text_source(value: Any, base_dir: str, where: str) -> str:
    """Inline string, or {"path": ...} relative to the scenario file."""
    if isinstance(value, str):
        return value
    if isinstance(value, dict) and "path" in value:
        path = value["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        try:
            with open(path, encoding="utf-8") as fh:
                return fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read {path!r}: {exc}", where) from None
    raise ValidationError("expected inline text or {\"path\": ...}", where)


def _build_os(doc: dict, where: str) -> net.OSDescriptor:
    name = _need(doc, "name", str, where)
    return net.OSDescriptor(
        name=name,
        arch=_opt(doc, "arch", str, where, "i386"),
        version=_opt(doc, "version", str, where, ""),
        edition=_opt(doc, "edition", str, where, ""),
        servicepack=_opt(doc, "servicepack", str, where, ""),
    )


def _build_application(doc: dict, where: str) -> net.ApplicationInstance:
    name = _need(doc, "name", str, where)
    version = _opt(doc, "version", (list, tuple), where, [1, 0])
    ports = _opt(doc, "listen_ports", list, where, [])
    status = _opt(doc, "status", str, where, "running")
    try:
        return net.ApplicationInstance(
            name=name, version=tuple(version), status=status,
            listen_ports=[int(p) for p in ports],
            banner=_opt(doc, "banner", str, where, ""))
    except ValidationError as exc:
        raise ValidationError(str(exc), where) from None


def _build_filter_rule(doc: dict, where: str) -> net.FilterRule:
    direction = _need(doc, "direction", str, where)
    if direction not in ("in", "out", "both"):
        raise ValidationError(f"direction {direction!r} not in/out/both", where)
    verdict = _need(doc, "verdict", str, where)
    if verdict not in ("allow", "deny"):
        raise ValidationError(f"verdict {verdict!r} not allow/deny", where)
    ports = _opt(doc, "ports", (list, int), where)
    if isinstance(ports, int):
        ports = (ports, ports)
    elif ports is not None:
        if len(ports) != 2:
            raise ValidationError("ports must be [low, high]", where)
        ports = (int(ports[0]), int(ports[1]))
    return net.FilterRule(direction, _opt(doc, "pattern", str, where, "any"),
                          ports, verdict)


def _build_machine(doc: dict, index: int, world: World) -> net.Machine:
    where = f"machines[{index}]"
    _no_unknown_keys(doc, {"id", "os", "interfaces", "applications", "roles",
                           "filter_rules", "template", "users", "hidden"}, where)
    mid = _need(doc, "id", str, where)
    os_desc = _build_os(_need(doc, "os", dict, where), f"{where}.os")
    interfaces = []
    for i, iface in enumerate(_need(doc, "interfaces", list, where)):
        iwhere = f"{where}.interfaces[{i}]"
        interfaces.append(net.Interface(_need(iface, "address", str, iwhere),
                                        _need(iface, "network", str, iwhere)))
    applications = [
        _build_application(app, f"{where}.applications[{i}]")
        for i, app in enumerate(_opt(doc, "applications", list, where, []))
    ]
    rules = [
        _build_filter_rule(rule, f"{where}.filter_rules[{i}]")
        for i, rule in enumerate(_opt(doc, "filter_rules", list, where, []))
    ]
    template = None
    template_id = _opt(doc, "template", str, where)
    if template_id is not None:
        template = world.templates.get(template_id)
        if template is None:
            raise ValidationError(f"unknown template {template_id!r}", f"{where}.template")
    return net.Machine(
        mid, os_desc, interfaces, applications,
        roles=set(_opt(doc, "roles", list, where, [])),
        filter_rules=rules, template=template, cache=world.cache,
        users=_opt(doc, "users", list, where),
        hidden=_opt(doc, "hidden", dict, where),
    )


# --- scenario loading -------------------------------------------------------------

def load_scenario(doc: dict[str, Any], base_dir: str = ".",
                  seed_override: int | None = None) -> World:
    where = ""
    _no_unknown_keys(doc, {"version", "name", "seed", "config", "scheduler",
                           "templates", "vulndb", "signatures", "networks",
                           "machines", "attacker"}, "scenario")
    version = _need(doc, "version", int, where)
    if version != SCENARIO_VERSION:
        raise ValidationError(f"unsupported scenario version {version}", "version")
    seed = _need(doc, "seed", int, where)
    if seed_override is not None:
        seed = seed_override

    config = WorldConfig()
    for key, value in _opt(doc, "config", dict, where, {}).items():
        if key not in WORLD_CONFIG_KEYS:
            raise ValidationError(f"unknown config key {key!r}", "config")
        setattr(config, key, type(getattr(config, key))(value))
    sched_config = SchedulerConfig.from_mapping(_opt(doc, "scheduler", dict, where, {}))

    world = World(seed, config, sched_config)
    world.scenario_name = _opt(doc, "name", str, where, "unnamed")

    for i, tdoc in enumerate(_opt(doc, "templates", list, where, [])):
        world.add_template(_load_template(tdoc, i, base_dir))
    if "vulndb" in doc and doc["vulndb"] is not None:
        world.vulndb = parse_vulndb(_load_text_source(doc["vulndb"], base_dir, "vulndb"))
    if "signatures" in doc and doc["signatures"] is not None:
        world.signature_db = OSSignatureDB.parse(
            _load_text_source(doc["signatures"], base_dir, "signatures"))

    for i, ndoc in enumerate(_need(doc, "networks", list, where)):
        nwhere = f"networks[{i}]"
        try:
            segment = net.NetworkSegment(
                _need(ndoc, "id", str, nwhere),
                _need(ndoc, "prefix", str, nwhere),
                _opt(ndoc, "kind", str, nwhere, "switch"))
            world.add_segment(segment)
        except ValidationError as exc:
            if exc.location:
                raise
            raise ValidationError(exc.args[0], nwhere) from None

    machines = _need(doc, "machines", list, where)
    if not machines:
        raise ValidationError("scenario has no machines", "machines")
    for i, mdoc in enumerate(machines):
        machine = _build_machine(mdoc, i, world)
        try:
            world.add_machine(machine)
        except ValidationError as exc:
            if exc.location:
                raise
            raise ValidationError(exc.args[0], f"machines[{i}]") from None

    attacker_id = _opt(doc, "attacker", str, where)
    if attacker_id is None:
        attacker_id = "attacker" if "attacker" in world.machines else next(iter(world.machines))
    if attacker_id not in world.machines:
        raise ValidationError(f"attacker machine {attacker_id!r} not defined", "attacker")
    attacker = world.machines[attacker_id]
    local = Agent("local", attacker_id, privilege="root", parent=None,
                  channel=None, process=attacker.processes[0].pid)
    world.agents["local"] = local
    world.local_agent = "local"
    world.assert_asset(agent_presence(attacker.primary_address or attacker_id, "local"))
    return world


def load_scenario_file(path: str, seed_override: int | None = None) -> World:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"scenario is not valid JSON: {exc}", path) from None
    if not isinstance(doc, dict):
        raise ValidationError("scenario root must be an object", path)
    return load_scenario(doc, base_dir=os.path.dirname(os.path.abspath(path)),
                         seed_override=seed_override)


# --- benchmark generation -----------------------------------------------------------

def benchmark_document(networks: int = 100, per_network: int = 10,
                       seed: int = 1234) -> dict[str, Any]:
    """A wide star topology: one core router joining every segment.

    Sized so that `networks * per_network` mostly-idle machines exist and
    any of them is reachable from the attacker in two hops.
    """
    nets = []
    machines = []
    router_ifaces = []
    for k in range(networks):
        prefix = f"10.{100 + k // 250}.{k % 250}"
        nets.append({"id": f"net-{k}", "prefix": prefix})
        router_ifaces.append({"address": f"{prefix}.1", "network": f"net-{k}"})
        for j in range(per_network):
            addr = f"{prefix}.{10 + j}"
            machines.append({
                "id": f"host-{k}-{j}",
                "os": {"name": "linux", "version": "2.4"},
                "interfaces": [{"address": addr, "network": f"net-{k}"}],
                "applications": [{"name": "echo-service", "version": [1, 0],
                                  "listen_ports": [7], "banner": "echo 1.0 ready"}],
            })
    machines.insert(0, {
        "id": "core-router",
        "os": {"name": "ios", "version": "12"},
        "interfaces": router_ifaces,
        "roles": ["router"],
    })
    machines.insert(0, {
        "id": "attacker",
        "os": {"name": "linux", "version": "2.6"},
        "interfaces": [{"address": "10.100.0.250", "network": "net-0"}],
    })
    return {
        "version": SCENARIO_VERSION,
        "name": f"benchmark-{networks}x{per_network}",
        "seed": seed,
        "networks": nets,
        "machines": machines,
        "attacker": "attacker",
    }


# --- snapshots -----------------------------------------------------------------------

def _rng_state_to_json(state) -> list:
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _rng_state_from_json(blob) -> tuple:
    version, internal, gauss = blob
    return (version, tuple(internal), gauss)


def scenario_document(world: World) -> dict[str, Any]:
    """Re-derive a loadable scenario from a built world (always inline)."""
    doc: dict[str, Any] = {
        "version": SCENARIO_VERSION,
        "name": getattr(world, "scenario_name", "unnamed"),
        "seed": world.seed,
        "config": {key: getattr(world.config, key) for key in WORLD_CONFIG_KEYS},
        "scheduler": world.sched_config.to_dict(),
        "networks": [{"id": s.id, "prefix": s.prefix, "kind": s.kind}
                     for s in world.segments.values()],
        "machines": [],
        "attacker": world.agents["local"].machine if "local" in world.agents else None,
    }
    doc["templates"] = [
        {"id": t.id, "files": {p: data.decode("utf-8", "surrogateescape")
                               for p, data in sorted(t.contents().items())}}
        for t in world.templates.values()
    ]
    if len(world.vulndb):
        doc["vulndb"] = world.vulndb.source
    if world.signature_db is not None:
        doc["signatures"] = world.signature_db.dump()
    for machine in world.machines.values():
        mdoc: dict[str, Any] = {
            "id": machine.id,
            "os": {k: v for k, v in machine.os.to_dict().items() if v},
            "interfaces": [{"address": i.address, "network": i.network}
                           for i in machine.interfaces],
        }
        if machine.applications:
            mdoc["applications"] = [
                {"name": a.name, "version": list(a.version),
                 "status": a.configured_status, "listen_ports": list(a.listen_ports),
                 "banner": a.banner}
                for a in machine.applications
            ]
        if machine.roles:
            mdoc["roles"] = sorted(machine.roles)
        if machine.filter_rules:
            mdoc["filter_rules"] = [
                {"direction": r.direction, "pattern": r.pattern,
                 "ports": list(r.ports) if r.ports else None, "verdict": r.verdict}
                for r in machine.filter_rules
            ]
        if machine.fs.template.id != "empty":
            mdoc["template"] = machine.fs.template.id
        if machine.users != ["root"]:
            mdoc["users"] = list(machine.users)
        if machine.hidden:
            mdoc["hidden"] = dict(machine.hidden)
        doc["machines"].append(mdoc)
    return doc


def take_snapshot(world: World) -> dict[str, Any]:
    """Freeze a quiescent world into a plain JSON-serializable document."""
    if world.has_live_threads():
        raise BusyError("threads are still running; let the engine drain first")
    if not world.queue_empty():
        raise BusyError("commands are still queued; let the engine drain first")

    snap: dict[str, Any] = {
        "snapshot_version": SNAPSHOT_VERSION,
        "scenario": scenario_document(world),
        "clock": world.clock,
        "rng_state": _rng_state_to_json(world.rng.getstate()),
        "machines": {},
        "agents": {aid: a.to_dict() | {"process": a.process}
                   for aid, a in world.agents.items()},
        "env": world.env.snapshot(),
        "noise": [ev.to_dict() for ev in world.noise.events],
        "events": [ev.to_dict() for ev in world.events],
        "event_seq": world._seq,
        "action_log": world.action_log,
        "timers": [
            {"at": t.at, "kind": t.kind, "data": t.data}
            for t in sorted(world._timers)
            if not t.canceled and t.kind in ("reboot-os", "restart-app")
        ],
        "counters": {
            "route_calls": world.route_calls,
            "connections": world.connections,
            "arrivals": world.arrivals,
            "syscalls_executed": world.stats.syscalls_executed,
            "machine_runs": world.stats.machine_runs,
            "sleeps": world.stats.sleeps,
            "agent_seq": world._agent_seq,
            "action_seq": world._action_seq,
            "request_seq": world._request_seq,
        },
    }
    for mid, machine in world.machines.items():
        snap["machines"][mid] = {
            "state": machine.state,
            "fs": machine.fs.state(),
            "apps": [{"name": a.name, "status": a.status} for a in machine.applications],
            "processes": [{"pid": p.pid, "name": p.name, "owner": p.owner, "app": p.app}
                          for p in machine.processes],
            "next_pid": machine._next_pid,
            "next_ephemeral": machine._next_ephemeral,
            "touch_count": machine.touch_count,
        }
    return snap


def restore_snapshot(snap: dict[str, Any], base_dir: str = ".") -> World:
    version = snap.get("snapshot_version")
    if version != SNAPSHOT_VERSION:
        raise ValidationError(f"unsupported snapshot version {version!r}",
                              "snapshot_version")
    world = load_scenario(snap["scenario"], base_dir)
    world.clock = float(snap["clock"])
    world.rng.setstate(_rng_state_from_json(snap["rng_state"]))

    for mid, mstate in snap["machines"].items():
        machine = world.machines.get(mid)
        if machine is None:
            raise ValidationError(f"snapshot names unknown machine {mid!r}",
                                  f"machines.{mid}")
        machine.state = mstate["state"]
        machine.fs.load_state(mstate["fs"])
        for adoc in mstate["apps"]:
            app = machine.find_app(name=adoc["name"])
            if app is not None:
                app.status = adoc["status"]
        machine.processes = [
            net.Process(p["pid"], p["name"], p["owner"], p.get("app"))
            for p in mstate["processes"]
        ]
        machine._next_pid = mstate["next_pid"]
        machine._next_ephemeral = mstate["next_ephemeral"]
        machine.touch_count = mstate["touch_count"]

    world.agents.clear()
    for aid, adoc in snap["agents"].items():
        channel = adoc.get("channel")
        world.agents[aid] = Agent(
            aid, adoc["machine"], adoc["privilege"], adoc["parent"],
            None if channel is None else ConnectionMethod(channel["kind"],
                                                          channel.get("port")),
            adoc["alive"], adoc.get("process", 1))
    world.local_agent = "local" if "local" in world.agents else None

    world.env = EnvironmentKnowledge()
    for adoc in snap["env"]:
        world.env.assert_asset(Asset(AssetKind(adoc["kind"]), adoc["attributes"],
                                     adoc["probability"]))
    world.noise.events = [
        NoiseEvent(n["sensor"], NoiseCategory(n["category"]), n["magnitude"],
                   n["action"], n["timestamp"])
        for n in snap["noise"]
    ]
    world.events = [EventRecord(e["seq"], e["time"], e["category"], e["payload"])
                    for e in snap["events"]]
    world._seq = snap["event_seq"]
    world.action_log = dict(snap["action_log"])
    for tdoc in snap["timers"]:
        delay = max(0.0, tdoc["at"] - world.clock)
        world.add_timer(delay, tdoc["kind"], tdoc["data"])

    counters = snap["counters"]
    world.route_calls = counters["route_calls"]
    world.connections = counters["connections"]
    world.arrivals = counters["arrivals"]
    world.stats.syscalls_executed = counters["syscalls_executed"]
    world.stats.machine_runs = counters["machine_runs"]
    world.stats.sleeps = counters["sleeps"]
    world._agent_seq = counters["agent_seq"]
    world._action_seq = counters["action_seq"]
    world._request_seq = counters["request_seq"]
    return world


def save_snapshot(world: World, path: str) -> None:
    snap = take_snapshot(world)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(snap, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_snapshot_file(path: str) -> World:
    with open(path, encoding="utf-8") as fh:
        snap = json.load(fh)
    return restore_snapshot(snap, base_dir=os.path.dirname(os.path.abspath(path)))
