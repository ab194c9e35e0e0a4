"""Command-line console and service entry point.

Two modes: an interactive (or scripted) console that drives the engine in
process, and `--listen`, which serves the control protocol on TCP for
external tools.  Console output is plain and deterministic so scripted
sessions can be diffed run against run.
"""
from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import shlex
import sys
import time
from typing import Any, Callable, TextIO

from . import control, scenario
from .errors import SimError
from .exploitdb import parse_vulndb
from .vfs import TemplateFS

BUILTIN_SCENARIOS = {"lab": "scenario-lab.json"}


def data_path(name: str) -> str:
    return str(importlib.resources.files("redsim").joinpath("data", name))


def _parse_value(token: str) -> Any:
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        return token


def _parse_params(tokens: list[str]) -> dict[str, Any]:
    params: dict[str, Any] = {}
    for token in tokens:
        key, eq, value = token.partition("=")
        if not eq:
            raise SimError(f"expected key=value, got {token!r}")
        params[key] = _parse_value(value)
    return params


class Console:
    """Line-at-a-time console over one in-process world."""

    def __init__(self, world, out: TextIO = sys.stdout):
        self.world = world
        self.api = control.ControlAPI(world)
        self.out = out
        self.agent = world.local_agent or "local"
        self.commands: dict[str, Callable[[list[str]], None]] = {
            "help": self.cmd_help, "status": self.cmd_status,
            "agents": self.cmd_agents, "actions": self.cmd_actions,
            "vulns": self.cmd_vulns, "use": self.cmd_use,
            "discover": self.cmd_discover, "scan": self.cmd_scan,
            "banner": self.cmd_banner, "osdetect": self.cmd_osdetect,
            "fingerprint": self.cmd_fingerprint, "exploit": self.cmd_exploit,
            "localinfo": self.cmd_localinfo, "escalate": self.cmd_escalate,
            "shell": self.cmd_shell, "run": self.cmd_run, "cost": self.cmd_cost,
            "env": self.cmd_env, "noise": self.cmd_noise,
            "cleanup": self.cmd_cleanup, "events": self.cmd_events,
            "snapshot": self.cmd_snapshot,
        }

    def emit(self, text: str = "") -> None:
        self.out.write(text + "\n")

    def handle(self, line: str) -> bool:
        """Run one console line; returns False when the session should end."""
        line = line.strip()
        if not line or line.startswith("#"):
            return True
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            self.emit(f"error: {exc}")
            return True
        cmd, args = tokens[0], tokens[1:]
        if cmd in ("quit", "exit"):
            return False
        handler = self.commands.get(cmd)
        if handler is None:
            self.emit(f"error: unknown command {cmd!r} (try 'help')")
            return True
        try:
            handler(args)
        except SimError as exc:
            self.emit(f"error: {exc}")
        except (IndexError, ValueError) as exc:
            self.emit(f"error: bad arguments: {exc}")
        return True

    # -- command handlers --

    def cmd_help(self, args: list[str]) -> None:
        self.emit("commands: " + " ".join(sorted([*self.commands, "quit"])))

    def cmd_status(self, args: list[str]) -> None:
        info = self.api.describe()
        stats = self.api.stats()
        self.emit(f"scenario={info['name']} seed={info['seed']} "
                  f"machines={info['machines']} networks={info['networks']}")
        self.emit(f"clock={stats['clock']:.3f} syscalls={stats['syscalls_executed']} "
                  f"routes={stats['route_calls']} connections={stats['connections']} "
                  f"agents={stats['agents_alive']}")

    def cmd_agents(self, args: list[str]) -> None:
        for a in self.api.list_agents():
            mark = "*" if a["id"] == self.agent else " "
            state = "alive" if a["alive"] else "dead"
            self.emit(f"{mark}{a['id']} machine={a['machine']} "
                      f"privilege={a['privilege']} {state}")

    def cmd_actions(self, args: list[str]) -> None:
        for spec in self.api.list_actions():
            self.emit(f"{spec['name']} goal={spec['goal']['kind']}")

    def cmd_vulns(self, args: list[str]) -> None:
        for v in self.api.list_vulnerabilities():
            self.emit(f"{v['id']} [{v['locality']}] {v['name']} noise={v['noise']:g}")

    def cmd_use(self, args: list[str]) -> None:
        agent = self.world.find_alive_agent(args[0])
        self.agent = agent.id
        self.emit(f"now acting as {agent.id} on {agent.machine}")

    def _run(self, action: str, params: dict[str, Any]) -> None:
        result = self.api.run_action(self.agent, action, params)
        outcome = result["outcome"]
        detail = json.dumps(outcome["detail"], sort_keys=True)
        self.emit(f"action={action} status={outcome['status']} "
                  f"elapsed={outcome['elapsed']:.3f} "
                  f"produced={len(outcome['produced_assets'])} "
                  f"noise={len(outcome['noise_events'])} detail={detail}")

    def cmd_discover(self, args: list[str]) -> None:
        spec = args[0]
        params: dict[str, Any] = (
            {"targets": spec.split(",")} if "," in spec or spec.count(".") == 3
            else {"network": spec})
        if len(args) > 1:
            lo, _, hi = args[1].partition("-")
            params["range"] = [int(lo), int(hi or lo)]
        self._run("network_discovery", params)

    def cmd_scan(self, args: list[str]) -> None:
        params: dict[str, Any] = {"target": args[0]}
        if len(args) > 1:
            params["ports"] = args[1]
        self._run("port_scan", params)

    def cmd_banner(self, args: list[str]) -> None:
        self._run("banner_grab", {"target": args[0], "port": int(args[1])})

    def cmd_osdetect(self, args: list[str]) -> None:
        self._run("os_detect_by_banner", {"target": args[0]})

    def cmd_fingerprint(self, args: list[str]) -> None:
        self._run("os_fingerprint", {"target": args[0]})

    def cmd_exploit(self, args: list[str]) -> None:
        self._run("run_exploit", {"target": args[0], "port": int(args[1]),
                                  "vuln": args[2]})

    def cmd_localinfo(self, args: list[str]) -> None:
        self._run("local_info_gathering", {})

    def cmd_escalate(self, args: list[str]) -> None:
        self._run("privilege_escalation", {"vuln": args[0]} if args else {})

    def cmd_shell(self, args: list[str]) -> None:
        result = self.api.shell(self.agent, " ".join(args))
        self.out.write(result["output"])
        if not result["output"].endswith("\n"):
            self.emit()

    def cmd_run(self, args: list[str]) -> None:
        self._run(args[0], _parse_params(args[1:]))

    def cmd_cost(self, args: list[str]) -> None:
        cost = self.api.estimate_cost(self.agent, args[0], _parse_params(args[1:]))
        rt = cost["run_time"]
        self.emit(f"success={cost['success_probability']:.4f} "
                  f"stealth={cost['stealthiness']:.4f} "
                  f"zero_day={cost['zero_dayness']:.4f} "
                  f"time={rt['min']:g}/{rt['avg']:g}/{rt['max']:g}ms")

    def cmd_env(self, args: list[str]) -> None:
        assets = self.api.query_env(args[0] if args else None)
        for a in assets:
            attrs = json.dumps(a["attributes"], sort_keys=True)
            self.emit(f"{a['kind']} p={a['probability']:g} {attrs}")
        self.emit(f"({len(assets)} assets)")

    def cmd_noise(self, args: list[str]) -> None:
        events = self.api.noise_report()
        for ev in events:
            self.emit(f"{ev['sensor']} [{ev['category']}] magnitude={ev['magnitude']:g} "
                      f"action={ev['action']}")
        self.emit(f"({len(events)} traces)")

    def cmd_cleanup(self, args: list[str]) -> None:
        result = self.api.cleanup(self.agent)
        self.emit(f"cleanup removed={result['removed']}")

    def cmd_events(self, args: list[str]) -> None:
        since = int(args[0]) if args else 0
        for ev in self.api.events_since(since):
            payload = json.dumps(ev["payload"], sort_keys=True)
            self.emit(f"[{ev['seq']}] t={ev['time']:g} {ev['category']} {payload}")

    def cmd_snapshot(self, args: list[str]) -> None:
        scenario.save_snapshot(self.world, args[0])
        self.emit(f"snapshot written to {args[0]}")


# --- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redsim",
        description="Attacker-side network simulator: console and control service.")
    parser.add_argument("--scenario", required=True,
                        help="scenario JSON path, a snapshot path, 'lab', or 'benchmark'")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    parser.add_argument("--listen", metavar="HOST:PORT", default=None,
                        help="serve the control protocol instead of a console")
    parser.add_argument("--script", metavar="FILE", default=None,
                        help="read console commands from a file")
    parser.add_argument("--vulndb", metavar="FILE", default=None,
                        help="replace the scenario's vulnerability database")
    parser.add_argument("--templates", metavar="DIR", default=None,
                        help="directory of extra template bundles to load")
    return parser


def load_world(args: argparse.Namespace):
    name = args.scenario
    if name in BUILTIN_SCENARIOS:
        name = data_path(BUILTIN_SCENARIOS[name])
    if name == "benchmark":
        doc = scenario.benchmark_document()
        world = scenario.load_scenario(doc, seed_override=args.seed)
    else:
        with open(name, encoding="utf-8") as fh:
            doc = json.load(fh)
        base_dir = os.path.dirname(os.path.abspath(name))
        if "snapshot_version" in doc:
            world = scenario.restore_snapshot(doc, base_dir)
        else:
            world = scenario.load_scenario(doc, base_dir, seed_override=args.seed)
    if args.templates:
        for entry in sorted(os.listdir(args.templates)):
            bundle = os.path.join(args.templates, entry)
            if os.path.isdir(bundle) and os.path.isfile(
                    os.path.join(bundle, "template.json")):
                world.add_template(TemplateFS.from_dir(bundle))
    if args.vulndb:
        with open(args.vulndb, encoding="utf-8") as fh:
            world.vulndb = parse_vulndb(fh.read())
    return world


def run_console(world, source: TextIO, echo: bool, out: TextIO = sys.stdout) -> int:
    console = Console(world, out)
    interactive = source is sys.stdin and sys.stdin.isatty()
    while True:
        if interactive:
            out.write(f"[{console.agent}] > ")
            out.flush()
        line = source.readline()
        if not line:
            break
        if echo:
            out.write(f"> {line.strip()}\n")
        if not console.handle(line):
            break
    return 0


def run_service(world, listen: str) -> int:
    host, _, port = listen.partition(":")
    service = control.serve(world, host or "127.0.0.1", int(port or 0))
    print(f"listening on {service.address[0]}:{service.address[1]}", flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        control.shutdown(service)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        world = load_world(args)
    except (SimError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.listen:
        return run_service(world, args.listen)
    if args.script:
        with open(args.script, encoding="utf-8") as fh:
            return run_console(world, fh, echo=True)
    return run_console(world, sys.stdin, echo=False)


if __name__ == "__main__":
    sys.exit(main())
