"""The attacker's action library.

Each action declares what it is after (its goal), what running it costs,
and what traces it leaves.  Launching an action whose goal is already
established in the knowledge store succeeds immediately at zero cost and
leaves no trace; `Action.satisfied` implements that check per action, since
some goals are hypotheses that never reach probability 1.
"""
from __future__ import annotations

import fnmatch
import json
import logging
from typing import Any

from . import agents, exploitdb, net, sched
from .errors import ParameterError, ValidationError
from .model import (ActionOutcome, ActionSpec, Asset, AssetKind,
                    AssetTemplate, Cost, EnvCondition, NoiseCategory,
                    NoiseTemplate, OneOf, Param, RunTime, agent_presence,
                    application_asset, banner_asset, ip_connectivity,
                    os_asset, tcp_connectivity, user_list)

logger = logging.getLogger(__name__)


# --- operating-system signature matching ------------------------------------------

class OSSignatureDB:
    """Banner-to-OS hypotheses, one rule per line.

        Apache/1.3* on Debian :: linux=0.8 openbsd=0.2

    The left side is a shell-style wildcard tested against the banner; the
    right side lists hypotheses with their confidence.  First matching rule
    wins.  Blank lines and '#' comments are ignored.
    """

    def __init__(self, rules: list[tuple[str, list[tuple[str, float]]]] | None = None):
        self.rules = list(rules or [])

    @classmethod
    def parse(cls, text: str) -> "OSSignatureDB":
        rules = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "::" not in line:
                raise ValidationError("rule has no '::' separator", f"line {lineno}")
            pattern, _, rhs = line.partition("::")
            pattern = pattern.strip()
            if not pattern:
                raise ValidationError("rule has an empty pattern", f"line {lineno}")
            hypotheses = []
            for token in rhs.split():
                name, eq, prob = token.partition("=")
                if not eq:
                    raise ValidationError(f"hypothesis {token!r} is not os=probability",
                                          f"line {lineno}")
                try:
                    p = float(prob)
                except ValueError:
                    raise ValidationError(f"probability {prob!r} is not a number",
                                          f"line {lineno}") from None
                if not 0.0 <= p <= 1.0:
                    raise ValidationError(f"probability {p} outside [0, 1]", f"line {lineno}")
                hypotheses.append((name, p))
            if not hypotheses:
                raise ValidationError("rule lists no hypotheses", f"line {lineno}")
            rules.append((pattern, hypotheses))
        return cls(rules)

    def match(self, banner: str) -> list[tuple[str, float]] | None:
        for pattern, hypotheses in self.rules:
            if fnmatch.fnmatch(banner, pattern):
                return list(hypotheses)
        return None

    def dump(self) -> str:
        lines = []
        for pattern, hypotheses in self.rules:
            rhs = " ".join(f"{name}={p:g}" for name, p in hypotheses)
            lines.append(f"{pattern} :: {rhs}")
        return "\n".join(lines) + "\n"


# --- parameter helpers ----------------------------------------------------------

def parse_ports(value: Any) -> list[int]:
    """Accepts [80, 443], "80,443" or "8000-8010" (and mixes)."""
    if isinstance(value, int):
        return [value]
    if isinstance(value, (list, tuple)):
        out: list[int] = []
        for item in value:
            out.extend(parse_ports(item))
        return out
    if isinstance(value, str):
        out = []
        for chunk in value.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            if "-" in chunk:
                lo, _, hi = chunk.partition("-")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(chunk))
        if not out:
            raise ParameterError(f"no ports in {value!r}")
        return out
    raise ParameterError(f"cannot read ports from {value!r}")


def expand_targets(world, params: dict[str, Any]) -> list[str]:
    """Targets may be listed explicitly or given as a segment to sweep."""
    if "targets" in params:
        targets = params["targets"]
        if isinstance(targets, str):
            targets = [t.strip() for t in targets.split(",") if t.strip()]
        return list(targets)
    network = params.get("network")
    if not network:
        raise ParameterError("network_discovery needs 'targets' or 'network'")
    segment = world.segments.get(network)
    if segment is None:
        for seg in world.segments.values():
            if seg.prefix == network or network.startswith(seg.prefix + "."):
                segment = seg
                break
    if segment is None:
        raise ParameterError(f"no segment matches {network!r}")
    lo, hi = params.get("range", (1, 254))
    return [f"{segment.prefix}.{n}" for n in range(int(lo), int(hi) + 1)]


def vantage_address(world, agent) -> str:
    machine = world.machines[agent.machine]
    return machine.primary_address or machine.id


# --- execution context ------------------------------------------------------------

class ActionContext:
    """Mutable state of one running action; builds the final outcome."""

    def __init__(self, world, agent, action: "Action", params: dict[str, Any],
                 action_id: str, request_id: str, box: dict):
        self.world = world
        self.agent = agent
        self.action = action
        self.params = params
        self.action_id = action_id
        self.request_id = request_id
        self.box = box
        self.produced: list[Asset] = []
        self.noise_events = []
        self.detail: dict[str, Any] = {}
        self.status = "failure"
        self.resolved = False
        self.started_at = world.clock

    @property
    def vantage(self) -> net.Machine:
        return self.world.machines[self.agent.machine]

    @property
    def source_address(self) -> str:
        return vantage_address(self.world, self.agent)

    def produce(self, asset: Asset) -> Asset:
        self.world.assert_asset(asset)
        self.produced.append(asset)
        return asset

    def note(self, asset: Asset) -> Asset:
        """Track an asset someone else already asserted (no re-assertion)."""
        self.produced.append(asset)
        return asset

    def noise(self, sensor: str, category: NoiseCategory, magnitude: float) -> None:
        event = self.world.record_noise(sensor, category, magnitude, self.action_id)
        self.noise_events.append(event)

    def path_noise(self, segments: list[str], category: NoiseCategory,
                   magnitude: float) -> None:
        for sensor in self.world.ids_sensors_on(segments):
            self.noise(sensor, category, magnitude)

    def succeed(self, **detail: Any) -> None:
        self.status = "success"
        self.resolved = True
        self.detail.update(detail)

    def fail(self, reason: str, **detail: Any) -> None:
        self.status = "failure"
        self.resolved = True
        self.detail["reason"] = reason
        self.detail.update(detail)

    def thread_finished(self, thread, error: str | None) -> None:
        world = self.world
        elapsed = world.clock - self.started_at
        # An abort (own machine crashed under us) keeps an already-decided
        # status; an error before any decision is reported as one.
        status = self.status if error is None or self.resolved else "error"
        if error is not None:
            self.detail.setdefault("error", error)
        magnitude = sum(ev.magnitude for ev in self.noise_events)
        cost = Cost(RunTime(elapsed, elapsed, elapsed), 1.0,
                    1.0 / (1.0 + magnitude), self.action.spec.zero_dayness)
        outcome = ActionOutcome(status, self.produced, list(self.noise_events),
                                elapsed, cost, self.detail)
        world.finish_action(self.action_id, self.request_id, self.agent.id,
                            self.action.spec.name, outcome, self.box)


def action_body(ctx: ActionContext):
    """Wraps an action run with its simulated duration.

    The duration is drawn up front so the number of random draws does not
    depend on how long the operational part blocks; waiting on the network
    (timeouts and the like) can only stretch an action past its drawn time.
    """
    rt = ctx.action.spec.run_time
    duration = ctx.world.rng.uniform(rt.min, rt.max)
    yield from ctx.action.run(ctx)
    spent = ctx.world.clock - ctx.started_at
    if duration > spent:
        yield sched.Sleep(duration - spent)


# --- action base ---------------------------------------------------------------------

class Action:
    spec: ActionSpec

    def describe(self) -> dict[str, Any]:
        spec = self.spec
        return {
            "name": spec.name,
            "goal": {"kind": spec.goal.kind.value,
                     "attrs": {k: (f"${v.name}" if isinstance(v, Param) else v)
                               for k, v in spec.goal.attrs.items()}},
            "run_time": spec.run_time.to_dict(),
            "base_success_probability": spec.base_success_probability,
            "zero_dayness": spec.zero_dayness,
            "noise": [{"sensor": nt.sensor_kind, "category": nt.category.value,
                       "magnitude": nt.magnitude} for nt in spec.noise_profile],
        }

    def validate(self, world, agent, params: dict[str, Any]) -> dict[str, Any]:
        return params

    def satisfied(self, world, agent, params: dict[str, Any]) -> list[Asset] | None:
        """Assets proving the goal is already met, or None to actually run."""
        try:
            goal = self.spec.goal.bind(params)
        except ParameterError:
            return None
        matched = [a for a, p in world.env.query(goal) if p >= 1.0]
        return matched or None

    def run(self, ctx: ActionContext):
        raise NotImplementedError
        yield  # pragma: no cover


def _known_os_assets(world, host: str) -> list[Asset]:
    hits = world.env.query(AssetTemplate(AssetKind.OPERATING_SYSTEM, {"host": host}))
    return [a for a, p in hits if p > 0.0]


# --- concrete actions ------------------------------------------------------------------

class NetworkDiscovery(Action):
    """Sweep addresses for hosts that answer a reachability probe."""

    spec = ActionSpec(
        name="network_discovery",
        goal=AssetTemplate(AssetKind.IP_CONNECTIVITY,
                           {"source": Param("source"), "target": Param("target")}),
        noise_profile=[NoiseTemplate("ids", NoiseCategory.IRREMOVABLE, 1.0)],
        run_time=RunTime(20, 60, 120),
    )

    def validate(self, world, agent, params):
        params["targets"] = expand_targets(world, params)
        params.pop("network", None)
        params.pop("range", None)
        return params

    def satisfied(self, world, agent, params):
        source = vantage_address(world, agent)
        matched = []
        for target in params["targets"]:
            hits = world.env.query(AssetTemplate(
                AssetKind.IP_CONNECTIVITY, {"source": source, "target": target}))
            if not hits:
                return None
            matched.extend(a for a, _ in hits)
        return matched

    def run(self, ctx):
        source = ctx.source_address
        counts = {"up": 0, "absent": 0, "no-answer": 0, "skipped": 0}
        for target in ctx.params["targets"]:
            known = ctx.world.env.query(AssetTemplate(
                AssetKind.IP_CONNECTIVITY, {"source": source, "target": target}))
            if known:
                counts["skipped"] += 1
                for asset, _ in known:
                    ctx.note(asset)
                continue
            result = yield sched.Probe(target)
            ctx.path_noise(result.segments, NoiseCategory.IRREMOVABLE, 1.0)
            if result.outcome == "up":
                counts["up"] += 1
                ctx.produce(ip_connectivity(source, target, 1.0))
            elif result.outcome == "absent":
                counts["absent"] += 1
                ctx.produce(ip_connectivity(source, target, 0.0))
            else:
                # filtered or unreachable: no answer is not a fact either way
                counts["no-answer"] += 1
        ctx.succeed(**counts)


class PortScan(Action):
    """Try TCP connections against a port list; silence stays unknown."""

    spec = ActionSpec(
        name="port_scan",
        goal=AssetTemplate(AssetKind.TCP_CONNECTIVITY,
                           {"source": Param("source"), "target": Param("target"),
                            "port": Param("port")}),
        environment_conditions=[EnvCondition(
            AssetTemplate(AssetKind.IP_CONNECTIVITY, {"target": Param("target")}),
            tests={}, prior=0.5)],
        noise_profile=[NoiseTemplate("ids", NoiseCategory.IRREMOVABLE, 1.0)],
        run_time=RunTime(50, 150, 400),
    )

    def validate(self, world, agent, params):
        if "target" not in params:
            raise ParameterError("port_scan needs a 'target' address")
        params["ports"] = parse_ports(params.get("ports", "1-1024"))
        return params

    def satisfied(self, world, agent, params):
        source = vantage_address(world, agent)
        matched = []
        for port in params["ports"]:
            hits = world.env.query(AssetTemplate(
                AssetKind.TCP_CONNECTIVITY,
                {"source": source, "target": params["target"], "port": port}))
            if not hits:
                return None
            matched.extend(a for a, _ in hits)
        return matched

    def run(self, ctx):
        source = ctx.source_address
        target = ctx.params["target"]
        open_ports, closed, silent, skipped = [], [], [], []
        for port in ctx.params["ports"]:
            if ctx.world.env.query(AssetTemplate(
                    AssetKind.TCP_CONNECTIVITY,
                    {"source": source, "target": target, "port": port})):
                skipped.append(port)
                continue
            result = yield sched.Connect(target, port)
            ctx.path_noise(result.segments, NoiseCategory.IRREMOVABLE, 1.0)
            if result.outcome == "connected":
                open_ports.append(port)
                ctx.produce(tcp_connectivity(source, target, port, 1.0))
                ctx.produce(ip_connectivity(source, target, 1.0))
                yield sched.CloseFd(result.value)
            elif result.outcome == "refused":
                closed.append(port)
                ctx.produce(tcp_connectivity(source, target, port, 0.0))
                ctx.produce(ip_connectivity(source, target, 1.0))
            else:
                silent.append(port)
        ctx.succeed(open=open_ports, closed=closed, filtered=silent, skipped=skipped)


class BannerGrab(Action):
    """Connect to one service and read whatever it announces."""

    spec = ActionSpec(
        name="banner_grab",
        goal=AssetTemplate(AssetKind.BANNER,
                           {"host": Param("target"), "port": Param("port")}),
        environment_conditions=[EnvCondition(
            AssetTemplate(AssetKind.TCP_CONNECTIVITY,
                          {"target": Param("target"), "port": Param("port")}),
            tests={}, prior=0.5)],
        noise_profile=[NoiseTemplate("ids", NoiseCategory.IRREMOVABLE, 1.0)],
        run_time=RunTime(30, 80, 200),
    )

    def validate(self, world, agent, params):
        if "target" not in params or "port" not in params:
            raise ParameterError("banner_grab needs 'target' and 'port'")
        params["port"] = int(params["port"])
        return params

    def run(self, ctx):
        target, port = ctx.params["target"], ctx.params["port"]
        result = yield sched.Connect(target, port)
        ctx.path_noise(result.segments, NoiseCategory.IRREMOVABLE, 1.0)
        if result.outcome != "connected":
            ctx.fail(f"connect {result.outcome}")
            return
        fd = result.value
        got = yield sched.Recv(fd, 512, timeout_ms=1000.0)
        yield sched.CloseFd(fd)
        if got.outcome != "data" or not got.value:
            ctx.fail("service sent no banner")
            return
        text = got.value.decode("utf-8", "replace").strip()
        ctx.produce(banner_asset(target, port, text, 1.0))
        ctx.succeed(banner=text)


class OSDetectByBanner(Action):
    """Turn already-collected banners into operating-system hypotheses.

    Pure analysis: reads the knowledge store and the signature rules, never
    touches the network, and therefore leaves no trace anywhere.
    """

    spec = ActionSpec(
        name="os_detect_by_banner",
        goal=AssetTemplate(AssetKind.OPERATING_SYSTEM, {"host": Param("target")}),
        run_time=RunTime(5, 10, 20),
    )

    def validate(self, world, agent, params):
        if "target" not in params:
            raise ParameterError("os_detect_by_banner needs a 'target'")
        return params

    def satisfied(self, world, agent, params):
        known = _known_os_assets(world, params["target"])
        return known or None

    def run(self, ctx):
        target = ctx.params["target"]
        db = ctx.world.signature_db
        if db is None:
            ctx.fail("no signature rules loaded")
            return
        banners = ctx.world.env.query(AssetTemplate(AssetKind.BANNER, {"host": target}))
        hypotheses = None
        matched_banner = None
        for asset, p in banners:
            if p < 1.0:
                continue
            hypotheses = db.match(asset.attributes["banner"])
            if hypotheses:
                matched_banner = asset.attributes["banner"]
                break
        if not hypotheses:
            ctx.fail("no known banner matches a signature")
            return
        for name, p in hypotheses:
            ctx.produce(os_asset(target, name, p))
        ctx.succeed(banner=matched_banner,
                    hypotheses={name: p for name, p in hypotheses})
        return
        yield  # generator marker; analysis needs no syscalls


DECOY_OS = ("linux", "windows", "openbsd", "solaris", "freebsd")


class OSFingerprint(Action):
    """Active fingerprinting: probe the host and read its stack behavior.

    Answers with confidence `fingerprint_accuracy`; the rest of the time the
    reported system is simply wrong, which is what makes believing a lone
    fingerprint risky.
    """

    spec = ActionSpec(
        name="os_fingerprint",
        goal=AssetTemplate(AssetKind.OPERATING_SYSTEM, {"host": Param("target")}),
        environment_conditions=[EnvCondition(
            AssetTemplate(AssetKind.IP_CONNECTIVITY, {"target": Param("target")}),
            tests={}, prior=0.5)],
        noise_profile=[NoiseTemplate("ids", NoiseCategory.IRREMOVABLE, 2.0),
                       NoiseTemplate("hostlog", NoiseCategory.CLEANABLE_ON_SUCCESS, 1.0)],
        run_time=RunTime(100, 250, 600),
        base_success_probability=0.9,
    )

    def validate(self, world, agent, params):
        if "target" not in params:
            raise ParameterError("os_fingerprint needs a 'target'")
        return params

    def satisfied(self, world, agent, params):
        known = _known_os_assets(world, params["target"])
        return known or None

    def run(self, ctx):
        target = ctx.params["target"]
        result = yield sched.Probe(target)
        ctx.path_noise(result.segments, NoiseCategory.IRREMOVABLE, 2.0)
        if result.outcome != "up":
            ctx.fail(f"host is {result.outcome}")
            return
        machine = ctx.world.machine_by_address(target)
        ctx.noise(f"hostlog:{machine.id}", NoiseCategory.CLEANABLE_ON_SUCCESS, 1.0)
        accuracy = ctx.world.config.fingerprint_accuracy
        truth = machine.os
        if ctx.world.rng.random() < accuracy:
            extra = {"version": truth.version}
            if truth.name == "windows":
                extra["edition"] = truth.edition
                extra["servicepack"] = truth.servicepack
            extra = {k: v for k, v in extra.items() if v}
            ctx.produce(os_asset(target, truth.name, accuracy, **extra))
            ctx.succeed(reported=truth.name)
        else:
            decoys = [n for n in DECOY_OS if n != truth.name]
            reported = decoys[int(ctx.world.rng.random() * len(decoys))]
            ctx.produce(os_asset(target, reported, accuracy))
            ctx.succeed(reported=reported)


class RunExploit(Action):
    """Throw one vulnerability at a remote service.

    The connection must establish before anything else happens: an
    unreachable or refusing target never reaches outcome resolution, so a
    filtered machine costs a timeout but cannot crash.
    """

    spec = ActionSpec(
        name="run_exploit",
        goal=AssetTemplate(AssetKind.AGENT_PRESENCE, {"host": Param("target")}),
        environment_conditions=[
            EnvCondition(AssetTemplate(AssetKind.TCP_CONNECTIVITY,
                                       {"target": Param("target"), "port": Param("port")}),
                         tests={}, prior=0.5),
            EnvCondition(AssetTemplate(AssetKind.OPERATING_SYSTEM,
                                       {"host": Param("target")}),
                         tests={"os": OneOf(("windows",))}, prior=0.5),
        ],
        noise_profile=[NoiseTemplate("ids", NoiseCategory.IRREMOVABLE, 3.0),
                       NoiseTemplate("hostlog", NoiseCategory.CLEANABLE_ON_SUCCESS, 3.0)],
        run_time=RunTime(200, 500, 1500),
        base_success_probability=0.75,
        zero_dayness=0.0,
    )

    def validate(self, world, agent, params):
        for key in ("target", "port", "vuln"):
            if key not in params:
                raise ParameterError(f"run_exploit needs {key!r}")
        params["port"] = int(params["port"])
        entry = world.vulndb.get(params["vuln"])
        if entry.locality != "remote":
            raise ParameterError(
                f"{entry.id} is a local vulnerability; use privilege_escalation")
        return params

    def satisfied(self, world, agent, params):
        target = params["target"]
        hits = world.env.query(AssetTemplate(AssetKind.AGENT_PRESENCE, {"host": target}))
        machine = world.machine_by_address(target)
        matched = []
        for asset, p in hits:
            if p < 1.0:
                continue
            holder = world.agents.get(asset.attributes["agent"])
            if holder is not None and holder.alive and machine is not None \
                    and holder.machine == machine.id:
                matched.append(asset)
        return matched or None

    def run(self, ctx):
        target, port = ctx.params["target"], ctx.params["port"]
        entry = ctx.world.vulndb.get(ctx.params["vuln"])
        result = yield sched.Connect(target, port)
        if result.outcome != "connected":
            # never reached the service, so the dice are never rolled
            ctx.path_noise(result.segments, NoiseCategory.IRREMOVABLE, entry.noise)
            ctx.fail(f"connect {result.outcome}", outcome="no-contact")
            return
        fd = result.value
        machine = ctx.world.machine_by_address(target)
        ctx.path_noise(result.segments, NoiseCategory.IRREMOVABLE, entry.noise)
        ctx.noise(f"hostlog:{machine.id}", NoiseCategory.CLEANABLE_ON_SUCCESS, entry.noise)
        yield sched.Send(fd, b"\x90" * 64 + entry.id.encode())

        chosen = entry.select_result(machine)
        if chosen is None:
            yield sched.CloseFd(fd)
            ctx.fail("target does not meet any requirement", outcome="not-vulnerable")
            return
        res = exploitdb.resolve(chosen, ctx.world.rng)
        ctx.detail["outcome"] = res.label

        if res.outcome in ("crash", "reset"):
            down = net.crash_machine if res.outcome == "crash" else net.reset_machine
            if res.what == "application":
                app = machine.find_app(port=port)
                if app is None:
                    ctx.fail("no application behind the port", outcome=res.label)
                    return
                down(ctx.world, machine.id, "application", app.name)
            else:
                down(ctx.world, machine.id, "os")
            yield sched.CloseFd(fd)
            ctx.fail(f"target {res.label}")
            return
        if res.outcome == "agent":
            client = ctx.vantage.get_desc(fd)
            agent = agents.install_agent(
                ctx.world, machine.id, agents.ConnectionMethod("reuse-connection", port),
                ctx.agent.id, reuse_socket=client, privilege="root")
            ctx.note(agent_presence(target, agent.id))
            ctx.succeed(agent=agent.id)
            return
        if res.label == "alarm":
            ctx.path_noise(result.segments, NoiseCategory.IRREMOVABLE, 2.0 * entry.noise)
        elif res.label == "log":
            ctx.noise(f"hostlog:{machine.id}", NoiseCategory.CLEANABLE_ON_SUCCESS,
                      entry.noise)
        yield sched.CloseFd(fd)
        ctx.fail(f"exploit produced {res.label}")


class LocalInfoGathering(Action):
    """Ask the agent's own host what it knows about itself."""

    spec = ActionSpec(
        name="local_info_gathering",
        goal=AssetTemplate(AssetKind.USER_LIST, {"host": Param("host")}),
        noise_profile=[NoiseTemplate("hostlog", NoiseCategory.CLEANABLE_ALWAYS, 1.0)],
        run_time=RunTime(50, 120, 300),
    )

    def validate(self, world, agent, params):
        params["host"] = vantage_address(world, agent)
        return params

    def satisfied(self, world, agent, params):
        host = vantage_address(world, agent)
        hits = world.env.query(AssetTemplate(AssetKind.USER_LIST, {"host": host}))
        matched = [a for a, p in hits if p >= 1.0]
        return matched or None

    def run(self, ctx):
        host = ctx.params["host"]
        machine = ctx.vantage
        ctx.noise(f"hostlog:{machine.id}", NoiseCategory.CLEANABLE_ALWAYS, 1.0)

        got = yield sched.Sys(agents.SyscallRequest("getinfo", ["os"]))
        info = json.loads(got.value.results[0])
        previous = {a.attributes["os"] for a in _known_os_assets(ctx.world, host)}
        extra = {k: v for k, v in info.items()
                 if k in ("version", "edition", "servicepack") and v}
        ctx.produce(os_asset(host, info["name"], 1.0, **extra))
        for other in previous - {info["name"]}:
            # certainty about the real system refutes the other hypotheses
            ctx.produce(os_asset(host, other, 0.0))

        got = yield sched.Sys(agents.SyscallRequest("getinfo", ["users"]))
        users = json.loads(got.value.results[0])
        ctx.produce(user_list(host, users))

        got = yield sched.Sys(agents.SyscallRequest("getinfo", ["apps"]))
        for app in json.loads(got.value.results[0]):
            version = ".".join(str(v) for v in app["version"])
            ctx.produce(application_asset(host, app["name"], 1.0,
                                          version=version, status=app["status"]))

        got = yield sched.Sys(agents.SyscallRequest("getinfo", ["ifaces"]))
        for iface in json.loads(got.value.results[0]):
            # a second interface is how the attacker learns a new segment exists
            ctx.produce(ip_connectivity(host, iface["address"], 1.0))
            ctx.detail.setdefault("interfaces", []).append(iface["address"])

        got = yield sched.Sys(agents.SyscallRequest("list-dir", ["/"]))
        entries = got.value.results[0]
        ctx.produce(Asset(AssetKind.FILESYSTEM_INFO,
                          {"host": host, "info": f"{len(entries)} entries under /"}))
        ctx.succeed(users=len(users))


class PrivilegeEscalation(Action):
    """Run a local vulnerability to lift the acting agent to root."""

    spec = ActionSpec(
        name="privilege_escalation",
        goal=AssetTemplate(AssetKind.AGENT_PRESENCE, {"agent": Param("agent")}),
        noise_profile=[NoiseTemplate("hostlog", NoiseCategory.CLEANABLE_ALWAYS, 2.0)],
        run_time=RunTime(80, 200, 500),
        base_success_probability=0.9,
    )

    def validate(self, world, agent, params):
        params["agent"] = agent.id
        vuln = params.get("vuln")
        if vuln is not None:
            entry = world.vulndb.get(vuln)
            if entry.locality != "local":
                raise ParameterError(f"{entry.id} is not a local vulnerability")
        return params

    def satisfied(self, world, agent, params):
        if agent.privilege == "root":
            return [agent_presence(vantage_address(world, agent), agent.id)]
        return None

    def run(self, ctx):
        machine = ctx.vantage
        ctx.noise(f"hostlog:{machine.id}", NoiseCategory.CLEANABLE_ALWAYS, 2.0)
        vuln = ctx.params.get("vuln")
        if vuln is None:
            for vid in ctx.world.vulndb.order:
                if ctx.world.vulndb.entries[vid].locality == "local":
                    vuln = vid
                    break
        if vuln is None:
            ctx.fail("no local vulnerability loaded")
            return
        entry = ctx.world.vulndb.get(vuln)
        chosen = entry.select_result(machine)
        if chosen is None:
            ctx.fail("host does not meet any requirement", outcome="not-vulnerable")
            return
        res = exploitdb.resolve(chosen, ctx.world.rng)
        ctx.detail["outcome"] = res.label
        if res.outcome == "agent":
            ctx.agent.privilege = "root"
            ctx.world.emit("agent", {"agent": ctx.agent.id, "machine": machine.id,
                                     "alive": True, "privilege": "root"})
            ctx.note(agent_presence(ctx.source_address, ctx.agent.id))
            ctx.succeed(privilege="root")
        elif res.outcome in ("crash", "reset"):
            # decide the outcome first: taking down our own host aborts us
            ctx.fail(f"host {res.label}")
            down = net.crash_machine if res.outcome == "crash" else net.reset_machine
            down(ctx.world, machine.id, "os")
        else:
            ctx.fail(f"exploit produced {res.label}")
        return
        yield  # generator marker; everything above is local


REGISTRY: dict[str, Action] = {
    action.spec.name: action
    for action in (NetworkDiscovery(), PortScan(), BannerGrab(), OSDetectByBanner(),
                   OSFingerprint(), RunExploit(), LocalInfoGathering(),
                   PrivilegeEscalation())
}
