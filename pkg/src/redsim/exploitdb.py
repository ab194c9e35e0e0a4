"""Vulnerability database: XML entries with probabilistic outcomes.

Each entry declares requirements (what the target must look like for the
exploit to do anything) and result blocks (ordered chance draws describing
what actually happens).  Requirements are matched against machine state;
multi-valued fields are whitespace separated, so `<edition>server
enterprise_server</edition>` accepts either edition.
"""
from __future__ import annotations

import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .errors import UnknownVulnerabilityError, VulnParseError

LOCALITIES = ("remote", "local")
DRAW_KINDS = ("crash", "reset", "agent", "alarm", "log")
UNSUPPORTED_KINDS = ("session", "credential")
CRASH_TARGETS = ("os", "application")
COMPOSE_OPS = ("logic_and", "logic_or", "logic_not")
ACTIVE_STATUSES = ("running", "target-eligible")


def _multi(text: str | None) -> tuple[str, ...]:
    return tuple((text or "").split())


@dataclass(frozen=True)
class Draw:
    kind: str
    what: str | None
    chance: float

    def label(self) -> str:
        if self.kind in ("crash", "reset"):
            return f"{self.kind}-app" if self.what == "application" else f"{self.kind}-os"
        return self.kind


@dataclass
class ResultEntry:
    requirement: str
    draws: list[Draw] = field(default_factory=list)


class SystemRequirement:
    def __init__(self, os_names=(), arch=None, versions=(), editions=(), servicepacks=()):
        self.os_names = tuple(n.lower() for n in os_names)
        self.arch = arch
        self.versions = tuple(versions)
        self.editions = tuple(editions)
        self.servicepacks = tuple(servicepacks)

    def matches(self, machine, entry) -> bool:
        os = machine.os
        if self.os_names and os.name.lower() not in self.os_names:
            return False
        if self.arch and os.arch != self.arch:
            return False
        if self.versions and os.version not in self.versions:
            return False
        if self.editions and os.edition not in self.editions:
            return False
        if self.servicepacks and os.servicepack not in self.servicepacks:
            return False
        return True


class ApplicationRequirement:
    def __init__(self, name: str, status: str | None = None,
                 majors=(), minors=()):
        self.name = name
        self.status = status
        self.majors = tuple(majors)
        self.minors = tuple(minors)

    def matches(self, machine, entry) -> bool:
        for app in machine.applications:
            if app.name.lower() != self.name.lower():
                continue
            if self.status == "target" and app.status not in ACTIVE_STATUSES:
                continue
            if self.status == "running" and app.status != "running":
                continue
            if self.majors:
                if not app.version or str(app.version[0]) not in self.majors:
                    continue
            if self.minors:
                if len(app.version) < 2 or str(app.version[1]) not in self.minors:
                    continue
            return True
        return False


class ComposeRequirement:
    def __init__(self, operator: str, operands: tuple[str, ...]):
        self.operator = operator
        self.operands = operands

    def matches(self, machine, entry) -> bool:
        values = [entry.eval_requirement(ref, machine) for ref in self.operands]
        if self.operator == "logic_and":
            return all(values)
        if self.operator == "logic_or":
            return any(values)
        return not values[0]


class HiddenRequirement:
    """Matches private machine facts the attacker cannot observe directly."""

    def __init__(self, key: str, value: str):
        self.key = key
        self.value = value

    def matches(self, machine, entry) -> bool:
        return machine.hidden.get(self.key) == self.value


@dataclass
class VulnerabilityEntry:
    id: str
    name: str
    locality: str
    category: str
    noise: float
    requirements: dict[str, object] = field(default_factory=dict)
    requirement_order: list[str] = field(default_factory=list)
    results: list[ResultEntry] = field(default_factory=list)

    def eval_requirement(self, req_id: str, machine) -> bool:
        return self.requirements[req_id].matches(machine, self)

    def select_result(self, machine) -> ResultEntry | None:
        """First result whose requirement matches, in document order."""
        for result in self.results:
            if self.eval_requirement(result.requirement, machine):
                return result
        return None


class VulnDB:
    def __init__(self, entries: list[VulnerabilityEntry], source: str = ""):
        self.entries: dict[str, VulnerabilityEntry] = {}
        self.order: list[str] = []
        for entry in entries:
            self.entries[entry.id] = entry
            self.order.append(entry.id)
        self.source = source

    def get(self, vuln_id: str) -> VulnerabilityEntry:
        try:
            return self.entries[vuln_id]
        except KeyError:
            raise UnknownVulnerabilityError(f"no entry {vuln_id!r} loaded") from None

    def __len__(self) -> int:
        return len(self.entries)


# --- parsing -----------------------------------------------------------------

def _parse_system(elem: ET.Element, where: str) -> SystemRequirement:
    os_names: tuple[str, ...] = ()
    arch = None
    versions: tuple[str, ...] = ()
    editions: tuple[str, ...] = ()
    servicepacks: tuple[str, ...] = ()
    for child in elem:
        if child.tag == "os":
            os_names = _multi(child.text)
        elif child.tag == "win":
            arch = child.get("arch") or arch
            versions = _multi(child.get("version")) or versions
        elif child.tag == "edition":
            editions = _multi(child.text)
        elif child.tag == "servicepack":
            servicepacks = _multi(child.text)
        else:
            raise VulnParseError(f"unexpected element <{child.tag}> in system requirement", where)
    return SystemRequirement(os_names, arch, versions, editions, servicepacks)


def _parse_application(elem: ET.Element, where: str) -> ApplicationRequirement:
    name = None
    status = None
    majors: tuple[str, ...] = ()
    minors: tuple[str, ...] = ()
    for child in elem:
        if child.tag == "name":
            name = (child.text or "").strip()
        elif child.tag == "status":
            status = (child.text or "").strip()
        elif child.tag == "version":
            for part in child:
                if part.tag == "major":
                    majors = _multi(part.text)
                elif part.tag == "minor":
                    minors = _multi(part.text)
                else:
                    raise VulnParseError(f"unexpected element <{part.tag}> in version", where)
        else:
            raise VulnParseError(f"unexpected element <{child.tag}> in application requirement", where)
    if not name:
        raise VulnParseError("application requirement has no <name>", where)
    if status not in (None, "target", "running"):
        raise VulnParseError(f"status {status!r} not understood", where)
    return ApplicationRequirement(name, status, majors, minors)


def _parse_compose(elem: ET.Element, where: str) -> ComposeRequirement:
    operator = None
    operands: tuple[str, ...] = ()
    for child in elem:
        if child.tag == "operator":
            operator = (child.text or "").strip()
        elif child.tag == "operands":
            operands = _multi(child.text)
        else:
            raise VulnParseError(f"unexpected element <{child.tag}> in compose requirement", where)
    if operator not in COMPOSE_OPS:
        raise VulnParseError(f"operator {operator!r} not one of {COMPOSE_OPS}", where)
    if not operands:
        raise VulnParseError("compose requirement has no operands", where)
    if operator == "logic_not" and len(operands) != 1:
        raise VulnParseError("logic_not takes exactly one operand", where)
    return ComposeRequirement(operator, operands)


def _parse_hidden(elem: ET.Element, where: str) -> HiddenRequirement:
    key = value = None
    for child in elem:
        if child.tag == "key":
            key = (child.text or "").strip()
        elif child.tag == "value":
            value = (child.text or "").strip()
        else:
            raise VulnParseError(f"unexpected element <{child.tag}> in hidden requirement", where)
    if not key or value is None:
        raise VulnParseError("hidden requirement needs <key> and <value>", where)
    return HiddenRequirement(key, value)


def _parse_draw(elem: ET.Element, where: str) -> Draw:
    kind = elem.get("kind")
    if kind in UNSUPPORTED_KINDS:
        raise VulnParseError(f"unsupported result kind {kind!r}", where)
    if kind not in DRAW_KINDS:
        raise VulnParseError(f"draw kind {kind!r} not understood", where)
    what = elem.get("what")
    if kind in ("crash", "reset"):
        if what not in CRASH_TARGETS:
            raise VulnParseError(f"{kind} draw needs what=os|application", where)
    elif what is not None:
        raise VulnParseError(f"{kind} draw takes no 'what'", where)
    try:
        chance = float(elem.get("chance", ""))
    except ValueError:
        raise VulnParseError("draw chance is not a number", where) from None
    if not 0.0 <= chance <= 1.0:
        raise VulnParseError(f"draw chance {chance} outside [0, 1]", where)
    return Draw(kind, what, chance)


def _check_cycles(entry: VulnerabilityEntry, where: str) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {rid: WHITE for rid in entry.requirements}

    def visit(rid: str) -> None:
        color[rid] = GREY
        req = entry.requirements[rid]
        if isinstance(req, ComposeRequirement):
            for ref in req.operands:
                if color[ref] == GREY:
                    raise VulnParseError(f"requirement cycle through {ref!r}", where)
                if color[ref] == WHITE:
                    visit(ref)
        color[rid] = BLACK

    for rid in entry.requirement_order:
        if color[rid] == WHITE:
            visit(rid)


def _parse_entry(elem: ET.Element, index: int) -> VulnerabilityEntry:
    vid = elem.get("id")
    where = f"vulnerability[{index}]" + (f" id={vid!r}" if vid else "")
    if not vid:
        raise VulnParseError("vulnerability has no id", where)
    locality = elem.get("locality", "remote")
    if locality not in LOCALITIES:
        raise VulnParseError(f"locality {locality!r} not one of {LOCALITIES}", where)
    try:
        noise = float(elem.get("noise", "1"))
    except ValueError:
        raise VulnParseError("noise level is not a number", where) from None
    if noise < 0:
        raise VulnParseError(f"noise level {noise} is negative", where)
    entry = VulnerabilityEntry(vid, elem.get("name", vid), locality,
                               elem.get("category", "generic"), noise)

    for child in elem:
        if child.tag == "requirement":
            rid = child.get("id")
            rwhere = f"{where}/requirement id={rid!r}"
            if not rid:
                raise VulnParseError("requirement has no id", where)
            if rid in entry.requirements:
                raise VulnParseError(f"duplicate requirement id {rid!r}", where)
            rtype = child.get("type")
            if rtype == "system":
                req = _parse_system(child, rwhere)
            elif rtype == "application":
                req = _parse_application(child, rwhere)
            elif rtype == "compose":
                req = _parse_compose(child, rwhere)
            elif rtype == "hidden":
                req = _parse_hidden(child, rwhere)
            else:
                raise VulnParseError(f"requirement type {rtype!r} not understood", rwhere)
            entry.requirements[rid] = req
            entry.requirement_order.append(rid)
        elif child.tag == "result":
            ref = child.get("for")
            rwhere = f"{where}/result for={ref!r}"
            if not ref:
                raise VulnParseError("result has no 'for' reference", where)
            draws = [_parse_draw(d, rwhere) for d in child if d.tag == "draw"]
            for d in child:
                if d.tag != "draw":
                    raise VulnParseError(f"unexpected element <{d.tag}> in result", rwhere)
            entry.results.append(ResultEntry(ref, draws))
        else:
            raise VulnParseError(f"unexpected element <{child.tag}>", where)

    for req in entry.requirements.values():
        if isinstance(req, ComposeRequirement):
            for ref in req.operands:
                if ref not in entry.requirements:
                    raise VulnParseError(f"compose references unknown requirement {ref!r}", where)
    for result in entry.results:
        if result.requirement not in entry.requirements:
            raise VulnParseError(f"result references unknown requirement {result.requirement!r}", where)
    _check_cycles(entry, where)
    if not entry.results:
        raise VulnParseError("vulnerability has no result block", where)
    return entry


def parse_vulndb(text: str) -> VulnDB:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise VulnParseError(f"not well-formed XML: {exc}") from None
    if root.tag != "vulndb":
        raise VulnParseError(f"root element is <{root.tag}>, expected <vulndb>")
    entries = []
    seen = set()
    for index, child in enumerate(root):
        if child.tag != "vulnerability":
            raise VulnParseError(f"unexpected element <{child.tag}> under <vulndb>")
        entry = _parse_entry(child, index)
        if entry.id in seen:
            raise VulnParseError(f"duplicate vulnerability id {entry.id!r}")
        seen.add(entry.id)
        entries.append(entry)
    return VulnDB(entries, source=text)


def serialize_vulndb(db: VulnDB) -> str:
    root = ET.Element("vulndb", version="1")
    for vid in db.order:
        entry = db.entries[vid]
        velem = ET.SubElement(root, "vulnerability", id=entry.id, name=entry.name,
                              locality=entry.locality, category=entry.category,
                              noise=repr(entry.noise))
        for rid in entry.requirement_order:
            req = entry.requirements[rid]
            if isinstance(req, SystemRequirement):
                relem = ET.SubElement(velem, "requirement", id=rid, type="system")
                if req.os_names:
                    ET.SubElement(relem, "os").text = " ".join(req.os_names)
                if req.arch or req.versions:
                    win = ET.SubElement(relem, "win")
                    if req.arch:
                        win.set("arch", req.arch)
                    if req.versions:
                        win.set("version", " ".join(req.versions))
                if req.editions:
                    ET.SubElement(relem, "edition").text = " ".join(req.editions)
                if req.servicepacks:
                    ET.SubElement(relem, "servicepack").text = " ".join(req.servicepacks)
            elif isinstance(req, ApplicationRequirement):
                relem = ET.SubElement(velem, "requirement", id=rid, type="application")
                ET.SubElement(relem, "name").text = req.name
                if req.status:
                    ET.SubElement(relem, "status").text = req.status
                if req.majors or req.minors:
                    ver = ET.SubElement(relem, "version")
                    if req.majors:
                        ET.SubElement(ver, "major").text = " ".join(req.majors)
                    if req.minors:
                        ET.SubElement(ver, "minor").text = " ".join(req.minors)
            elif isinstance(req, ComposeRequirement):
                relem = ET.SubElement(velem, "requirement", id=rid, type="compose")
                ET.SubElement(relem, "operator").text = req.operator
                ET.SubElement(relem, "operands").text = " ".join(req.operands)
            else:
                relem = ET.SubElement(velem, "requirement", id=rid, type="hidden")
                ET.SubElement(relem, "key").text = req.key
                ET.SubElement(relem, "value").text = req.value
        for result in entry.results:
            relem = ET.SubElement(velem, "result")
            relem.set("for", result.requirement)
            for draw in result.draws:
                delem = ET.SubElement(relem, "draw", kind=draw.kind, chance=repr(draw.chance))
                if draw.what:
                    delem.set("what", draw.what)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# --- resolution --------------------------------------------------------------

@dataclass
class Resolution:
    """What one exploit attempt actually did."""

    label: str            # crash-os, crash-app, reset-os, reset-app, agent, alarm, log, none
    draw: Draw | None

    @property
    def outcome(self) -> str:
        if self.draw is None or self.draw.kind in ("alarm", "log"):
            return "none"
        return self.draw.kind

    @property
    def what(self) -> str | None:
        return self.draw.what if self.draw else None


def resolve(result: ResultEntry, rng: random.Random) -> Resolution:
    """Walk the draws in order; the first one whose chance comes up wins.

    Draws with zero chance consume no randomness, so adding an impossible
    branch to an entry never shifts the outcomes of a seeded run.
    """
    for draw in result.draws:
        if draw.chance <= 0.0:
            continue
        if rng.random() < draw.chance:
            return Resolution(draw.label(), draw)
    return Resolution("none", None)


def outcome_distribution(result: ResultEntry) -> dict[str, float]:
    """Exact probability of each label under `resolve`."""
    dist: dict[str, float] = {}
    remaining = 1.0
    for draw in result.draws:
        if draw.chance <= 0.0:
            continue
        label = draw.label()
        dist[label] = dist.get(label, 0.0) + remaining * draw.chance
        remaining *= 1.0 - draw.chance
    dist["none"] = dist.get("none", 0.0) + remaining
    return dist
