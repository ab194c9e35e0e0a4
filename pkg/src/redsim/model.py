"""Attack-model core: probabilistic assets, the attacker's knowledge store,
and the action contract (cost, noise, outcomes).

Every piece of information the attacker gathers is an Asset with a
probability in [0, 1].  Probability 1 is an established fact, probability 0
is a confirmed negative fact, anything in between is a hypothesis.  Assets
live in an EnvironmentKnowledge store keyed by their identifying attributes;
re-asserting an asset replaces the stored probability (last write wins).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .errors import ParameterError, SchemaViolation

logger = logging.getLogger(__name__)


class AssetKind(str, enum.Enum):
    BANNER = "banner"
    OPERATING_SYSTEM = "operating-system"
    IP_CONNECTIVITY = "ip-connectivity"
    TCP_CONNECTIVITY = "tcp-connectivity"
    APPLICATION = "application"
    AGENT_PRESENCE = "agent-presence"
    USER_LIST = "user-list"
    FILESYSTEM_INFO = "filesystem-info"


# Attributes that must be present for an asset of each kind to make sense.
REQUIRED_ATTRS: dict[AssetKind, tuple[str, ...]] = {
    AssetKind.BANNER: ("host", "port", "banner"),
    AssetKind.OPERATING_SYSTEM: ("host", "os"),
    AssetKind.IP_CONNECTIVITY: ("source", "target"),
    AssetKind.TCP_CONNECTIVITY: ("source", "target", "port"),
    AssetKind.APPLICATION: ("host", "application"),
    AssetKind.AGENT_PRESENCE: ("host", "agent"),
    AssetKind.USER_LIST: ("host", "users"),
    AssetKind.FILESYSTEM_INFO: ("host", "info"),
}

# Operating-system assets are keyed on (host, os) only so that alternative
# hypotheses for one host coexist while richer descriptors for the same
# hypothesis replace older ones.  Every other kind keys on all attributes.
KEY_ATTRS: dict[AssetKind, tuple[str, ...]] = {
    AssetKind.OPERATING_SYSTEM: ("host", "os"),
}


def _freeze(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    raise SchemaViolation(f"asset attribute value {value!r} is not a plain scalar or sequence")


class Asset:
    """One piece of attacker knowledge with an attached probability."""

    __slots__ = ("kind", "attributes", "probability")

    def __init__(self, kind: AssetKind, attributes: dict[str, Any], probability: float = 1.0):
        if not isinstance(kind, AssetKind):
            raise SchemaViolation(f"unknown asset kind {kind!r}")
        if not 0.0 <= probability <= 1.0:
            raise SchemaViolation(f"probability {probability!r} outside [0, 1]")
        missing = [a for a in REQUIRED_ATTRS[kind] if a not in attributes]
        if missing:
            raise SchemaViolation(f"{kind.value} asset missing attributes {missing}")
        self.kind = kind
        self.attributes = {k: _freeze(v) for k, v in attributes.items()}
        self.probability = float(probability)

    def key(self) -> tuple:
        keyed = KEY_ATTRS.get(self.kind)
        if keyed is None:
            items = tuple(sorted(self.attributes.items()))
        else:
            items = tuple((k, self.attributes.get(k)) for k in keyed)
        return (self.kind, items)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "attributes": {k: list(v) if isinstance(v, tuple) else v
                           for k, v in sorted(self.attributes.items())},
            "probability": self.probability,
        }

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Asset) and other.kind == self.kind
                and other.attributes == self.attributes
                and other.probability == self.probability)

    def __hash__(self):
        return hash((self.key(), self.probability))

    def __repr__(self):
        attrs = " ".join(f"{k}={v!r}" for k, v in sorted(self.attributes.items()))
        return f"<Asset {self.kind.value} {attrs} p={self.probability:g}>"


@dataclass(frozen=True)
class Param:
    """Placeholder inside a template, bound from action parameters."""

    name: str


@dataclass
class AssetTemplate:
    """Partial asset description used for goals and queries.

    Attributes may be literals or Param placeholders; attributes left out
    match anything.
    """

    kind: AssetKind
    attrs: dict[str, Any] = field(default_factory=dict)

    def free_params(self) -> list[str]:
        return [v.name for v in self.attrs.values() if isinstance(v, Param)]

    def bind(self, params: dict[str, Any] | None) -> "AssetTemplate":
        params = params or {}
        bound: dict[str, Any] = {}
        for k, v in self.attrs.items():
            if isinstance(v, Param):
                if v.name not in params:
                    raise ParameterError(f"parameter {v.name!r} is unbound")
                bound[k] = params[v.name]
            else:
                bound[k] = v
        return AssetTemplate(self.kind, bound)

    def matches(self, asset: Asset) -> bool:
        if asset.kind != self.kind:
            return False
        for k, v in self.attrs.items():
            if isinstance(v, Param):
                raise ParameterError(f"template has unbound parameter {v.name!r}")
            if asset.attributes.get(k) != _freeze(v):
                return False
        return True


class EnvironmentKnowledge:
    """Keyed store of everything the attacker believes about the network.

    Queries go through an inverted index over (kind, attribute, value), so
    asking about one host stays cheap when thousands of facts are known.
    Buckets are insertion-ordered dicts, not sets: query order must not
    depend on hash seeds or scripted transcripts stop being reproducible.
    """

    def __init__(self, owner: str = "local"):
        self.owner = owner
        self._assets: dict[tuple, Asset] = {}
        self._postings: dict[tuple, dict[tuple, None]] = {}

    def __len__(self) -> int:
        return len(self._assets)

    @staticmethod
    def _posting_keys(asset: Asset):
        yield (asset.kind,)
        for k, v in asset.attributes.items():
            yield (asset.kind, k, v)

    def assert_asset(self, asset: Asset) -> Asset:
        key = asset.key()
        old = self._assets.get(key)
        if old is not None and old.attributes != asset.attributes:
            for pk in self._posting_keys(old):
                bucket = self._postings.get(pk)
                if bucket is not None:
                    bucket.pop(key, None)
        self._assets[key] = asset
        for pk in self._posting_keys(asset):
            self._postings.setdefault(pk, {})[key] = None
        return asset

    def query(self, template: AssetTemplate) -> list[tuple[Asset, float]]:
        for v in template.attrs.values():
            if isinstance(v, Param):
                raise ParameterError(f"template has unbound parameter {v.name!r}")
        best = self._postings.get((template.kind,))
        if not best:
            return []
        for k, v in template.attrs.items():
            bucket = self._postings.get((template.kind, k, _freeze(v)))
            if not bucket:
                return []
            if len(bucket) < len(best):
                best = bucket
        out = []
        for key in best:
            asset = self._assets[key]
            if template.matches(asset):
                out.append((asset, asset.probability))
        return out

    def assets(self) -> list[Asset]:
        return list(self._assets.values())

    def snapshot(self) -> list[dict[str, Any]]:
        return [a.to_dict() for a in self._assets.values()]


def assert_asset(env: EnvironmentKnowledge, asset: Asset) -> EnvironmentKnowledge:
    env.assert_asset(asset)
    return env


def query_goal(env: EnvironmentKnowledge, template: AssetTemplate) -> list[tuple[Asset, float]]:
    return env.query(template)


# --- noise ----------------------------------------------------------------

class NoiseCategory(str, enum.Enum):
    IRREMOVABLE = "irremovable"
    CLEANABLE_ON_SUCCESS = "cleanable-on-success"
    CLEANABLE_ALWAYS = "cleanable-always"


@dataclass
class NoiseEvent:
    sensor: str
    category: NoiseCategory
    magnitude: float
    action: str
    timestamp: float

    def __post_init__(self):
        if self.magnitude < 0:
            raise SchemaViolation("noise magnitude must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sensor": self.sensor,
            "category": self.category.value,
            "magnitude": self.magnitude,
            "action": self.action,
            "timestamp": self.timestamp,
        }


class NoiseLog:
    """Current detectable traces, as opposed to the append-only event history."""

    def __init__(self):
        self.events: list[NoiseEvent] = []

    def record(self, event: NoiseEvent) -> NoiseEvent:
        self.events.append(event)
        return event

    def cleanup_for(self, action_status: dict[str, str]) -> list[NoiseEvent]:
        """Remove traces the owning agent can scrub.

        `action_status` maps action ids of the calling agent to their final
        status.  Cleanable-always traces go regardless of status; traces that
        are cleanable on success go only when the action succeeded.
        Irremovable traces stay.  Running it twice removes nothing new.
        """
        removed: list[NoiseEvent] = []
        kept: list[NoiseEvent] = []
        for ev in self.events:
            status = action_status.get(ev.action)
            if status is not None and (
                ev.category is NoiseCategory.CLEANABLE_ALWAYS
                or (ev.category is NoiseCategory.CLEANABLE_ON_SUCCESS and status == "success")
            ):
                removed.append(ev)
            else:
                kept.append(ev)
        self.events = kept
        return removed


# --- cost model -----------------------------------------------------------

@dataclass(frozen=True)
class RunTime:
    """Expected action duration in simulated milliseconds."""

    min: float
    avg: float
    max: float

    def __post_init__(self):
        if not 0 <= self.min <= self.avg <= self.max:
            raise SchemaViolation(f"run_time ordering violated: {self}")

    def to_dict(self) -> dict[str, float]:
        return {"min": self.min, "avg": self.avg, "max": self.max}


@dataclass(frozen=True)
class Cost:
    run_time: RunTime
    success_probability: float
    stealthiness: float
    zero_dayness: float

    def __post_init__(self):
        for name in ("success_probability", "stealthiness", "zero_dayness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SchemaViolation(f"{name} {v!r} outside [0, 1]")

    @classmethod
    def zero(cls) -> "Cost":
        return cls(RunTime(0, 0, 0), 1.0, 1.0, 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_time": self.run_time.to_dict(),
            "success_probability": self.success_probability,
            "stealthiness": self.stealthiness,
            "zero_dayness": self.zero_dayness,
        }


@dataclass(frozen=True)
class OneOf:
    values: tuple

    def __call__(self, value: Any) -> bool:
        return value in self.values


@dataclass(frozen=True)
class Between:
    lo: float
    hi: float

    def __call__(self, value: Any) -> bool:
        try:
            return self.lo <= float(value) <= self.hi
        except (TypeError, ValueError):
            return False


@dataclass
class EnvCondition:
    """A predicate over attacker knowledge used when estimating success.

    `template` selects the assets that bear on the condition; `tests` are
    per-attribute predicates that decide whether a selected asset satisfies
    it.  With no matching assets at all the condition is unknown and the
    prior applies; a violated condition scales success by `penalty`.
    """

    template: AssetTemplate
    tests: dict[str, Callable[[Any], bool]] = field(default_factory=dict)
    prior: float = 0.5
    penalty: float = 0.1

    def holds_probability(self, env: EnvironmentKnowledge,
                          params: dict[str, Any] | None = None) -> float:
        template = self.template.bind(params) if self.template.free_params() else self.template
        hits = env.query(template)
        if not hits:
            return self.prior
        p_true = 0.0
        for asset, p in hits:
            if all(test(asset.attributes.get(attr)) for attr, test in self.tests.items()):
                p_true += p
        return min(1.0, p_true)


@dataclass(frozen=True)
class NoiseTemplate:
    sensor_kind: str  # "ids" or "hostlog"
    category: NoiseCategory
    magnitude: float


@dataclass
class ActionSpec:
    """Static description of an action: goal, preconditions, cost inputs."""

    name: str
    goal: AssetTemplate
    requirements: list[AssetTemplate] = field(default_factory=list)
    environment_conditions: list[EnvCondition] = field(default_factory=list)
    noise_profile: list[NoiseTemplate] = field(default_factory=list)
    run_time: RunTime = RunTime(0, 0, 0)
    base_success_probability: float = 1.0
    zero_dayness: float = 0.0

    def __post_init__(self):
        if not isinstance(self.goal.kind, AssetKind):
            raise SchemaViolation(f"goal kind {self.goal.kind!r} is not an asset kind")
        if not 0.0 <= self.base_success_probability <= 1.0:
            raise SchemaViolation("base_success_probability outside [0, 1]")


def estimate_cost(spec: ActionSpec, env: EnvironmentKnowledge,
                  params: dict[str, Any] | None = None) -> Cost:
    """Predict the cost of running `spec` given current knowledge.

    A goal already established at probability 1 costs nothing.  Otherwise
    the base success probability is scaled per environment condition: a
    known-satisfied condition keeps it, a known-violated one applies the
    penalty, an unknown one contributes the expectation over its belief.
    """
    if params is not None:
        try:
            goal = spec.goal.bind(params)
        except ParameterError:
            goal = None
        if goal is not None and any(p >= 1.0 for _, p in env.query(goal)):
            return Cost.zero()
    factor = 1.0
    for cond in spec.environment_conditions:
        p_true = cond.holds_probability(env, params)
        factor *= p_true + (1.0 - p_true) * cond.penalty
    total_noise = sum(nt.magnitude for nt in spec.noise_profile)
    stealth = 1.0 / (1.0 + total_noise)
    success = max(0.0, min(1.0, spec.base_success_probability * factor))
    return Cost(spec.run_time, success, stealth, spec.zero_dayness)


@dataclass
class ActionOutcome:
    status: str  # "success" or "failure"
    produced_assets: list[Asset] = field(default_factory=list)
    noise_events: list[NoiseEvent] = field(default_factory=list)
    elapsed: float = 0.0
    cost_incurred: Cost = field(default_factory=Cost.zero)
    detail: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "produced_assets": [a.to_dict() for a in self.produced_assets],
            "noise_events": [n.to_dict() for n in self.noise_events],
            "elapsed": self.elapsed,
            "cost_incurred": self.cost_incurred.to_dict(),
            "detail": self.detail,
        }


# --- asset constructors ----------------------------------------------------

def banner_asset(host: str, port: int, banner: str, probability: float = 1.0) -> Asset:
    return Asset(AssetKind.BANNER, {"host": host, "port": port, "banner": banner}, probability)


def os_asset(host: str, os: str, probability: float = 1.0, **extra: Any) -> Asset:
    attrs = {"host": host, "os": os}
    attrs.update(extra)
    return Asset(AssetKind.OPERATING_SYSTEM, attrs, probability)


def ip_connectivity(source: str, target: str, probability: float = 1.0) -> Asset:
    return Asset(AssetKind.IP_CONNECTIVITY, {"source": source, "target": target}, probability)


def tcp_connectivity(source: str, target: str, port: int, probability: float = 1.0) -> Asset:
    return Asset(AssetKind.TCP_CONNECTIVITY,
                 {"source": source, "target": target, "port": port}, probability)


def application_asset(host: str, application: str, probability: float = 1.0, **extra: Any) -> Asset:
    attrs = {"host": host, "application": application}
    attrs.update(extra)
    return Asset(AssetKind.APPLICATION, attrs, probability)


def agent_presence(host: str, agent: str) -> Asset:
    return Asset(AssetKind.AGENT_PRESENCE, {"host": host, "agent": agent}, 1.0)


def user_list(host: str, users: Iterable[str]) -> Asset:
    # Sorted: the account set is one fact however it was enumerated.
    return Asset(AssetKind.USER_LIST, {"host": host, "users": tuple(sorted(users))}, 1.0)
