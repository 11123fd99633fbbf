"""Selection policies over the configuration store.

Ties are broken by lower power, then smaller batch size, then lower config id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

from pythia.profiler import ConfigStats, ConfigStore, Configuration, StoreError

BUILTINS = ("max_throughput", "min_latency", "min_energy", "target_rate")
DEFAULT_TARGET_GBPS = 10.0


class PolicyError(ValueError):
    pass


class UnknownPolicy(PolicyError, KeyError):
    def __str__(self) -> str:
        return self.args[0] if self.args else "unknown policy"


@dataclass(frozen=True)
class PolicyId:
    name: str
    param: float | None = None

    @property
    def is_user(self) -> bool:
        return self.name.startswith("user:")

    @classmethod
    def parse(cls, text: str) -> "PolicyId":
        """``max_throughput``, ``target_rate`` / ``target_rate:12.5``, ``user:<name>``."""
        text = text.strip()
        if text.startswith("user:"):
            if len(text) == 5:
                raise PolicyError("user policy needs a name")
            return cls(text)
        name, _, arg = text.partition(":")
        if name not in BUILTINS:
            raise UnknownPolicy(f"unknown policy {text!r}")
        if name == "target_rate":
            try:
                r = float(arg) if arg else DEFAULT_TARGET_GBPS
            except ValueError:
                raise PolicyError(f"bad target rate {arg!r}") from None
            if not (r >= 0 and math.isfinite(r)):
                raise PolicyError("target rate must be a non-negative number")
            return cls(name, r)
        if arg:
            raise PolicyError(f"policy {name} takes no parameter")
        return cls(name)

    def __str__(self) -> str:
        return f"{self.name}:{self.param:g}" if self.param is not None else self.name


@dataclass
class PolicyContext:
    offered_gbps: Mapping[str, float] = field(default_factory=dict)   # per app instance
    active_id: int | None = None
    snapshots: tuple[ConfigStats, ...] = ()                          # oldest first, at most two

    def __post_init__(self) -> None:
        if len(self.snapshots) == 2 and self.snapshots[0].last_updated_ms > self.snapshots[1].last_updated_ms:
            raise PolicyError("snapshots must be time-ordered")


Selector = Callable[[ConfigStore, PolicyContext], Configuration]


def feasible(config: Configuration, stats: ConfigStats, offered: Mapping[str, float]) -> bool:
    """Every app's profiled rate covers its offered load."""
    if not stats.profiled:
        return False
    if stats.app_gbps:
        per = dict(stats.app_gbps)
        return all(per.get(a, 0.0) >= offered.get(a, 0.0) for a in config.apps)
    return stats.agg_gbps >= sum(offered.get(a, 0.0) for a in config.apps)


def _tie(c: Configuration, s: ConfigStats) -> tuple:
    return (s.avg_power_watts, c.batch_size, c.id)


def _max_throughput(store: ConfigStore, ctx: PolicyContext) -> Configuration:
    return store.head("gbps")[0]


def _min_latency(store: ConfigStore, ctx: PolicyContext) -> Configuration:
    for c, s in store.ordered("latency"):
        if feasible(c, s, ctx.offered_gbps):
            return c
    return store.head("latency")[0]


def _gbps_per_watt(s: ConfigStats) -> float:
    if s.avg_power_watts <= 0:
        return math.inf if s.agg_gbps > 0 else 0.0
    return s.agg_gbps / s.avg_power_watts


def _min_energy(store: ConfigStore, ctx: PolicyContext) -> Configuration:
    for c, s in store.ordered("power"):
        if feasible(c, s, ctx.offered_gbps):
            return c
    return min(store.profiled(), key=lambda cs: (-_gbps_per_watt(cs[1]), *_tie(*cs)))[0]


def _target_rate(target: float) -> Selector:
    def select(store: ConfigStore, ctx: PolicyContext) -> Configuration:
        return min(store.profiled(), key=lambda cs: (abs(cs[1].agg_gbps - target), *_tie(*cs)))[0]
    return select


class PolicyRegistry:
    def __init__(self) -> None:
        self._user: dict[str, Selector] = {}

    def register_user_policy(self, name: str, selector: Selector) -> PolicyId:
        if not name or ":" in name:
            raise PolicyError(f"bad user policy name {name!r}")
        if name in self._user:
            raise PolicyError(f"user policy {name!r} already registered")
        self._user[name] = selector
        return PolicyId(f"user:{name}")

    def unregister(self, name: str) -> None:
        self._user.pop(name, None)

    def resolve(self, policy: PolicyId | str) -> PolicyId:
        """Parse and check that the policy can be dispatched."""
        pid = PolicyId.parse(policy) if isinstance(policy, str) else policy
        if pid.is_user and pid.name[5:] not in self._user:
            raise UnknownPolicy(f"user policy {pid.name[5:]!r} is not registered")
        return pid

    def selector(self, policy: PolicyId) -> Selector:
        policy = self.resolve(policy)
        if policy.is_user:
            return self._user[policy.name[5:]]
        if policy.name == "max_throughput":
            return _max_throughput
        if policy.name == "min_latency":
            return _min_latency
        if policy.name == "min_energy":
            return _min_energy
        if policy.name == "target_rate":
            return _target_rate(DEFAULT_TARGET_GBPS if policy.param is None else policy.param)
        raise UnknownPolicy(f"unknown policy {policy}")

    def names(self) -> list[str]:
        return [*BUILTINS, *(f"user:{n}" for n in sorted(self._user))]


REGISTRY = PolicyRegistry()


def register_user_policy(name: str, selector: Selector, registry: PolicyRegistry | None = None) -> PolicyId:
    return (registry or REGISTRY).register_user_policy(name, selector)


def select(policy: PolicyId | str, store: ConfigStore, ctx: PolicyContext | None = None,
           registry: PolicyRegistry | None = None) -> Configuration:
    if not store.index_size("gbps"):
        raise StoreError("store has no profiled configurations")
    reg = registry or REGISTRY
    pid = reg.resolve(policy)
    return reg.selector(pid)(store, ctx or PolicyContext())


# metric used for hysteresis: (value, higher_is_better)
def policy_metric(policy: PolicyId, stats: ConfigStats) -> tuple[float, bool] | None:
    if policy.name == "max_throughput":
        return stats.agg_gbps, True
    if policy.name == "min_latency":
        return stats.avg_latency_ms, False
    if policy.name == "min_energy":
        return stats.avg_power_watts, False
    if policy.name == "target_rate":
        target = DEFAULT_TARGET_GBPS if policy.param is None else policy.param
        return abs(stats.agg_gbps - target), False
    return None


def needs_feasibility(policy: PolicyId) -> bool:
    return policy.name in ("min_latency", "min_energy")
