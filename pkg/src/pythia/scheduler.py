"""Adaptive monitor loop: measure, refresh the store, re-select, switch.

The scheduler talks to any backend that can report window measurements and
activate configurations (see :class:`SchedBackend`); in simulation its ticks
are ordinary events of the engine's queue.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

from pythia.policies import (PolicyContext, PolicyId, PolicyRegistry, REGISTRY,
                             feasible, needs_feasibility, policy_metric, select)
from pythia.profiler import ConfigStats, ConfigStore, Configuration, StoreError

log = logging.getLogger(__name__)

DEFAULT_INTERVAL_MS = 1000.0
DEFAULT_HYSTERESIS = 0.02

STARTUP, POLICY_DECISION, POLICY_CHANGE = "startup", "policy-decision", "policy-change"


@dataclass(frozen=True)
class SwitchEvent:
    t_ms: float
    from_config: int | None
    to_config: int
    reason: str
    completion_ms: float

    @property
    def duration_ms(self) -> float:
        return self.completion_ms - self.t_ms


@dataclass
class Measurement:
    """What the backend observed for the active configuration over one window."""
    window_ms: float
    offered_gbps: dict[str, float]            # admitted load per app instance
    app_gbps: dict[str, float | None]         # per-kernel service rate (None: no batch completed)
    app_mpps: dict[str, float | None]
    latency_ms: float | None
    power_watts: float
    batches: int                              # completed, summed over apps
    complete: bool                            # same config active and ready for the whole window


@dataclass
class MonitorState:
    interval_ms: float
    policy: PolicyId
    active: int | None = None
    snapshot_prev: ConfigStats | None = None
    snapshot_last: ConfigStats | None = None
    shutdown_at_ms: float | None = None
    policy_changed: bool = False
    degraded: bool = False

    def __post_init__(self) -> None:
        if not self.interval_ms > 0:
            raise ValueError("interval_ms must be positive")


class ActivationError(RuntimeError):
    pass


class SchedBackend(Protocol):
    def offered_gbps(self, t_ms: float) -> dict[str, float]: ...

    def measure(self, t0_ms: float, t1_ms: float) -> Measurement: ...

    def activate(self, config: Configuration, now_ms: float, reason: str) -> SwitchEvent: ...


@dataclass
class Scheduler:
    store: ConfigStore
    backend: SchedBackend
    state: MonitorState
    hysteresis: float = DEFAULT_HYSTERESIS
    ewma_alpha: float = 0.0
    registry: PolicyRegistry = field(default_factory=lambda: REGISTRY)
    switches: list[SwitchEvent] = field(default_factory=list)
    last_tick_ms: float = 0.0
    last_staleness_ms: float = 0.0

    @classmethod
    def create(cls, store: ConfigStore, policy: PolicyId | str, backend: SchedBackend,
               interval_ms: float = DEFAULT_INTERVAL_MS, hysteresis: float = DEFAULT_HYSTERESIS,
               ewma_alpha: float = 0.0, registry: PolicyRegistry | None = None) -> "Scheduler":
        if not len(store) or not store.index_size("gbps"):
            raise StoreError("cannot schedule over an empty store")
        reg = registry or REGISTRY
        pid = reg.resolve(policy)
        if not 0.0 <= ewma_alpha <= 1.0:
            raise ValueError("ewma_alpha must lie in [0, 1]")
        return cls(store, backend, MonitorState(interval_ms, pid), hysteresis, ewma_alpha, reg)

    # ------------------------------------------------------------------ control

    def start(self, now_ms: float = 0.0) -> SwitchEvent:
        ctx = PolicyContext(self.backend.offered_gbps(now_ms))
        choice = select(self.state.policy, self.store, ctx, self.registry)
        ev = self.backend.activate(choice, now_ms, STARTUP)
        self.state.active = choice.id
        self.switches.append(ev)
        self.last_tick_ms = now_ms
        return ev

    def set_policy(self, policy: PolicyId | str, now_ms: float) -> bool:
        """Queue a policy change for the next tick; False if it is a no-op."""
        pid = self.registry.resolve(policy)      # raises UnknownPolicy, state untouched
        if pid == self.state.policy:
            return False
        log.info("t=%.0f ms: policy %s -> %s", now_ms, self.state.policy, pid)
        self.state.policy = pid
        self.state.policy_changed = True
        return True

    def set_shutdown(self, at_ms: float) -> None:
        self.state.shutdown_at_ms = at_ms

    def command(self, text: str, now_ms: float) -> None:
        verb, _, arg = text.strip().partition(" ")
        if verb == "policy":
            self.set_policy(arg.strip(), now_ms)
        elif verb == "shutdown":
            self.set_shutdown(float(arg))
        else:
            raise ValueError(f"unknown control command {text!r}")

    # --------------------------------------------------------------------- tick

    def _refreshed(self, old: ConfigStats, cfg: Configuration, m: Measurement, now_ms: float) -> ConfigStats:
        a = self.ewma_alpha

        def blend(new: float, prev: float) -> float:
            return new if a == 0.0 else a * new + (1 - a) * prev

        per_old = dict(old.app_gbps)
        apps = []
        mpps = 0.0
        for inst in cfg.apps:
            g = m.app_gbps.get(inst)
            prev = per_old.get(inst, 0.0)
            apps.append((inst, blend(g, prev) if g is not None else prev))
            mp = m.app_mpps.get(inst)
            share = prev / old.agg_gbps * old.agg_mpps if old.agg_gbps > 0 else 0.0
            mpps += blend(mp, share) if mp is not None else share
        lat = blend(m.latency_ms, old.avg_latency_ms) if m.latency_ms is not None else old.avg_latency_ms
        return ConfigStats(
            agg_gbps=sum(g for _, g in apps), agg_mpps=mpps, avg_latency_ms=lat,
            avg_power_watts=blend(m.power_watts, old.avg_power_watts),
            samples=old.samples + m.batches // len(cfg.apps), last_updated_ms=now_ms, app_gbps=tuple(apps),
            service_ms=old.service_ms, state=old.state,
        )

    def _beats(self, cand: Configuration, active: Configuration, offered: dict[str, float]) -> bool:
        cs, as_ = self.store.stats(cand.id), self.store.stats(active.id)
        if not as_.profiled:
            return True
        policy = self.state.policy
        if needs_feasibility(policy):
            cf, af = feasible(cand, cs, offered), feasible(active, as_, offered)
            if cf and not af:
                return True
            if af and not cf:
                return False
            if not cf and policy.name == "min_energy":
                # both infeasible: the selector ranks by Gbps per watt
                cv = cs.agg_gbps / cs.avg_power_watts if cs.avg_power_watts > 0 else math.inf
                av = as_.agg_gbps / as_.avg_power_watts if as_.avg_power_watts > 0 else math.inf
                return cv > av * (1 + self.hysteresis)
        metric = policy_metric(policy, cs)
        if metric is None:
            return True
        cv, higher = metric
        av, _ = policy_metric(policy, as_)
        m = self.hysteresis
        if higher:
            return cv > av * (1 + m) if m else cv > av
        return cv < av * (1 - m) if m else cv < av

    def tick(self, now_ms: float) -> SwitchEvent | None:
        st = self.state
        if st.active is None:
            raise RuntimeError("scheduler not started")
        m = self.backend.measure(self.last_tick_ms, now_ms)
        self.last_tick_ms = now_ms
        active = self.store.config(st.active)
        if m.complete and not st.degraded:
            new = self._refreshed(self.store.stats(st.active), active, m, now_ms)
            self.store.update(st.active, new)
            st.snapshot_prev, st.snapshot_last = st.snapshot_last, new
        elif not m.complete:
            log.debug("t=%.0f ms: partial window, store not refreshed", now_ms)
        snaps = tuple(s for s in (st.snapshot_prev, st.snapshot_last) if s is not None)
        ctx = PolicyContext(m.offered_gbps, st.active, snaps)
        cand = select(st.policy, self.store, ctx, self.registry)
        self.last_staleness_ms = now_ms - self.store.stats(cand.id).last_updated_ms
        changed, st.policy_changed = st.policy_changed, False
        if cand.id == st.active:
            return None
        if not changed and not self._beats(cand, active, m.offered_gbps):
            return None
        reason = POLICY_CHANGE if changed else POLICY_DECISION
        try:
            ev = self.backend.activate(cand, now_ms, reason)
        except ActivationError as exc:
            log.warning("t=%.0f ms: activating %s failed (%s); staying on #%d", now_ms, cand.label(), exc, st.active)
            self.store.update(cand.id, ConfigStats.unprofiled(now_ms))
            return None
        st.active = cand.id
        st.snapshot_prev = st.snapshot_last = None
        self.switches.append(ev)
        return ev
