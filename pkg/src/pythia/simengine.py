"""Deterministic discrete-event backend driven by the calibration tables.

Time is kept in integer microseconds. Traffic is modelled per batch: each
interface's admitted rate is a piecewise-constant curve, and batch ``k``
closes when its last packet arrives. A batch is dispatched to the device its
app is mapped to, waits in that device's FIFO, and is served by the app's
kernel slot for the table-derived service time. Flow affinity is enforced at
dispatch: a batch whose flows overlap outstanding work on another device
waits at its interface until that device drains them.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from pythia.calibration import (DeviceProfile, ModelGapError, PerfTable, context_record,
                                load_calibration, load_device_profiles)
from pythia.powermeter import MeterHandle, SimPowerProvider, energy_between, open_meter, sample
from pythia.profiler import Configuration, ConfigStore, TrainingResult, kernel_of
from pythia.scheduler import (ActivationError, Measurement, STARTUP, Scheduler, SwitchEvent)
from pythia.traffic import FlowAffinityMap, FlowSpan, RateCurve

log = logging.getLogger(__name__)

US_PER_MS = 1000

ENQUEUED, DEFERRED, HELD, DROPPED = "enqueued", "deferred", "held", "dropped"


def _us(ms: float) -> int:
    return int(math.ceil(ms * US_PER_MS - 1e-6))


# ------------------------------------------------------------------ model bits

def service_time(table: PerfTable, config: Configuration, device: str, app: str, batch: int) -> float:
    """Service time (ms) of one batch of ``app`` on ``device`` under ``config``'s co-worker context.

    The printed kernel latency is rounded to 0.1 ms, so for small batches it
    can imply more than the printed Mpps; the larger of the two times is used
    so a kernel never outruns its calibrated rate.
    """
    rec = context_record(table, device, kernel_of(app), batch, config.coworkers(app))
    return max(rec.kernel_latency_ms, batch / (rec.kernel_mpps * 1000.0))


@dataclass(frozen=True)
class Capacity:
    agg_gbps: float
    agg_mpps: float
    app_gbps: dict[str, float]
    app_mpps: dict[str, float]
    service_ms: float            # mean tabled kernel latency across instances


def model_capacity(table: PerfTable, config: Configuration) -> Capacity:
    """Table-driven throughput of a configuration.

    A device's aggregate is the tabled aggregate of its first app's context
    row; the device total is split across its apps in proportion to their
    per-kernel rates.
    """
    agg_g = agg_m = 0.0
    app_g: dict[str, float] = {}
    app_m: dict[str, float] = {}
    lat = []
    for dev in config.devices:
        inst = config.instances_on(dev)
        recs = [context_record(table, dev, kernel_of(a), config.batch_size, config.coworkers(a)) for a in inst]
        dg, dm = recs[0].agg_gbps, recs[0].agg_mpps
        sg = sum(r.kernel_gbps for r in recs)
        sm = sum(r.kernel_mpps for r in recs)
        for a, r in zip(inst, recs):
            app_g[a] = r.kernel_gbps * dg / sg
            app_m[a] = r.kernel_mpps * dm / sm
            lat.append(r.kernel_latency_ms)
        agg_g += dg
        agg_m += dm
    return Capacity(agg_g, agg_m, app_g, app_m, sum(lat) / len(lat))


def admitted_steps(offered: Sequence[Sequence[tuple[float, float]]], cap_gbps: float | None
                   ) -> list[list[tuple[float, float]]]:
    """Scale every interface down proportionally whenever the total exceeds the ingest cap."""
    if cap_gbps is None:
        return [list(s) for s in offered]
    times = sorted({t for s in offered for t, _ in s} | {0.0})
    out: list[list[tuple[float, float]]] = [[] for _ in offered]

    def rate(steps, t):
        r = 0.0
        for st, v in steps:
            if st <= t:
                r = v
        return r

    for t in times:
        rates = [rate(s, t) for s in offered]
        total = sum(rates)
        f = min(1.0, cap_gbps / total) if total > 0 else 1.0
        for i, r in enumerate(rates):
            out[i].append((t, r * f))
    return out


# ----------------------------------------------------------------- engine state

@dataclass(slots=True, eq=False)
class SimBatch:
    iface: int
    app: str
    start_seq: int
    count: int
    first_ms: float
    close_us: int
    span: FlowSpan
    config_id: int = -1
    device: str = ""
    dispatch_us: int = -1
    start_us: int = -1
    done_us: int = -1
    pin: int = -1

    @property
    def fill_ms(self) -> float:
        return self.close_us / US_PER_MS - self.first_ms


@dataclass(eq=False)
class DeviceState:
    profile: DeviceProfile
    powered: bool = False
    ready_us: int = 0
    queue: list = field(default_factory=list)              # FIFO of SimBatch
    in_service: dict = field(default_factory=dict)        # app -> SimBatch
    busy_us: int = 0                                       # completed kernel busy time

    @property
    def id(self) -> str:
        return self.profile.id

    @property
    def capacity(self) -> int:
        return self.profile.queue_capacity_batches

    def outstanding(self) -> int:
        return len(self.queue) + len(self.in_service)


def dispatch(batch: SimBatch, device: DeviceState, affinity: FlowAffinityMap, backpressure: bool = False,
             app_limit: int | None = None) -> str:
    """Hand a batch to a device queue.

    Returns ``deferred`` when its flows are held by another device, else
    ``enqueued``; a full queue drops the batch, or (with ``backpressure``)
    leaves it waiting at the interface. ``app_limit`` caps how many queue
    entries one app may hold, so a backlogged app cannot starve its co-workers.
    """
    if affinity.conflicts(batch.span, device.id):
        return DEFERRED
    full = len(device.queue) >= device.capacity
    if not full and app_limit is not None:
        full = sum(1 for b in device.queue if b.app == batch.app) >= app_limit
    if full:
        return HELD if backpressure else DROPPED
    device.queue.append(batch)
    batch.device = device.id
    batch.pin = affinity.pin(batch.span, device.id)
    return ENQUEUED


def utilization(busy_ms: float, window_ms: float, slots: int = 1) -> float:
    """Busy time over the window (summed over ``slots`` kernels), clamped to [0, 1]."""
    if window_ms <= 0:
        raise ValueError("window must be positive")
    return min(max(busy_ms / (window_ms * max(slots, 1)), 0.0), 1.0)


@dataclass
class _Iface:
    idx: int
    app: str
    offered: RateCurve
    admitted: RateCurve
    next_seq: int = 0
    version: int = 0
    hold: deque = field(default_factory=deque)
    held_pkts: int = 0


@dataclass
class _AppWindow:
    bits: float = 0.0
    packets: int = 0
    service_us: int = 0
    batches: int = 0


@dataclass(frozen=True)
class ServiceRecord:
    iface: int
    start_seq: int
    count: int
    device: str
    start_us: int
    done_us: int
    fill_ms: float
    wait_ms: float
    service_ms: float


class SimEngine:
    """Event loop plus the backend surface the scheduler uses."""

    def __init__(self, table: PerfTable, profiles: Mapping[str, DeviceProfile],
                 interfaces: Sequence[tuple[str, Sequence[tuple[float, float]]]],
                 packet_bytes: int = 1514, flows: int = 4096, burst: int = 1,
                 ingest_cap_gbps: float | None = 30.0, iface_buffer_packets: int = 262_144,
                 meter_interval_ms: float = 100.0, backpressure: bool = True,
                 keep_service_log: bool = True):
        self.table = table
        self.profiles = dict(profiles)
        self.packet_bits = packet_bytes * 8
        self.flows = flows
        self.burst = burst
        self.buffer_pkts = iface_buffer_packets
        self.backpressure = backpressure
        self.meter_us = _us(meter_interval_ms)
        adm = admitted_steps([s for _, s in interfaces], ingest_cap_gbps)
        self.ifaces = [_Iface(i, app, RateCurve(list(steps), packet_bytes), RateCurve(adm[i], packet_bytes))
                       for i, (app, steps) in enumerate(interfaces)]
        self.devices = {d: DeviceState(p) for d, p in self.profiles.items()}
        self.affinity = FlowAffinityMap()
        self.provider = SimPowerProvider(self.profiles, 0.0,
                                         initial={d: (0.0, False) for d in self.profiles})
        heads = sorted({p.power_domain or p.id for p in self.profiles.values()})
        self.meters: dict[str, MeterHandle] = {h: open_meter(h, self.provider, meter_interval_ms) for h in heads}
        self.now = 0
        self._events: list = []
        self._seq = 0
        self.active: Configuration | None = None
        self._configs: dict[int, Configuration] = {}
        self._cfg_since_us = 0
        self._ready_at_us = 0
        self._backlog_at_mark = False
        self.processed_pkts = 0
        self.dropped_pkts = 0
        self.service_log: list[ServiceRecord] = []
        self.keep_service_log = keep_service_log
        self.power_log: list[tuple[float, dict[str, bool]]] = []    # (ms, powered) at each transition
        self.latencies: list[float] = []
        self._win: dict[str, _AppWindow] = {}
        self._win_lat: list[float] = []
        self._win_drops = 0
        self._svc_cache: dict = {}
        self.handlers = {
            "batch_ready": self._on_batch_ready,
            "service_done": self._on_service_done,
            "device_power_change": self._on_device_ready,
            "meter_sample": self._on_meter,
        }
        for h in self.meters.values():
            sample(h, 0.0)
        self._push(self.meter_us, "meter_sample", None)

    # ----------------------------------------------------------------- events

    def _push(self, t_us: int, kind: str, payload) -> None:
        heapq.heappush(self._events, (t_us, self._seq, kind, payload))
        self._seq += 1

    def schedule(self, t_ms: float, kind: str, payload=None) -> None:
        """External event hook (ticks, control commands)."""
        self._push(_us(t_ms), kind, payload)

    def next_time_us(self) -> int | None:
        return self._events[0][0] if self._events else None

    def step(self) -> tuple[int, str, object]:
        t, _, kind, payload = heapq.heappop(self._events)
        if t < self.now:
            raise RuntimeError("event queue went back in time")
        self.now = t
        h = self.handlers.get(kind)
        if h is not None:
            h(payload)
        return t, kind, payload

    def run_until(self, t_ms: float) -> None:
        """Process every event up to and including ``t_ms``."""
        end = _us(t_ms)
        while self._events and self._events[0][0] <= end:
            self.step()
        self.now = max(self.now, end)

    @property
    def now_ms(self) -> float:
        return self.now / US_PER_MS

    # ----------------------------------------------------------------- power

    def _n_slots(self, dev: DeviceState) -> int:
        mapped = len(self.active.instances_on(dev.id)) if self.active else 0
        return max(mapped, len(dev.in_service), 1)

    def _power_update(self, dev: DeviceState) -> None:
        util = min(len(dev.in_service) / self._n_slots(dev), 1.0) if dev.powered else 0.0
        self.provider.set_state(dev.id, self.now_ms, util, dev.powered)

    def _on_meter(self, _payload) -> None:
        self.sample_meters()
        self._push(self.now + self.meter_us, "meter_sample", None)

    def sample_meters(self) -> None:
        t = self.now_ms
        for h in self.meters.values():
            if h.last is None or h.last.t_ms < t:
                sample(h, t)
        prev = min(h.history[-1].t_ms for h in self.meters.values())
        self.provider.prune(prev)

    def energy(self, t0_ms: float, t1_ms: float) -> dict[str, float]:
        return {d: energy_between(h, t0_ms, t1_ms) for d, h in self.meters.items()}

    # -------------------------------------------------------------- traffic

    def _schedule_close(self, itf: _Iface) -> None:
        itf.version += 1
        if self.active is None:
            return
        t = itf.admitted.time_of(itf.next_seq + self.active.batch_size)
        if math.isfinite(t):
            self._push(max(self.now, _us(t)), "batch_ready", (itf.idx, itf.version))

    def _on_batch_ready(self, payload) -> None:
        idx, version = payload
        itf = self.ifaces[idx]
        if version != itf.version:
            return
        b = self.active.batch_size
        start = itf.next_seq
        first = itf.admitted.time_of(start + 1)
        batch = SimBatch(idx, itf.app, start, b, first, self.now,
                         FlowSpan(idx, start, b, self.flows, self.burst))
        itf.next_seq += b
        if itf.held_pkts + b > self.buffer_pkts:
            self._drop(batch)
        else:
            itf.hold.append(batch)
            itf.held_pkts += b
            self._pump(itf)
        self._schedule_close(itf)

    def _drop(self, batch: SimBatch) -> None:
        self.dropped_pkts += batch.count
        self._win_drops += batch.count

    def _pump(self, itf: _Iface) -> None:
        """Dispatch held batches from the head of the interface queue."""
        while itf.hold:
            batch = itf.hold[0]
            dev = self.devices[self.active.device_of(batch.app)]
            sharing = max(len(self.active.instances_on(dev.id)), 1)
            res = dispatch(batch, dev, self.affinity, self.backpressure, -(-dev.capacity // sharing))
            if res in (DEFERRED, HELD):
                return
            itf.hold.popleft()
            itf.held_pkts -= batch.count
            if res == DROPPED:
                self._drop(batch)
                continue
            batch.config_id = self.active.id
            batch.dispatch_us = self.now
            self._start(dev)

    def _pump_all(self) -> None:
        for itf in self.ifaces:
            if itf.hold:
                self._pump(itf)

    # --------------------------------------------------------------- service

    def _service_ms(self, config_id: int, device: str, app: str, count: int) -> float:
        key = (config_id, device, app, count)
        v = self._svc_cache.get(key)
        if v is None:
            v = service_time(self.table, self._configs[config_id], device, app, count)
            self._svc_cache[key] = v
        return v

    def _start(self, dev: DeviceState) -> None:
        if self.now < dev.ready_us or not dev.powered:
            return
        started = False
        i = 0
        while i < len(dev.queue):
            b = dev.queue[i]
            if b.app in dev.in_service:
                i += 1
                continue
            dev.queue.pop(i)
            b.start_us = self.now
            b.done_us = self.now + _us(self._service_ms(b.config_id, dev.id, b.app, b.count))
            dev.in_service[b.app] = b
            self._push(b.done_us, "service_done", (dev.id, b.app))
            started = True
        if started:
            self._power_update(dev)
            self._pump_all()

    def _on_service_done(self, payload) -> None:
        dev_id, app = payload
        dev = self.devices[dev_id]
        b = dev.in_service.pop(app)
        svc = b.done_us - b.start_us
        dev.busy_us += svc
        self.affinity.release(b.pin)
        self.processed_pkts += b.count
        w = self._win.setdefault(app, _AppWindow())
        w.bits += b.count * self.packet_bits
        w.packets += b.count
        w.service_us += svc
        w.batches += 1
        wait = (b.start_us - b.close_us) / US_PER_MS
        lat = b.fill_ms + wait + svc / US_PER_MS
        self._win_lat.append(lat)
        self.latencies.append(lat)
        if self.keep_service_log:
            self.service_log.append(ServiceRecord(b.iface, b.start_seq, b.count, dev_id, b.start_us,
                                                  b.done_us, b.fill_ms, wait, svc / US_PER_MS))
        self._power_update(dev)
        self._start(dev)
        self._pump_all()
        self._maybe_power_off(dev)

    # ------------------------------------------------------------- switching

    def _maybe_power_off(self, dev: DeviceState) -> None:
        if dev.powered and dev.id not in self.active.devices and not dev.outstanding():
            dev.powered = False
            self._power_update(dev)
            self._log_power()

    def _log_power(self) -> None:
        state = self.powered()
        if not self.power_log or self.power_log[-1][1] != state:
            self.power_log.append((self.now_ms, state))

    def _on_device_ready(self, dev_id) -> None:
        self._start(self.devices[dev_id])
        self._pump_all()

    def activate(self, config: Configuration, now_ms: float | None = None, reason: str = STARTUP) -> SwitchEvent:
        """Switch to ``config``.

        New devices power on while departing ones drain; the switch completes
        once every newly powered or re-mapped device is ready. The first
        activation (startup) is instantaneous.
        """
        t_ms = self.now_ms if now_ms is None else now_ms
        old = self.active
        if old is not None and old.id == config.id:
            return SwitchEvent(t_ms, old.id, config.id, reason, t_ms)
        for dev_id in config.devices:
            if dev_id not in self.devices:
                raise ActivationError(f"device {dev_id} is not part of this run")
        try:
            for app in config.apps:
                dev = config.device_of(app)
                service_time(self.table, config, dev, app, config.batch_size)
        except ModelGapError as exc:
            raise ActivationError(str(exc)) from exc
        self._configs[config.id] = config
        latency_ms = 0.0
        self.active = config
        for dev_id in config.devices:
            dev = self.devices[dev_id]
            changed = old is None or old.instances_on(dev_id) != config.instances_on(dev_id)
            if old is None:
                dev.powered = True
                dev.ready_us = self.now
            elif not dev.powered:
                dev.powered = True
                latency_ms = max(latency_ms, dev.profile.switch_latency_ms)
                dev.ready_us = self.now + _us(dev.profile.switch_latency_ms)
            elif changed:
                latency_ms = max(latency_ms, dev.profile.switch_latency_ms)
                dev.ready_us = max(dev.ready_us, self.now + _us(dev.profile.switch_latency_ms))
            if dev.ready_us > self.now:
                self._push(dev.ready_us, "device_power_change", dev_id)
            self._power_update(dev)
        for dev in self.devices.values():
            if dev.id not in config.devices:
                self._maybe_power_off(dev)
            else:
                self._power_update(dev)
        self._log_power()
        self._cfg_since_us = self.now
        self._ready_at_us = self.now + _us(latency_ms)
        if old is None or old.batch_size != config.batch_size:
            for itf in self.ifaces:
                self._schedule_close(itf)
        self._pump_all()
        return SwitchEvent(t_ms, None if old is None else old.id, config.id, reason, t_ms + latency_ms)

    # ----------------------------------------------------------- measurement

    def offered_gbps(self, t_ms: float) -> dict[str, float]:
        """Instantaneous admitted rate per app."""
        out: dict[str, float] = {}
        for itf in self.ifaces:
            out[itf.app] = out.get(itf.app, 0.0) + itf.admitted.rate_gbps(t_ms)
        return out

    def _rate(self, curve_attr: str, t0: float, t1: float) -> dict[str, float]:
        out: dict[str, float] = {}
        for itf in self.ifaces:
            c = getattr(itf, curve_attr)
            bits = (c.count(t1) - c.count(t0)) * self.packet_bits
            out[itf.app] = out.get(itf.app, 0.0) + bits / ((t1 - t0) * 1e6)
        return out

    def window_offered(self, t0: float, t1: float) -> dict[str, float]:
        return self._rate("offered", t0, t1)

    def window_admitted(self, t0: float, t1: float) -> dict[str, float]:
        return self._rate("admitted", t0, t1)

    def take_window(self) -> tuple[dict[str, _AppWindow], list[float], int]:
        w, lat, drops = self._win, self._win_lat, self._win_drops
        self._win, self._win_lat, self._win_drops = {}, [], 0
        return w, lat, drops

    def measure(self, t0_ms: float, t1_ms: float) -> Measurement:
        self.sample_meters()
        span = t1_ms - t0_ms
        win, lat, _ = self.peek_window()
        energy = sum(self.energy(t0_ms, t1_ms).values()) if span > 0 else 0.0
        apps = self.active.apps
        app_g = {a: (win[a].bits / (win[a].service_us / US_PER_MS) / 1e6
                     if a in win and win[a].service_us > 0 else None) for a in apps}
        app_m = {a: (win[a].packets / (win[a].service_us / US_PER_MS) / 1e3
                     if a in win and win[a].service_us > 0 else None) for a in apps}
        # a window that opens with a standing interface backlog measures the
        # recovery from an earlier overload, not the configuration itself
        settled = not self._backlog_at_mark
        self._backlog_at_mark = self._backlogged()
        complete = self._cfg_since_us <= _us(t0_ms) and self._ready_at_us <= _us(t0_ms) and settled
        return Measurement(
            window_ms=span,
            offered_gbps=self.window_admitted(t0_ms, t1_ms) if span > 0 else self.offered_gbps(t1_ms),
            app_gbps=app_g, app_mpps=app_m,
            latency_ms=sum(lat) / len(lat) if lat else None,
            power_watts=energy / (span / 1000.0) if span > 0 else 0.0,
            batches=sum(w.batches for w in win.values()),
            complete=complete and span > 0,
        )

    def _backlogged(self) -> bool:
        """More work waiting than steady sub-capacity operation leaves behind
        (anything held at an interface, or over one queued batch per app)."""
        if any(i.held_pkts for i in self.ifaces):
            return True
        n_apps = len(self.active.apps) if self.active else 0
        return sum(len(d.queue) for d in self.devices.values()) > n_apps

    def peek_window(self) -> tuple[dict[str, _AppWindow], list[float], int]:
        return self._win, self._win_lat, self._win_drops

    # ------------------------------------------------------------ accounting

    def counts(self) -> dict[str, int]:
        """Packet conservation snapshot at the current time."""
        gen = filling = held = queued_dev = in_flight = 0
        for itf in self.ifaces:
            arrived = int(math.floor(itf.admitted.count(self.now_ms) + 1e-6))
            gen += arrived
            filling += arrived - itf.next_seq
            held += itf.held_pkts
        for dev in self.devices.values():
            queued_dev += sum(b.count for b in dev.queue)
            in_flight += sum(b.count for b in dev.in_service.values())
        return {"generated": gen, "processed": self.processed_pkts, "dropped": self.dropped_pkts,
                "queued": filling + held + queued_dev, "in_flight": in_flight}

    def nic_excess_pkts(self, t_ms: float) -> int:
        return sum(int(math.floor(i.offered.count(t_ms) + 1e-6)) - int(math.floor(i.admitted.count(t_ms) + 1e-6))
                   for i in self.ifaces)

    def powered(self) -> dict[str, bool]:
        return {d: s.powered for d, s in self.devices.items()}


def check_flow_safety(log_: Sequence[ServiceRecord], flows: int, burst: int = 1) -> list[tuple[ServiceRecord, ServiceRecord]]:
    """Pairs of batches sharing a flow that were in service on different devices at once."""
    bad = []
    active: dict[int, list[ServiceRecord]] = {}
    for r in sorted(log_, key=lambda r: (r.start_us, r.done_us)):
        cur = [o for o in active.get(r.iface, []) if o.done_us > r.start_us]
        span = FlowSpan(r.iface, r.start_seq, r.count, flows, burst)
        for o in cur:
            if o.device != r.device and span.intersects(FlowSpan(o.iface, o.start_seq, o.count, flows, burst)):
                bad.append((o, r))
        cur.append(r)
        active[r.iface] = cur
    return bad


# ------------------------------------------------------------------ backends

class SimBackend:
    """Profiles configurations by running them on a private engine."""

    name = "sim"

    def __init__(self, table: PerfTable | None = None, profiles: Mapping[str, DeviceProfile] | None = None,
                 packet_bytes: int = 1514, flows: int = 4096):
        self.profiles = dict(profiles) if profiles is not None else load_device_profiles()
        self.table = table if table is not None else load_calibration(devices=self.profiles)
        self.packet_bytes = packet_bytes
        self.flows = flows

    def train(self, config: Configuration, training_batches: int) -> TrainingResult:
        """Drive every app at its own service capacity until each has finished
        ``training_batches`` batches; throughput comes from the tables, latency
        and power from the run."""
        cap = model_capacity(self.table, config)
        bits = self.packet_bytes * 8
        ifaces = []
        for app in config.apps:
            svc = service_time(self.table, config, config.device_of(app), app, config.batch_size)
            sim_gbps = config.batch_size * bits / svc / 1e6
            ifaces.append((app, [(0.0, min(cap.app_gbps[app], sim_gbps))]))
        eng = SimEngine(self.table, self.profiles, ifaces, self.packet_bytes, self.flows,
                        ingest_cap_gbps=None, keep_service_log=False)
        eng.activate(config, 0.0)
        done: dict[str, int] = {a: 0 for a in config.apps}
        seen = 0
        while min(done.values()) < training_batches:
            if not eng._events:
                raise ModelGapError(f"training stalled for {config.label()}")
            eng.step()
            for w_app, w in eng.peek_window()[0].items():
                done[w_app] = w.batches
            if len(eng.latencies) > seen:
                seen = len(eng.latencies)
        end = eng.now_ms
        eng.sample_meters()
        energy = sum(eng.energy(0.0, end).values())
        return TrainingResult(cap.agg_gbps, cap.agg_mpps, dict(cap.app_gbps), cap.service_ms,
                              list(eng.latencies), energy, end, min(done.values()))


# ------------------------------------------------------------------- trace

TRACE_FIXED = ["t_ms", "config_id", "offered_gbps", "processed_gbps", "latency_ms", "drops"]
TRACE_EXTRA = ["admitted_gbps", "nic_excess", "staleness_ms", "policy"]
SWITCH_COLUMNS = ["t_ms", "from", "to", "reason", "completion_ms"]


@dataclass(frozen=True)
class TraceRow:
    t_ms: float
    config_id: int
    offered_gbps: float
    processed_gbps: float
    latency_ms: float
    drops: int
    watts: tuple[tuple[str, float], ...]
    admitted_gbps: float
    nic_excess: int
    staleness_ms: float
    policy: str


@dataclass
class Trace:
    scenario: str
    domains: list[str]
    rows: list[TraceRow] = field(default_factory=list)
    switches: list[SwitchEvent] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    flow_violations: int = 0
    service_log: list[ServiceRecord] = field(default_factory=list, repr=False)
    powered_history: list[tuple[float, dict[str, bool]]] = field(default_factory=list, repr=False)
    end_ms: float = 0.0
    total_energy_j: float = 0.0
    seed: int = 0

    def header(self) -> list[str]:
        return TRACE_FIXED + [f"dev:{d}_watts" for d in self.domains] + TRACE_EXTRA

    def csv_rows(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            w = dict(r.watts)
            out.append([f"{r.t_ms:.1f}", str(r.config_id), f"{r.offered_gbps:.4f}", f"{r.processed_gbps:.4f}",
                        f"{r.latency_ms:.4f}", str(r.drops), *(f"{w[d]:.4f}" for d in self.domains),
                        f"{r.admitted_gbps:.4f}", str(r.nic_excess), f"{r.staleness_ms:.1f}", r.policy])
        return out

    def summary(self) -> dict:
        rows = self.rows
        span_s = self.end_ms / 1000.0
        thr = [r.processed_gbps for r in rows]
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "duration_ms": self.end_ms,
            "ticks": len(rows),
            "mean_throughput_gbps": round(sum(thr) / len(thr), 6) if thr else 0.0,
            "peak_throughput_gbps": round(max(thr), 6) if thr else 0.0,
            "mean_power_watts": round(self.total_energy_j / span_s, 6) if span_s > 0 else 0.0,
            "total_energy_j": round(self.total_energy_j, 6),
            "total_drops": sum(r.drops for r in rows),
            "nic_excess_packets": sum(r.nic_excess for r in rows),
            "switch_count": sum(1 for s in self.switches if s.reason != STARTUP),
            "max_switch_ms": round(max((s.duration_ms for s in self.switches), default=0.0), 6),
            "flow_violations": self.flow_violations,
            "packets": dict(self.counts),
        }


def write_trace_csv(trace: Trace, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace.header())
        w.writerows(trace.csv_rows())


def write_switch_csv(trace: Trace, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWITCH_COLUMNS)
        for s in trace.switches:
            w.writerow([f"{s.t_ms:.3f}", "" if s.from_config is None else s.from_config, s.to_config,
                        s.reason, f"{s.completion_ms:.3f}"])


class ScenarioMismatch(ValueError):
    pass


def check_store_matches(spec, store: ConfigStore) -> None:
    if not len(store):
        raise ScenarioMismatch("store is empty")
    apps = store.apps
    if apps != list(spec.apps):
        raise ScenarioMismatch(f"store apps {apps} do not match scenario apps {spec.apps}")
    extra = set(store.devices) - set(spec.devices)
    if extra:
        raise ScenarioMismatch(f"store uses devices outside the scenario: {', '.join(sorted(extra))}")


def run(spec, store: ConfigStore, seed: int | None = None, paper_fidelity: bool = False,
        monitor_interval_ms: float | None = None, table: PerfTable | None = None,
        profiles: Mapping[str, DeviceProfile] | None = None, registry=None) -> Trace:
    """Simulate a scenario against a profiled store."""
    check_store_matches(spec, store)
    profiles = dict(profiles) if profiles is not None else load_device_profiles(spec.device_file)
    if table is None:
        table = load_calibration(spec.calibration, devices=profiles)
    interval = monitor_interval_ms or spec.monitor_interval_ms
    eng = SimEngine(table, profiles, spec.interfaces, spec.packet_bytes, spec.flows, spec.burst,
                    spec.ingest_cap_gbps, spec.iface_buffer_packets, spec.meter_interval_ms)
    sched = Scheduler.create(store, spec.policy, eng, interval,
                             0.0 if paper_fidelity else spec.hysteresis, spec.ewma_alpha, registry)
    trace = Trace(spec.name, sorted(eng.meters), seed=spec.seed if seed is None else seed)
    horizon = spec.horizon_ms
    for c in spec.commands:
        eng.schedule(c.at_ms, "control_command", str(c))
    k = 1
    while k * interval <= horizon + 1e-9:
        eng.schedule(k * interval, "monitor_tick", None)
        k += 1
    sched.start(0.0)
    last = 0.0
    end = horizon

    def emit(t: float) -> None:
        nonlocal last
        cfg_before = sched.state.active
        policy = str(sched.state.policy)
        ev = sched.tick(t)
        win, lat, drops = eng.take_window()
        span = t - last
        energy = eng.energy(last, t)
        offered = sum(eng.window_offered(last, t).values())
        admitted = sum(eng.window_admitted(last, t).values())
        bits = sum(w.bits for w in win.values())
        trace.rows.append(TraceRow(
            t, cfg_before, offered, bits / (span * 1e6) if span > 0 else 0.0,
            sum(lat) / len(lat) if lat else 0.0, drops,
            tuple((d, energy[d] / (span / 1000.0) if span > 0 else 0.0) for d in trace.domains),
            admitted, eng.nic_excess_pkts(t) - eng.nic_excess_pkts(last), sched.last_staleness_ms, policy))
        trace.total_energy_j += sum(energy.values())
        last = t

    while eng.next_time_us() is not None and eng.next_time_us() <= _us(end):
        t_us, kind, payload = eng.step()
        t = t_us / US_PER_MS
        if kind == "control_command":
            try:
                sched.command(payload, t)
            except (ValueError, KeyError) as exc:
                log.warning("t=%.0f ms: rejected command %r: %s", t, payload, exc)
            if sched.state.shutdown_at_ms is not None:
                end = min(end, max(sched.state.shutdown_at_ms, t))
        elif kind == "monitor_tick":
            emit(t)
    eng.run_until(end)
    if end > last + 1e-9:
        emit(end)
    trace.end_ms = end
    trace.switches = list(sched.switches)
    trace.powered_history = list(eng.power_log)
    trace.counts = eng.counts()
    trace.service_log = eng.service_log
    trace.flow_violations = len(check_flow_safety(eng.service_log, spec.flows, spec.burst))
    return trace
