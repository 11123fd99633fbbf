"""Energy metering behind one API, with pluggable providers.

The ``sim`` provider integrates the calibration power model over simulated
time. Each device gets a piecewise-linear power timeline (steps are two knots
at the same instant), so the energy between two samples is exact; with no
state change inside an interval it reduces to the trapezoid rule. The
``live`` provider only covers the host CPU: it applies the same linear model
to the process-visible CPU utilization.
"""

from __future__ import annotations

import bisect
import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from pythia.calibration import DeviceProfile, load_device_profiles, power_draw

HISTORY_SAMPLES = 10_000


class MeterError(RuntimeError):
    pass


class UnknownProvider(MeterError, KeyError):
    pass


class UnknownDevice(MeterError, KeyError):
    pass


class ClockError(MeterError, ValueError):
    pass


class PowerProvider:
    """Common provider surface. ``energy`` may return None when the provider
    cannot integrate by itself; the meter then falls back to the trapezoid
    over its own samples."""

    name = "abstract"

    def devices(self) -> set[str]:
        raise NotImplementedError

    def watts(self, device: str, t_ms: float) -> float:
        raise NotImplementedError

    def energy(self, device: str, t0_ms: float, t1_ms: float) -> float | None:
        return None


class _Timeline:
    """Piecewise-linear watts over time; knots are (t_ms, watts)."""

    __slots__ = ("t", "w")

    def __init__(self, t0: float, watts: float):
        self.t = [t0]
        self.w = [watts]

    def add(self, t: float, watts: float, ramp: bool) -> None:
        if t < self.t[-1]:
            raise ClockError(f"state change at {t} ms precedes last change at {self.t[-1]} ms")
        if not ramp:
            if t == self.t[-1]:
                # replace the right-hand value of a step at the same instant
                if len(self.t) >= 2 and self.t[-2] == t:
                    self.w[-1] = watts
                    return
            self.t.append(t)
            self.w.append(self.w[-1])
        self.t.append(t)
        self.w.append(watts)

    def at(self, t: float) -> float:
        """Right-continuous value at ``t``."""
        i = bisect.bisect_right(self.t, t) - 1
        if i < 0:
            return self.w[0]
        if i == len(self.t) - 1:
            return self.w[i]
        t0, t1 = self.t[i], self.t[i + 1]
        return self.w[i] + (self.w[i + 1] - self.w[i]) * (t - t0) / (t1 - t0)

    def knots_between(self, a: float, b: float) -> list[float]:
        lo = bisect.bisect_right(self.t, a)
        hi = bisect.bisect_left(self.t, b)
        return self.t[lo:hi]

    def left(self, t: float) -> float:
        """Left limit at ``t``."""
        i = bisect.bisect_left(self.t, t) - 1
        if i < 0:
            return self.w[0]
        if i == len(self.t) - 1:
            return self.w[i]
        t0, t1 = self.t[i], self.t[i + 1]
        return self.w[i] + (self.w[i + 1] - self.w[i]) * (t - t0) / (t1 - t0)

    def prune(self, before: float) -> None:
        """Drop knots no longer needed for queries at or after ``before``."""
        i = bisect.bisect_right(self.t, before) - 2
        if i > 0:
            del self.t[:i]
            del self.w[:i]


def _integrate(points: list[tuple[float, float, float]]) -> float:
    """Sum of trapezoids over (t, left_watts, right_watts) breakpoints; watts*ms -> J."""
    total = 0.0
    for (ta, _, wa), (tb, wb, _) in zip(points, points[1:]):
        total += 0.5 * (wa + wb) * (tb - ta)
    return total / 1000.0


class SimPowerProvider(PowerProvider):
    """Power from the calibration model, driven by utilization/powered updates.

    Devices sharing a ``power_domain`` are read through the domain head: the
    head's meter reports the members' sum, capped at the head's TDP.
    """

    name = "sim"

    def __init__(self, profiles: Mapping[str, DeviceProfile], start_ms: float = 0.0,
                 initial: Mapping[str, tuple[float, bool]] | None = None):
        self.profiles = dict(profiles)
        self._lines: dict[str, _Timeline] = {}
        for dev, prof in self.profiles.items():
            util, powered = (initial or {}).get(dev, (0.0, True))
            self._lines[dev] = _Timeline(start_ms, power_draw(prof, util, powered))

    def devices(self) -> set[str]:
        return set(self.profiles)

    def members(self, device: str) -> list[str]:
        """Devices whose draw a meter on ``device`` reports."""
        if device not in self.profiles:
            raise UnknownDevice(device)
        dom = self.profiles[device].power_domain or device
        if dom != device:
            # a non-head member is metered on its own
            return [device]
        return sorted(d for d, p in self.profiles.items() if (p.power_domain or d) == device)

    def set_state(self, device: str, t_ms: float, utilization: float, powered: bool, ramp: bool = False) -> None:
        """Record a utilization/power state from ``t_ms`` on.

        ``ramp=True`` makes the change linear from the previous knot instead of a step.
        """
        if device not in self.profiles:
            raise UnknownDevice(device)
        self._lines[device].add(t_ms, power_draw(self.profiles[device], utilization, powered), ramp)

    def _cap(self, device: str) -> float:
        return self.profiles[device].tdp_watts

    def watts(self, device: str, t_ms: float) -> float:
        mem = self.members(device)
        total = sum(self._lines[m].at(t_ms) for m in mem)
        return min(total, self._cap(device)) if len(mem) > 1 else total

    def energy(self, device: str, t0_ms: float, t1_ms: float) -> float:
        if t1_ms <= t0_ms:
            return 0.0
        mem = self.members(device)
        lines = [self._lines[m] for m in mem]
        ts = sorted({t0_ms, t1_ms, *(k for ln in lines for k in ln.knots_between(t0_ms, t1_ms))})
        cap = self._cap(device) if len(mem) > 1 else float("inf")
        pts: list[tuple[float, float, float]] = []
        prev_t = prev_w = None
        for t in ts:
            lft = sum(ln.left(t) for ln in lines) if prev_t is not None else 0.0
            rgt = sum(ln.at(t) for ln in lines)
            if prev_t is not None and (prev_w - cap) * (lft - cap) < 0:
                # the uncapped sum crosses the cap inside this segment
                tc = prev_t + (cap - prev_w) * (t - prev_t) / (lft - prev_w)
                pts.append((tc, cap, cap))
            pts.append((t, min(lft, cap), min(rgt, cap)))
            prev_t, prev_w = t, rgt
        return _integrate(pts)

    def prune(self, before_ms: float) -> None:
        for ln in self._lines.values():
            ln.prune(before_ms)


class LiveCpuProvider(PowerProvider):
    """Host CPU only: linear model applied to system CPU utilization (psutil)."""

    name = "live"

    def __init__(self, profile: DeviceProfile, util_fn: Callable[[], float] | None = None):
        self.profile = profile
        self._util_fn = util_fn

    def devices(self) -> set[str]:
        return {self.profile.id}

    def _util(self) -> float:
        if self._util_fn is not None:
            return min(max(self._util_fn(), 0.0), 1.0)
        import psutil
        return min(max(psutil.cpu_percent(interval=None) / 100.0, 0.0), 1.0)

    def watts(self, device: str, t_ms: float) -> float:
        if device != self.profile.id:
            raise UnknownDevice(device)
        return power_draw(self.profile, self._util(), True)


class ProviderRegistry:
    """Name -> provider factory; factories run lazily on first use."""

    def __init__(self) -> None:
        self._factories: dict[str, Callable[[], PowerProvider]] = {}
        self._instances: dict[str, PowerProvider] = {}

    def register(self, name: str, factory: Callable[[], PowerProvider] | PowerProvider) -> None:
        if isinstance(factory, PowerProvider):
            self._instances[name] = factory
            self._factories[name] = lambda f=factory: f
        else:
            self._factories[name] = factory
            self._instances.pop(name, None)

    def get(self, name: str) -> PowerProvider:
        if name not in self._factories:
            raise UnknownProvider(f"no power provider named {name!r} (have: {', '.join(sorted(self._factories))})")
        if name not in self._instances:
            self._instances[name] = self._factories[name]()
        return self._instances[name]

    def names(self) -> list[str]:
        return sorted(self._factories)


def _default_live() -> PowerProvider:
    profs = load_device_profiles()
    cpu = next(p for p in profs.values() if p.cls == "cpu")
    return LiveCpuProvider(cpu)


REGISTRY = ProviderRegistry()
REGISTRY.register("sim", lambda: SimPowerProvider(load_device_profiles()))
REGISTRY.register("live", _default_live)


@dataclass(frozen=True)
class PowerSample:
    t_ms: float
    watts: float
    joules_since_prev: float


@dataclass(eq=False)
class MeterHandle:
    device: str
    provider: str
    sample_interval_ms: float
    _source: PowerProvider = field(repr=False, default=None)  # type: ignore[assignment]
    history: deque = field(repr=False, default_factory=lambda: deque(maxlen=HISTORY_SAMPLES))

    def __post_init__(self) -> None:
        if not self.sample_interval_ms > 0:
            raise ValueError("sample_interval_ms must be positive")

    @property
    def last(self) -> PowerSample | None:
        return self.history[-1] if self.history else None


def open_meter(device: str, provider: str | PowerProvider = "sim", interval: float = 100.0,
               registry: ProviderRegistry | None = None) -> MeterHandle:
    if isinstance(provider, PowerProvider):
        src = provider
    else:
        src = (registry or REGISTRY).get(provider)
    if device not in src.devices():
        raise UnknownDevice(f"provider {src.name!r} does not know device {device!r}")
    return MeterHandle(device, src.name, float(interval), src)


def sample(handle: MeterHandle, now: float) -> PowerSample:
    prev = handle.last
    if prev is not None and now < prev.t_ms:
        raise ClockError(f"sample at {now} ms is earlier than previous sample at {prev.t_ms} ms")
    w = handle._source.watts(handle.device, now)
    if prev is None:
        joules = 0.0
    else:
        exact = handle._source.energy(handle.device, prev.t_ms, now)
        joules = exact if exact is not None else 0.5 * (prev.watts + w) * (now - prev.t_ms) / 1000.0
    s = PowerSample(float(now), w, joules)
    handle.history.append(s)
    return s


def energy_between(handle: MeterHandle, t0: float, t1: float) -> float:
    """Joules over [t0, t1]; partial sample intervals are prorated linearly."""
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    hist = handle.history
    if not hist or t0 < hist[0].t_ms or t1 > hist[-1].t_ms:
        span = f"[{hist[0].t_ms}, {hist[-1].t_ms}]" if hist else "empty"
        raise MeterError(f"range [{t0}, {t1}] outside sampled history {span}")
    if t0 == t1:
        return 0.0
    times = [s.t_ms for s in hist]
    i = max(bisect.bisect_right(times, t0), 1)
    total = 0.0
    while i < len(hist) and times[i - 1] < t1:
        a, b = times[i - 1], times[i]
        lo, hi = max(a, t0), min(b, t1)
        if hi > lo and b > a:
            j = hist[i].joules_since_prev
            total += j if (lo == a and hi == b) else j * (hi - lo) / (b - a)
        i += 1
    return total


def export_csv(handles: Iterable[MeterHandle], path: str | Path) -> None:
    """Power trace, one row per sample: ``t_ms,device,watts,joules_interval``."""
    rows = sorted(((s.t_ms, h.device, s.watts, s.joules_since_prev) for h in handles for s in h.history))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "device", "watts", "joules_interval"])
        for t, d, watts, j in rows:
            w.writerow([f"{t:.3f}", d, f"{watts:.4f}", f"{j:.6f}"])
