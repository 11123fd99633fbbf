"""Offline analysis: enumerate configurations, profile each one, keep them in an ordered store."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

from pythia.calibration import ModelGapError
from pythia.rbtree import RBTree

DEFAULT_BATCH_GRID = (1024, 2048, 4096, 8192, 16384, 32768, 65536)
DEFAULT_TRAINING_BATCHES = 20


def kernel_of(instance: str) -> str:
    """``"MD5#2"`` -> ``"MD5"``: the application kernel an instance runs."""
    return instance.split("#", 1)[0]


def instance_names(apps: Sequence[str]) -> list[str]:
    """Unique instance names; repeated apps get ``#2``, ``#3`` suffixes."""
    seen: dict[str, int] = {}
    out = []
    for a in apps:
        if "#" in a:
            raise ValueError(f"app id {a!r} must not contain '#'")
        seen[a] = seen.get(a, 0) + 1
        out.append(a if seen[a] == 1 else f"{a}#{seen[a]}")
    return out


@dataclass(frozen=True)
class Configuration:
    id: int
    mapping: tuple[tuple[str, str], ...]   # (app instance, device), in app order
    batch_size: int

    def __post_init__(self) -> None:
        names = [a for a, _ in self.mapping]
        if not names:
            raise ValueError("configuration maps no apps")
        if len(set(names)) != len(names):
            raise ValueError("an app instance is mapped twice")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def apps(self) -> list[str]:
        return [a for a, _ in self.mapping]

    @property
    def devices(self) -> list[str]:
        """Devices with at least one kernel, in first-use order."""
        return list(dict.fromkeys(d for _, d in self.mapping))

    def device_of(self, instance: str) -> str:
        for a, d in self.mapping:
            if a == instance:
                return d
        raise KeyError(instance)

    def instances_on(self, device: str) -> list[str]:
        return [a for a, d in self.mapping if d == device]

    def coworkers(self, instance: str) -> list[str]:
        """Kernels sharing the instance's device (the co-worker context)."""
        dev = self.device_of(instance)
        return [kernel_of(a) for a in self.instances_on(dev) if a != instance]

    def mapping_str(self) -> str:
        return ",".join(f"{a}={d}" for a, d in self.mapping)

    def label(self) -> str:
        return f"#{self.id} {self.mapping_str()} b={self.batch_size}"


def enumerate_configs(apps: Sequence[str], devices: Sequence[str], batch_grid: Sequence[int]) -> list[Configuration]:
    """All |devices|^|apps| x |grid| configurations; ids are enumeration indexes."""
    if not apps or not devices or not batch_grid:
        raise ValueError("apps, devices and batch grid must be non-empty")
    if len(set(devices)) != len(devices) or len(set(batch_grid)) != len(batch_grid):
        raise ValueError("devices and batch sizes must be distinct")
    names = instance_names(apps)
    out = []
    for devs in itertools.product(devices, repeat=len(names)):
        for b in batch_grid:
            out.append(Configuration(len(out), tuple(zip(names, devs)), int(b)))
    return out


PROFILED, UNPROFILED = "ok", "unprofiled"


@dataclass(frozen=True)
class ConfigStats:
    agg_gbps: float
    agg_mpps: float
    avg_latency_ms: float
    avg_power_watts: float
    samples: int
    last_updated_ms: float = 0.0
    app_gbps: tuple[tuple[str, float], ...] = ()
    service_ms: float = 0.0                # mean kernel latency across instances
    state: str = PROFILED

    def __post_init__(self) -> None:
        if self.state not in (PROFILED, UNPROFILED):
            raise ValueError(f"unknown stats state {self.state!r}")
        vals = (self.agg_gbps, self.agg_mpps, self.avg_latency_ms, self.avg_power_watts,
                self.service_ms, *(g for _, g in self.app_gbps))
        if any(not (v >= 0 and math.isfinite(v)) for v in vals) or self.samples < 0:
            raise ValueError("stats must be finite and non-negative")

    @property
    def energy_per_bit_nj(self) -> float:
        # W / (Gbit/s) = nJ/bit
        return self.avg_power_watts / self.agg_gbps if self.agg_gbps > 0 else math.inf

    @property
    def profiled(self) -> bool:
        return self.state == PROFILED

    def gbps_of(self, instance: str) -> float:
        for a, g in self.app_gbps:
            if a == instance:
                return g
        raise KeyError(instance)

    @classmethod
    def unprofiled(cls, reason_ms: float = 0.0) -> "ConfigStats":
        return cls(0.0, 0.0, 0.0, 0.0, 0, reason_ms, (), 0.0, UNPROFILED)


class StoreError(ValueError):
    pass


def _gbps_key(c: Configuration, s: ConfigStats) -> tuple:
    return (-s.agg_gbps, s.avg_power_watts, c.batch_size, c.id)


def _latency_key(c: Configuration, s: ConfigStats) -> tuple:
    return (s.avg_latency_ms, s.avg_power_watts, c.batch_size, c.id)


def _power_key(c: Configuration, s: ConfigStats) -> tuple:
    return (s.avg_power_watts, c.batch_size, c.id)


INDEXES = {"gbps": _gbps_key, "latency": _latency_key, "power": _power_key}


class ConfigStore:
    """Red-black tree keyed by config id plus one ordered index per metric.

    Unprofiled entries live in the primary map only; the metric indexes (and
    therefore the policies) never see them.
    """

    def __init__(self) -> None:
        self._map: RBTree[int, tuple[Configuration, ConfigStats]] = RBTree()
        self._idx: dict[str, RBTree[tuple, int]] = {name: RBTree() for name in INDEXES}

    def __len__(self) -> int:
        return len(self._map)

    def __contains__(self, config_id: int) -> bool:
        return config_id in self._map

    def add(self, config: Configuration, stats: ConfigStats) -> None:
        if config.id in self._map:
            raise StoreError(f"duplicate configuration id {config.id}")
        self._map[config.id] = (config, stats)
        self._index(config, stats)

    def _index(self, c: Configuration, s: ConfigStats) -> None:
        if s.profiled:
            for name, fn in INDEXES.items():
                self._idx[name][fn(c, s)] = c.id

    def _unindex(self, c: Configuration, s: ConfigStats) -> None:
        if s.profiled:
            for name, fn in INDEXES.items():
                self._idx[name].delete(fn(c, s))

    def update(self, config_id: int, stats: ConfigStats) -> None:
        """Replace the stats of an entry, keeping every index in step."""
        c, old = self._map[config_id]
        self._unindex(c, old)
        self._map[config_id] = (c, stats)
        self._index(c, stats)

    def get(self, config_id: int) -> tuple[Configuration, ConfigStats]:
        return self._map[config_id]

    def config(self, config_id: int) -> Configuration:
        return self._map[config_id][0]

    def stats(self, config_id: int) -> ConfigStats:
        return self._map[config_id][1]

    def items(self) -> Iterator[tuple[Configuration, ConfigStats]]:
        return self._map.values()

    def profiled(self) -> Iterator[tuple[Configuration, ConfigStats]]:
        return ((c, s) for c, s in self._map.values() if s.profiled)

    def ordered(self, index: str) -> Iterator[tuple[Configuration, ConfigStats]]:
        """Entries in index order (best first)."""
        for cid in self._idx[index].values():
            yield self._map[cid]

    def head(self, index: str) -> tuple[Configuration, ConfigStats]:
        if not len(self._idx[index]):
            raise StoreError("store has no profiled configurations")
        return self._map[self._idx[index].min_item()[1]]

    def index_size(self, index: str) -> int:
        return len(self._idx[index])

    @property
    def apps(self) -> list[str]:
        return next(iter(self._map.values()))[0].apps if len(self) else []

    @property
    def devices(self) -> list[str]:
        return sorted({d for c, _ in self._map.values() for d in c.devices})

    def check(self) -> None:
        """Assert the indexes agree with the primary map."""
        self._map.check()
        for name, fn in INDEXES.items():
            tree = self._idx[name]
            tree.check()
            want = sorted((fn(c, s), c.id) for c, s in self._map.values() if s.profiled)
            if list(tree.items()) != want:
                raise AssertionError(f"index {name} out of sync")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfigStore) and list(self.items()) == list(other.items())


def build_store(profiled: Iterable[tuple[Configuration, ConfigStats]]) -> ConfigStore:
    store = ConfigStore()
    for c, s in profiled:
        store.add(c, s)
    if not len(store):
        raise StoreError("cannot build an empty store")
    return store


# -------------------------------------------------------------------- profiling

@dataclass
class TrainingResult:
    """What a backend reports after running one configuration for a training window."""
    agg_gbps: float
    agg_mpps: float
    app_gbps: dict[str, float]
    service_ms: float
    latencies_ms: list[float]
    energy_j: float
    window_ms: float
    batches: int                       # per app instance


class Backend(Protocol):
    name: str

    def train(self, config: Configuration, training_batches: int) -> TrainingResult: ...


def profile(config: Configuration, training_batches: int = DEFAULT_TRAINING_BATCHES,
            backend: Backend | None = None) -> ConfigStats:
    """Run ``config`` for ``training_batches`` batches per app and summarize it.

    Raises :class:`ModelGapError` when the backend cannot run the config.
    """
    if training_batches < 1:
        raise ValueError("training_batches must be >= 1")
    if backend is None:
        raise ValueError("a backend is required")
    r = backend.train(config, training_batches)
    if not r.latencies_ms or r.window_ms <= 0:
        raise ModelGapError(f"backend produced no measurements for {config.label()}")
    return ConfigStats(
        agg_gbps=r.agg_gbps,
        agg_mpps=r.agg_mpps,
        avg_latency_ms=sum(r.latencies_ms) / len(r.latencies_ms),
        avg_power_watts=r.energy_j / (r.window_ms / 1000.0),
        samples=r.batches,
        last_updated_ms=0.0,
        app_gbps=tuple((a, r.app_gbps[a]) for a in config.apps),
        service_ms=r.service_ms,
    )


def profile_all(configs: Sequence[Configuration], training_batches: int, backend: Backend,
                on_gap=None) -> ConfigStore:
    """Profile configurations one after another; model gaps become unprofiled entries."""
    rows = []
    for c in configs:
        try:
            stats = profile(c, training_batches, backend)
        except ModelGapError as exc:
            if on_gap is not None:
                on_gap(c, exc)
            stats = ConfigStats.unprofiled()
        rows.append((c, stats))
    return build_store(rows)


# ------------------------------------------------------------------- store file

STORE_HEADER = "# id|mapping|batch|gbps|mpps|latency_ms|watts|samples|app_gbps|service_ms|updated_ms|state"


def _f(x: float) -> str:
    return repr(float(x))


def format_store(store: ConfigStore) -> str:
    lines = [STORE_HEADER]
    for c, s in store.items():
        apps = ";".join(f"{a}={_f(g)}" for a, g in s.app_gbps)
        lines.append("|".join([
            str(c.id), c.mapping_str(), str(c.batch_size), _f(s.agg_gbps), _f(s.agg_mpps),
            _f(s.avg_latency_ms), _f(s.avg_power_watts), str(s.samples), apps,
            _f(s.service_ms), _f(s.last_updated_ms), s.state,
        ]))
    return "\n".join(lines) + "\n"


def parse_store(text: str) -> ConfigStore:
    rows = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) not in (8, 12):
            raise StoreError(f"line {n}: expected 8 or 12 fields, got {len(parts)}")
        try:
            mapping = tuple(tuple(kv.split("=", 1)) for kv in parts[1].split(","))
            if any(len(m) != 2 for m in mapping):
                raise ValueError("mapping entries must be app=device")
            cfg = Configuration(int(parts[0]), mapping, int(parts[2]))  # type: ignore[arg-type]
            extra = parts[8:] if len(parts) == 12 else ["", "0", "0", PROFILED]
            app_gbps = tuple((k, float(v)) for k, v in (kv.split("=", 1) for kv in extra[0].split(";") if kv))
            stats = ConfigStats(float(parts[3]), float(parts[4]), float(parts[5]), float(parts[6]),
                                int(parts[7]), float(extra[2]), app_gbps, float(extra[1]), extra[3])
        except ValueError as exc:
            raise StoreError(f"line {n}: {exc}") from None
        rows.append((cfg, stats))
    store = ConfigStore()
    for c, s in rows:
        store.add(c, s)
    return store


def save_store(store: ConfigStore, path: str | Path) -> None:
    Path(path).write_text(format_store(store))


def load_store(path: str | Path) -> ConfigStore:
    return parse_store(Path(path).read_text())
