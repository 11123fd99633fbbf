"""Scenario files: TOML with a versioned header; unknown keys are errors.

Schema (version 1)::

    version = 1
    name = "fig5d"
    horizon_ms = 30000
    seed = 1                      # optional, default 0
    backend = "sim"               # sim | live
    devices = ["i7-8700K", "UHD", "GTX1080Ti"]
    device_file = "devices.toml"  # optional, default: shipped profiles
    calibration = "tables.csv"    # optional, default: shipped tables
    apps = ["AES", "DPI"]
    batch_grid = [1024, 4096, 16384]
    monitor_interval_ms = 1000
    training_batches = 20
    packet_bytes = 1514
    flows = 4096
    burst = 1
    ingest_cap_gbps = 30.0
    meter_interval_ms = 100
    iface_buffer_packets = 262144

    [policy]
    initial = "max_throughput"
    hysteresis = 0.02
    ewma_alpha = 0.0              # 0 = replacement

    [[interface]]
    app = "AES"                   # instance name (AES, AES#2, ...)
    rate = [[0, 10.0], [15000, 5.0]]   # (start_ms, Gbps) steps

    [[command]]
    at_ms = 15000
    run = "policy min_energy"

Relative paths resolve against the scenario file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from pythia._toml import load_toml, loads_toml
from pythia.profiler import DEFAULT_BATCH_GRID, DEFAULT_TRAINING_BATCHES, instance_names

SCENARIO_VERSION = 1
SHIPPED = ("fig5a", "fig5b", "fig5c", "fig5d", "steady", "stepload")

_TOP_KEYS = {
    "version", "name", "horizon_ms", "seed", "backend", "devices", "device_file", "calibration",
    "apps", "batch_grid", "monitor_interval_ms", "training_batches", "packet_bytes", "flows",
    "burst", "ingest_cap_gbps", "meter_interval_ms", "iface_buffer_packets", "policy",
    "interface", "command", "description",
}
_POLICY_KEYS = {"initial", "hysteresis", "ewma_alpha"}
_IFACE_KEYS = {"app", "rate"}
_CMD_KEYS = {"at_ms", "run"}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Command:
    at_ms: float
    verb: str
    arg: str

    @classmethod
    def parse(cls, at_ms: float, text: str) -> "Command":
        parts = text.split()
        if len(parts) != 2 or parts[0] not in ("policy", "shutdown"):
            raise ScenarioError(f"bad command {text!r}; expected 'policy <name>' or 'shutdown <ms>'")
        if parts[0] == "shutdown":
            try:
                float(parts[1])
            except ValueError:
                raise ScenarioError(f"shutdown needs a time in ms, got {parts[1]!r}") from None
        return cls(float(at_ms), parts[0], parts[1])

    def __str__(self) -> str:
        return f"{self.verb} {self.arg}"


@dataclass
class ScenarioSpec:
    name: str
    horizon_ms: float
    devices: list[str]
    apps: list[str]                          # instance names
    interfaces: list[tuple[str, list[tuple[float, float]]]]   # (instance, steps); index = iface id
    policy: str = "max_throughput"
    batch_grid: tuple[int, ...] = DEFAULT_BATCH_GRID
    monitor_interval_ms: float = 1000.0
    training_batches: int = DEFAULT_TRAINING_BATCHES
    seed: int = 0
    backend: str = "sim"
    packet_bytes: int = 1514
    flows: int = 4096
    burst: int = 1
    ingest_cap_gbps: float = 30.0
    meter_interval_ms: float = 100.0
    iface_buffer_packets: int = 262_144
    hysteresis: float = 0.02
    ewma_alpha: float = 0.0
    commands: list[Command] = field(default_factory=list)
    device_file: Path | None = None
    calibration: Path | None = None
    description: str = ""

    def rate_schedule_dict(self) -> dict[tuple[str, int], list[tuple[float, float]]]:
        return {(app, i): steps for i, (app, steps) in enumerate(self.interfaces)}


def _req(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ScenarioError(f"{where}: missing required key {key!r}")
    return d[key]


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(extra)}")


def _num(v: Any, where: str, positive: bool = False, integer: bool = False) -> Any:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {v!r}")
    if integer and not isinstance(v, int):
        raise ScenarioError(f"{where}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ScenarioError(f"{where}: must be positive")
    if v < 0:
        raise ScenarioError(f"{where}: must not be negative")
    return v


def parse_scenario(data: dict, base: Path | None = None) -> ScenarioSpec:
    _check_keys(data, _TOP_KEYS, "scenario")
    version = _req(data, "version", "scenario")
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario version {version!r} (expected {SCENARIO_VERSION})")
    name = str(_req(data, "name", "scenario"))
    horizon = float(_num(_req(data, "horizon_ms", "scenario"), "horizon_ms", positive=True))
    devices = list(_req(data, "devices", "scenario"))
    if not devices or len(set(devices)) != len(devices):
        raise ScenarioError("devices must be a non-empty list of distinct ids")
    raw_apps = list(_req(data, "apps", "scenario"))
    if not raw_apps:
        raise ScenarioError("apps must be non-empty")
    apps = instance_names(raw_apps)

    pol = data.get("policy", {})
    _check_keys(pol, _POLICY_KEYS, "[policy]")
    ifaces = []
    for n, itf in enumerate(data.get("interface", [])):
        where = f"[[interface]] #{n}"
        _check_keys(itf, _IFACE_KEYS, where)
        app = _req(itf, "app", where)
        if app not in apps:
            raise ScenarioError(f"{where}: app {app!r} is not one of {apps}")
        steps = []
        for s in _req(itf, "rate", where):
            if not isinstance(s, list) or len(s) != 2:
                raise ScenarioError(f"{where}: rate steps must be [start_ms, gbps] pairs")
            steps.append((float(_num(s[0], f"{where} start")), float(_num(s[1], f"{where} rate"))))
        if not steps or any(b[0] <= a[0] for a, b in zip(steps, steps[1:])):
            raise ScenarioError(f"{where}: rate steps must be non-empty and time-ordered")
        if any(t >= horizon for t, _ in steps[1:]):
            raise ScenarioError(f"{where}: rate step beyond the horizon")
        ifaces.append((app, steps))
    missing = [a for a in apps if a not in {i for i, _ in ifaces}]
    if missing:
        raise ScenarioError(f"apps without an interface: {', '.join(missing)}")

    cmds = []
    for n, c in enumerate(data.get("command", [])):
        where = f"[[command]] #{n}"
        _check_keys(c, _CMD_KEYS, where)
        at = float(_num(_req(c, "at_ms", where), f"{where} at_ms"))
        if at > horizon:
            raise ScenarioError(f"{where}: at_ms {at} is beyond the horizon {horizon}")
        cmds.append(Command.parse(at, str(_req(c, "run", where))))
    cmds.sort(key=lambda c: c.at_ms)

    def path(key: str) -> Path | None:
        if key not in data:
            return None
        p = Path(data[key])
        return p if p.is_absolute() or base is None else base / p

    grid = tuple(int(_num(b, "batch_grid", positive=True, integer=True)) for b in data.get("batch_grid", DEFAULT_BATCH_GRID))
    if not grid or len(set(grid)) != len(grid):
        raise ScenarioError("batch_grid must be non-empty and distinct")
    backend = data.get("backend", "sim")
    if backend not in ("sim", "live"):
        raise ScenarioError(f"backend must be 'sim' or 'live', got {backend!r}")
    spec = ScenarioSpec(
        name=name, horizon_ms=horizon, devices=devices, apps=apps, interfaces=ifaces,
        policy=str(pol.get("initial", "max_throughput")),
        batch_grid=grid,
        monitor_interval_ms=float(_num(data.get("monitor_interval_ms", 1000.0), "monitor_interval_ms", positive=True)),
        training_batches=int(_num(data.get("training_batches", DEFAULT_TRAINING_BATCHES), "training_batches", True, True)),
        seed=int(_num(data.get("seed", 0), "seed", integer=True)),
        backend=backend,
        packet_bytes=int(_num(data.get("packet_bytes", 1514), "packet_bytes", True, True)),
        flows=int(_num(data.get("flows", 4096), "flows", True, True)),
        burst=int(_num(data.get("burst", 1), "burst", True, True)),
        ingest_cap_gbps=float(_num(data.get("ingest_cap_gbps", 30.0), "ingest_cap_gbps", positive=True)),
        meter_interval_ms=float(_num(data.get("meter_interval_ms", 100.0), "meter_interval_ms", positive=True)),
        iface_buffer_packets=int(_num(data.get("iface_buffer_packets", 262_144), "iface_buffer_packets", True, True)),
        hysteresis=float(_num(pol.get("hysteresis", 0.02), "hysteresis")),
        ewma_alpha=float(_num(pol.get("ewma_alpha", 0.0), "ewma_alpha")),
        commands=cmds,
        device_file=path("device_file"),
        calibration=path("calibration"),
        description=str(data.get("description", "")),
    )
    if not 64 <= spec.packet_bytes <= 1514:
        raise ScenarioError("packet_bytes must lie in [64, 1514]")
    if spec.ewma_alpha > 1:
        raise ScenarioError("ewma_alpha must lie in [0, 1]")
    return spec


def load_scenario(path_or_name: str | Path) -> ScenarioSpec:
    """Load a scenario file, or a shipped scenario by bare name (e.g. ``fig5d``)."""
    p = Path(path_or_name)
    if not p.is_file() and str(path_or_name) in SHIPPED:
        p = shipped_path(str(path_or_name))
    if not p.is_file():
        raise ScenarioError(f"scenario file not found: {path_or_name}")
    try:
        data = load_toml(p)
    except Exception as exc:  # TOML syntax errors carry their own position
        raise ScenarioError(f"{p}: {exc}") from None
    return parse_scenario(data, p.parent)


def loads_scenario(text: str) -> ScenarioSpec:
    return parse_scenario(loads_toml(text))


def shipped_path(name: str) -> Path:
    return Path(str(resources.files("pythia") / "data" / "scenarios" / f"{name}.toml"))
