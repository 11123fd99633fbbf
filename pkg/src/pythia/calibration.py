"""Device performance model built from the published co-worker tables.

A :class:`PerfTable` holds one :class:`PerfRecord` per measured
(device, app, batch size, co-worker count, co-worker app) context, plus
synthesized solo rows.  Lookups between calibrated batch sizes are
interpolated log-log (geometric in log batch size); lookups outside the
calibrated range clamp the rate metrics and scale latency so the rate is
preserved.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from pythia._toml import load_toml

DEVICE_CLASSES = ("cpu", "integrated-gpu", "discrete-gpu")

CSV_COLUMNS = (
    "device", "app", "batch", "coworkers", "coworker_app",
    "k_ms", "k_mpps", "k_gbps", "slowdown_pct", "agg_ms", "agg_mpps", "agg_gbps",
)

# Gbit per Mpkt implied by the tables (about 1466 bytes per packet).
RATIO_BOUNDS = (11.5, 12.0)
SOLO_SPREAD_TOL = 0.02
HOMOGENEOUS_TOL = 0.05


class CalibrationError(ValueError):
    """Base class for calibration loading failures."""


class CalibrationParseError(CalibrationError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{', '.join(loc)}: {message}" if loc else message)
        self.row = row
        self.column = column


class InvariantViolation(CalibrationError):
    def __init__(self, message: str, key: tuple | None = None):
        super().__init__(f"{key}: {message}" if key is not None else message)
        self.key = key


class UnknownReference(CalibrationError):
    pass


class ModelGapError(LookupError):
    """No calibrated record exists for a (device, app) pair."""


@dataclass(frozen=True)
class DeviceProfile:
    id: str
    cls: str
    tdp_watts: float
    idle_watts: float
    off_watts: float = 0.0
    switch_latency_ms: float = 10.0
    queue_capacity_batches: int = 8
    power_domain: str = ""

    def __post_init__(self) -> None:
        if not self.power_domain:
            object.__setattr__(self, "power_domain", self.id)
        if self.cls not in DEVICE_CLASSES:
            raise InvariantViolation(f"unknown device class {self.cls!r}", (self.id,))
        if not (0 <= self.off_watts <= self.idle_watts < self.tdp_watts):
            raise InvariantViolation("need 0 <= off_watts <= idle_watts < tdp_watts", (self.id,))
        if self.switch_latency_ms <= 0:
            raise InvariantViolation("switch_latency_ms must be positive", (self.id,))
        if self.queue_capacity_batches < 1:
            raise InvariantViolation("queue_capacity_batches must be >= 1", (self.id,))


@dataclass(frozen=True)
class PerfRecord:
    device: str
    app: str
    batch_size: int
    coworkers: int
    coworker_app: str | None
    kernel_latency_ms: float
    kernel_mpps: float
    kernel_gbps: float
    slowdown_frac: float
    agg_latency_ms: float
    agg_mpps: float
    agg_gbps: float
    interpolated: bool = False
    synthesized: bool = False

    @property
    def key(self) -> tuple:
        return (self.device, self.app, self.batch_size, self.coworkers, self.coworker_app)


def implied_solo_mpps(record: PerfRecord) -> float:
    """Throughput the kernel would reach alone, undoing the reported slow-down."""
    if record.coworkers == 0:
        return record.kernel_mpps
    return record.kernel_mpps / (1.0 - record.slowdown_frac)


def check_record(rec: PerfRecord) -> None:
    """Raise :class:`InvariantViolation` if ``rec`` breaks a PerfRecord invariant."""
    key = rec.key
    metrics = (rec.kernel_latency_ms, rec.kernel_mpps, rec.kernel_gbps,
               rec.agg_latency_ms, rec.agg_mpps, rec.agg_gbps)
    if any(not (m > 0 and math.isfinite(m)) for m in metrics):
        raise InvariantViolation("all metrics must be positive and finite", key)
    if rec.coworkers < 0:
        raise InvariantViolation("negative co-worker count", key)
    if not (0.0 <= rec.slowdown_frac < 1.0):
        raise InvariantViolation("slow-down must lie in [0, 1)", key)
    if (rec.slowdown_frac == 0.0) != (rec.coworkers == 0):
        raise InvariantViolation("slow-down is zero iff there are no co-workers", key)
    if (rec.coworkers == 0) != (rec.coworker_app is None):
        raise InvariantViolation("co-worker app must be given iff co-workers > 0", key)
    if rec.agg_mpps < rec.kernel_mpps:
        raise InvariantViolation("aggregate Mpps below per-kernel Mpps", key)
    lo, hi = RATIO_BOUNDS
    for g, m, label in ((rec.kernel_gbps, rec.kernel_mpps, "kernel"),
                        (rec.agg_gbps, rec.agg_mpps, "aggregate")):
        if not (lo <= g / m <= hi):
            raise InvariantViolation(f"{label} Gbps/Mpps ratio {g / m:.3f} outside [{lo}, {hi}]", key)


@dataclass(frozen=True)
class PerfTable:
    records: Mapping[tuple, PerfRecord]
    devices: Mapping[str, DeviceProfile]
    apps: tuple[str, ...]
    _index: Mapping[tuple, tuple[int, ...]] = field(default=MappingProxyType({}), repr=False, compare=False)

    def batch_sizes(self, device: str, app: str, coworkers: int, coworker_app: str | None) -> tuple[int, ...]:
        return self._index.get((device, app, coworkers, coworker_app), ())

    def contexts(self, device: str, app: str) -> list[tuple[int, str | None]]:
        return sorted({(k[2], k[3]) for k in self._index if k[0] == device and k[1] == app},
                      key=lambda c: (c[0], c[1] or ""))

    def __len__(self) -> int:
        return len(self.records)


def make_table(records: Iterable[PerfRecord], devices: Mapping[str, DeviceProfile],
               apps: Sequence[str] | None = None) -> PerfTable:
    recs: dict[tuple, PerfRecord] = {}
    for r in records:
        if r.key in recs:
            raise InvariantViolation("duplicate record", r.key)
        check_record(r)
        recs[r.key] = r
    app_ids = tuple(apps) if apps is not None else tuple(sorted({r.app for r in recs.values()}))
    for r in recs.values():
        if r.device not in devices:
            raise UnknownReference(f"record {r.key} references undeclared device {r.device!r}")
        if r.app not in app_ids:
            raise UnknownReference(f"record {r.key} references undeclared app {r.app!r}")
        if r.coworker_app is not None and r.coworker_app not in app_ids:
            raise UnknownReference(f"record {r.key} references undeclared co-worker app {r.coworker_app!r}")
    index: dict[tuple, list[int]] = defaultdict(list)
    for (dev, app, batch, co, coapp) in recs:
        index[(dev, app, co, coapp)].append(batch)
    frozen_index = {k: tuple(sorted(v)) for k, v in index.items()}
    return PerfTable(MappingProxyType(recs), MappingProxyType(dict(devices)), app_ids,
                     MappingProxyType(frozen_index))


# --------------------------------------------------------------------------- I/O

def _float(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise CalibrationParseError(f"not a number: {raw!r}", row, column) from None
    if not math.isfinite(value):
        raise CalibrationParseError(f"not finite: {raw!r}", row, column)
    return value


def _int(raw: str, row: int, column: str) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise CalibrationParseError(f"not an integer: {raw!r}", row, column) from None


def read_rows(path: str | Path) -> list[PerfRecord]:
    """Parse a calibration CSV without enforcing record invariants."""
    text = Path(path).read_text()
    if not text.strip():
        raise CalibrationParseError("empty calibration file")
    reader = csv.reader(text.splitlines())
    header = [h.strip() for h in next(reader)]
    if tuple(header) != CSV_COLUMNS:
        raise CalibrationParseError(f"bad header, expected {','.join(CSV_COLUMNS)}", 1)
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(CSV_COLUMNS):
            raise CalibrationParseError(f"expected {len(CSV_COLUMNS)} fields, got {len(raw)}", lineno)
        f = dict(zip(CSV_COLUMNS, (c.strip() for c in raw)))
        coworkers = _int(f["coworkers"], lineno, "coworkers")
        coapp = f["coworker_app"] or None
        if coapp in ("-", "none"):
            coapp = None
        rows.append(PerfRecord(
            device=f["device"], app=f["app"], batch_size=_int(f["batch"], lineno, "batch"),
            coworkers=coworkers, coworker_app=coapp,
            kernel_latency_ms=_float(f["k_ms"], lineno, "k_ms"),
            kernel_mpps=_float(f["k_mpps"], lineno, "k_mpps"),
            kernel_gbps=_float(f["k_gbps"], lineno, "k_gbps"),
            slowdown_frac=_float(f["slowdown_pct"], lineno, "slowdown_pct") / 100.0,
            agg_latency_ms=_float(f["agg_ms"], lineno, "agg_ms"),
            agg_mpps=_float(f["agg_mpps"], lineno, "agg_mpps"),
            agg_gbps=_float(f["agg_gbps"], lineno, "agg_gbps"),
        ))
    if not rows:
        raise CalibrationParseError("calibration file has a header but no rows")
    return rows


_ERRATA_FIELDS = {"k_ms": "kernel_latency_ms", "k_mpps": "kernel_mpps", "k_gbps": "kernel_gbps",
                  "agg_ms": "agg_latency_ms", "agg_mpps": "agg_mpps", "agg_gbps": "agg_gbps"}


def apply_errata(rows: list[PerfRecord], path: str | Path) -> list[PerfRecord]:
    """Apply published-value corrections; each entry must match the published value."""
    by_key = {r.key: i for i, r in enumerate(rows)}
    out = list(rows)
    with open(path, newline="") as fh:
        for lineno, e in enumerate(csv.DictReader(fh), start=2):
            key = (e["device"], e["app"], int(e["batch"]), int(e["coworkers"]), e["coworker_app"] or None)
            if key not in by_key:
                continue
            col = e["column"]
            if col == "slowdown_pct":
                attr, scale = "slowdown_frac", 0.01
            elif col in _ERRATA_FIELDS:
                attr, scale = _ERRATA_FIELDS[col], 1.0
            else:
                raise CalibrationParseError(f"unknown errata column {col!r}", lineno, "column")
            i = by_key[key]
            current = getattr(out[i], attr)
            if not math.isclose(current, float(e["published"]) * scale, rel_tol=1e-9):
                raise CalibrationParseError(
                    f"errata expects published {col}={e['published']}, file has {current / scale:g}", lineno)
            out[i] = replace(out[i], **{attr: float(e["corrected"]) * scale})
    return out


def synthesize_solo(rows: Iterable[PerfRecord]) -> list[PerfRecord]:
    """Solo rows for every (device, app, batch) that only has co-worker rows.

    Throughput is the mean implied solo rate over all contexts; latency is
    the mean of ``kernel_latency * (1 - slowdown)``.
    """
    groups: dict[tuple, list[PerfRecord]] = defaultdict(list)
    have_solo = set()
    for r in rows:
        if r.coworkers == 0:
            have_solo.add((r.device, r.app, r.batch_size))
        else:
            groups[(r.device, r.app, r.batch_size)].append(r)
    solo = []
    for (dev, app, batch), rs in sorted(groups.items()):
        if (dev, app, batch) in have_solo:
            continue
        n = len(rs)
        mpps = sum(implied_solo_mpps(r) for r in rs) / n
        gbps = sum(r.kernel_gbps / (1 - r.slowdown_frac) for r in rs) / n
        lat = sum(r.kernel_latency_ms * (1 - r.slowdown_frac) for r in rs) / n
        solo.append(PerfRecord(dev, app, batch, 0, None, lat, mpps, gbps, 0.0, lat, mpps, gbps,
                               synthesized=True))
    return solo


def _data_path(name: str) -> Path:
    return Path(str(resources.files("pythia") / "data" / name))


def default_calibration_path() -> Path:
    return _data_path("tables_1_2_3.csv")


def default_errata_path() -> Path:
    return _data_path("errata.csv")


def default_devices_path() -> Path:
    return _data_path("devices.toml")


def load_device_profiles(path: str | Path | None = None) -> dict[str, DeviceProfile]:
    doc = load_toml(path or default_devices_path())
    if doc.get("version") != 1:
        raise CalibrationParseError("device profile file must declare version = 1")
    unknown = set(doc) - {"version", "device"}
    if unknown:
        raise CalibrationParseError(f"unknown keys in device profile file: {sorted(unknown)}")
    out: dict[str, DeviceProfile] = {}
    allowed = {"id", "class", "tdp_watts", "idle_watts", "off_watts", "switch_latency_ms",
               "queue_capacity_batches", "power_domain"}
    for entry in doc.get("device", []):
        extra = set(entry) - allowed
        if extra:
            raise CalibrationParseError(f"unknown device keys {sorted(extra)}")
        prof = DeviceProfile(
            id=entry["id"], cls=entry["class"], tdp_watts=float(entry["tdp_watts"]),
            idle_watts=float(entry["idle_watts"]), off_watts=float(entry.get("off_watts", 0.0)),
            switch_latency_ms=float(entry.get("switch_latency_ms", 10.0)),
            queue_capacity_batches=int(entry.get("queue_capacity_batches", 8)),
            power_domain=entry.get("power_domain", ""),
        )
        if prof.id in out:
            raise InvariantViolation("duplicate device profile", (prof.id,))
        out[prof.id] = prof
    for prof in out.values():
        if prof.power_domain not in out:
            raise UnknownReference(f"device {prof.id} names unknown power domain {prof.power_domain!r}")
    return out


_DEFAULT_ERRATA = object()


def load_calibration(path: str | Path | None = None,
                     devices: Mapping[str, DeviceProfile] | None = None,
                     errata: str | Path | None | object = _DEFAULT_ERRATA) -> PerfTable:
    """Load, correct, validate and index a calibration CSV.

    Solo rows are synthesized for every calibrated context. ``errata=None``
    loads the published numbers untouched.
    """
    path = path or default_calibration_path()
    rows = read_rows(path)
    if errata is _DEFAULT_ERRATA:
        errata = default_errata_path()
    if errata is not None:
        rows = apply_errata(rows, errata)
    if devices is None:
        devices = load_device_profiles()
    return make_table([*rows, *synthesize_solo(rows)], devices)


# ------------------------------------------------------------------------ lookup

_METRICS = ("kernel_latency_ms", "kernel_mpps", "kernel_gbps", "slowdown_frac",
            "agg_latency_ms", "agg_mpps", "agg_gbps")


def _interp(a: float, b: float, w: float) -> float:
    if a > 0 and b > 0:
        return math.exp(math.log(a) + w * (math.log(b) - math.log(a)))
    return a + w * (b - a)


def _scaled(rec: PerfRecord, batch: int) -> PerfRecord:
    # Outside the calibrated range: keep the rate, stretch latency with batch size.
    f = batch / rec.batch_size
    return replace(rec, batch_size=batch, kernel_latency_ms=rec.kernel_latency_ms * f,
                   agg_latency_ms=rec.agg_latency_ms * f, interpolated=True)


def _lookup_exact_context(table: PerfTable, device: str, app: str, batch: int,
                          coworkers: int, coworker_app: str | None) -> PerfRecord | None:
    sizes = table.batch_sizes(device, app, coworkers, coworker_app)
    if not sizes:
        return None
    key = (device, app, batch, coworkers, coworker_app)
    if key in table.records:
        return table.records[key]
    if batch <= sizes[0]:
        return _scaled(table.records[(device, app, sizes[0], coworkers, coworker_app)], batch)
    if batch >= sizes[-1]:
        return _scaled(table.records[(device, app, sizes[-1], coworkers, coworker_app)], batch)
    hi_i = next(i for i, s in enumerate(sizes) if s > batch)
    lo, hi = sizes[hi_i - 1], sizes[hi_i]
    ra = table.records[(device, app, lo, coworkers, coworker_app)]
    rb = table.records[(device, app, hi, coworkers, coworker_app)]
    w = (math.log(batch) - math.log(lo)) / (math.log(hi) - math.log(lo))
    vals = {m: _interp(getattr(ra, m), getattr(rb, m), w) for m in _METRICS}
    return PerfRecord(device, app, batch, coworkers, coworker_app, **vals, interpolated=True,
                      synthesized=ra.synthesized or rb.synthesized)


def _blend_coworkers(table: PerfTable, device: str, app: str, batch: int,
                     coworkers: int, coworker_app: str) -> PerfRecord | None:
    counts = sorted({c for c, a in table.contexts(device, app) if a == coworker_app and c > 0})
    if not counts:
        return None
    below = [c for c in counts if c <= coworkers]
    above = [c for c in counts if c >= coworkers]
    if not below or not above:
        nearest = below[-1] if below else above[0]
        rec = _lookup_exact_context(table, device, app, batch, nearest, coworker_app)
        return replace(rec, coworkers=coworkers, interpolated=True)
    c0, c1 = below[-1], above[0]
    r0 = _lookup_exact_context(table, device, app, batch, c0, coworker_app)
    r1 = _lookup_exact_context(table, device, app, batch, c1, coworker_app)
    w = (coworkers - c0) / (c1 - c0)
    slow = r0.slowdown_frac + w * (r1.slowdown_frac - r0.slowdown_frac)
    solo_mpps = (implied_solo_mpps(r0) + implied_solo_mpps(r1)) / 2
    solo_gbps = (r0.kernel_gbps / (1 - r0.slowdown_frac) + r1.kernel_gbps / (1 - r1.slowdown_frac)) / 2
    solo_lat = (r0.kernel_latency_ms * (1 - r0.slowdown_frac)
                + r1.kernel_latency_ms * (1 - r1.slowdown_frac)) / 2
    k_mpps = solo_mpps * (1 - slow)
    k_gbps = solo_gbps * (1 - slow)
    k_lat = solo_lat / (1 - slow)
    n = coworkers + 1
    return PerfRecord(device, app, batch, coworkers, coworker_app, k_lat, k_mpps, k_gbps, slow,
                      k_lat * n, k_mpps * n, k_gbps * n, interpolated=True)


def lookup(table: PerfTable, device: str, app: str, batch_size: int,
           coworkers: int = 0, coworker_app: str | None = None) -> PerfRecord:
    """Record for a context, interpolating over batch size when needed."""
    if device not in table.devices:
        raise UnknownReference(f"unknown device {device!r}")
    if app not in table.apps:
        raise UnknownReference(f"unknown app {app!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if coworkers == 0:
        coworker_app = None
    rec = _lookup_exact_context(table, device, app, batch_size, coworkers, coworker_app)
    if rec is None and coworkers > 0 and coworker_app is not None:
        rec = _blend_coworkers(table, device, app, batch_size, coworkers, coworker_app)
    if rec is None:
        raise ModelGapError(
            f"no calibrated record for device={device} app={app} coworkers={coworkers} "
            f"coworker_app={coworker_app}")
    return rec


def context_record(table: PerfTable, device: str, app: str, batch_size: int,
                   coworker_apps: Sequence[str]) -> PerfRecord:
    """Record for ``app`` sharing ``device`` with ``coworker_apps`` (a multiset).

    A mixed co-worker set is averaged over its distinct members, weighted by
    multiplicity, each looked up at the full co-worker count.
    """
    n = len(coworker_apps)
    if n == 0:
        return lookup(table, device, app, batch_size)
    counts: dict[str, int] = defaultdict(int)
    for a in coworker_apps:
        counts[a] += 1
    if len(counts) == 1:
        return lookup(table, device, app, batch_size, n, coworker_apps[0])
    parts = [(lookup(table, device, app, batch_size, n, a), c) for a, c in sorted(counts.items())]
    vals = {m: sum(getattr(r, m) * c for r, c in parts) / n for m in _METRICS}
    return PerfRecord(device, app, batch_size, n, "+".join(sorted(counts)), **vals, interpolated=True)


# ------------------------------------------------------------------------- power

def power_draw(profile: DeviceProfile, utilization: float, powered: bool) -> float:
    """Linear power model between idle and TDP."""
    if not 0.0 <= utilization <= 1.0:
        raise ValueError(f"utilization {utilization} outside [0, 1]")
    if not powered:
        return profile.off_watts
    return profile.idle_watts + utilization * (profile.tdp_watts - profile.idle_watts)


def domain_power(devices: Mapping[str, DeviceProfile], domain: str,
                 member_watts: Mapping[str, float]) -> float:
    """Power of a shared domain: the members' sum, capped at the head device's TDP."""
    head = devices[domain]
    total = sum(w for d, w in member_watts.items() if devices[d].power_domain == domain)
    return min(total, head.tdp_watts)


# -------------------------------------------------------------------- validation

@dataclass
class CheckResult:
    name: str
    passed: bool
    tolerance: str
    checked: int
    offenders: list[tuple[str, float]] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        head = f"[{status}] {self.name} ({self.tolerance}, {self.checked} checked)"
        if self.offenders:
            worst = "; ".join(f"{k} -> {v:.4f}" for k, v in self.offenders[:5])
            head += f"\n    worst: {worst}"
        return head


def _fmt_key(key: tuple) -> str:
    return "/".join("-" if k is None else str(k) for k in key)


def check_ratio(rows: Sequence[PerfRecord]) -> CheckResult:
    lo, hi = RATIO_BOUNDS
    bad = []
    for r in rows:
        for g, m, tag in ((r.kernel_gbps, r.kernel_mpps, "kernel"), (r.agg_gbps, r.agg_mpps, "agg")):
            q = g / m if m > 0 else math.inf
            if not lo <= q <= hi:
                bad.append((f"{_fmt_key(r.key)}:{tag}", q, abs(q - (lo + hi) / 2)))
    bad.sort(key=lambda t: -t[2])
    return CheckResult("gbps/mpps ratio", not bad, f"within [{lo}, {hi}] Gbit/Mpkt", 2 * len(rows),
                       [(k, q) for k, q, _ in bad])


def check_solo_consistency(rows: Sequence[PerfRecord], tol: float = SOLO_SPREAD_TOL) -> CheckResult:
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in rows:
        if r.coworkers > 0:
            groups[(r.device, r.app, r.batch_size)].append(
                implied_solo_mpps(r) if r.slowdown_frac < 1 else math.inf)
    spreads = []
    for k, v in groups.items():
        mean = sum(v) / len(v)
        spread = (max(v) - min(v)) / mean if math.isfinite(mean) and mean > 0 else math.inf
        spreads.append((_fmt_key(k), spread))
    bad = sorted((s for s in spreads if not s[1] <= tol), key=lambda s: -s[1])
    return CheckResult("implied-solo spread", not bad, f"relative spread <= {tol:.0%}", len(spreads), bad)


def check_homogeneous(rows: Sequence[PerfRecord], tol: float = HOMOGENEOUS_TOL) -> CheckResult:
    bad = []
    n = 0
    for r in rows:
        if r.coworkers > 0 and r.coworker_app == r.app:
            n += 1
            ratio = r.agg_mpps / r.kernel_mpps
            err = abs(ratio / (r.coworkers + 1) - 1)
            if err > tol:
                bad.append((_fmt_key(r.key), ratio, err))
    bad.sort(key=lambda t: -t[2])
    return CheckResult("homogeneous aggregation", not bad, f"agg/kernel = coworkers+1 within {tol:.0%}", n,
                       [(k, q) for k, q, _ in bad])


def validate_rows(rows: Sequence[PerfRecord]) -> list[CheckResult]:
    measured = [r for r in rows if not r.synthesized]
    return [check_ratio(measured), check_solo_consistency(measured), check_homogeneous(measured)]
