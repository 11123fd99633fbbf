"""Synthetic traffic: rate schedules, 5-tuple flows, payloads, flow-affine batches."""

from __future__ import annotations

import bisect
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from pythia.refkernels import PATTERN_ALPHABET, load_patterns

DEFAULT_PACKET_BYTES = 1514
DEFAULT_FLOWS = 4096
MIN_PACKET_BYTES = 64
MAX_PACKET_BYTES = 1514
PROTO_TCP = 6


@dataclass(frozen=True)
class FlowKey:
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    protocol: int = PROTO_TCP

    @property
    def hash(self) -> int:
        raw = struct.pack("<IIHHB", self.src_addr, self.dst_addr, self.src_port, self.dst_port, self.protocol)
        return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def make_flow(iface: int, index: int, seed: int = 0) -> FlowKey:
    """Deterministic 5-tuple for flow ``index`` arriving on ``iface``."""
    h = hashlib.blake2b(struct.pack("<qii", seed, iface, index), digest_size=8).digest()
    src = 0x0A000000 | int.from_bytes(h[:3], "little")        # 10.x.y.z
    dst = 0xC0A80000 | (iface << 8) | (index % 251 + 1)        # 192.168.iface.n
    sport = 1024 + int.from_bytes(h[3:5], "little") % 60000
    dport = 443 if index % 2 else 80
    return FlowKey(src, dst, sport, dport + (index // 502) % 7)


@dataclass(slots=True)
class PacketRecord:
    arrival_ms: float
    size_bytes: int
    flow: FlowKey
    payload_seed: int
    iface: int


class RateSchedule:
    """Piecewise-constant offered rate per (app, interface)."""

    def __init__(self, steps: Mapping[tuple[str, int], Sequence[tuple[float, float]]]):
        self.steps: dict[tuple[str, int], tuple[tuple[float, float], ...]] = {}
        owner: dict[int, str] = {}
        for (app, iface), seq in steps.items():
            seq = tuple((float(t), float(r)) for t, r in seq)
            if not seq:
                raise ValueError(f"empty schedule for {app}/{iface}")
            if any(b[0] <= a[0] for a, b in zip(seq, seq[1:])):
                raise ValueError(f"schedule steps for {app}/{iface} are not time-ordered")
            if any(r < 0 for _, r in seq):
                raise ValueError(f"negative rate in schedule for {app}/{iface}")
            if iface in owner and owner[iface] != app:
                raise ValueError(f"interface {iface} assigned to both {owner[iface]} and {app}")
            owner[iface] = app
            self.steps[(app, iface)] = seq

    def interfaces(self) -> list[tuple[str, int]]:
        return sorted(self.steps, key=lambda k: k[1])

    def app_of(self, iface: int) -> str:
        for app, i in self.steps:
            if i == iface:
                return app
        raise KeyError(iface)

    def rate_at(self, app: str, iface: int, t_ms: float) -> float:
        seq = self.steps[(app, iface)]
        i = bisect.bisect_right([s[0] for s in seq], t_ms) - 1
        return seq[i][1] if i >= 0 else 0.0

    def breakpoints(self) -> list[float]:
        return sorted({t for seq in self.steps.values() for t, _ in seq})


class RateCurve:
    """Cumulative packet count for a piecewise-constant bit rate.

    ``count(t)`` is the real-valued number of packets arrived by ``t``;
    packet ``j`` (0-based) arrives at ``time_of(j + 1)``, so whole-packet
    counts are floors of the cumulative value (remainders carry over).
    """

    def __init__(self, steps: Sequence[tuple[float, float]], packet_bytes: int = DEFAULT_PACKET_BYTES):
        self.bits = packet_bytes * 8
        if steps and steps[0][0] > 0:
            steps = [(0.0, 0.0), *steps]
        self.starts = [float(t) for t, _ in steps]
        # packets per ms in each segment
        self.pps_ms = [r * 1e6 / self.bits for _, r in steps]
        self.cum = [0.0]
        for i in range(1, len(self.starts)):
            self.cum.append(self.cum[-1] + self.pps_ms[i - 1] * (self.starts[i] - self.starts[i - 1]))

    def count(self, t: float) -> float:
        if t <= self.starts[0]:
            return 0.0
        i = bisect.bisect_right(self.starts, t) - 1
        return self.cum[i] + self.pps_ms[i] * (t - self.starts[i])

    def time_of(self, n: float) -> float:
        """Earliest time the cumulative count reaches ``n`` (inf if never)."""
        if n <= 0:
            return self.starts[0]
        i = bisect.bisect_left(self.cum, n) - 1
        i = max(i, 0)
        while i < len(self.starts):
            end = self.cum[i + 1] if i + 1 < len(self.cum) else math.inf
            if self.pps_ms[i] > 0 and n <= end + 1e-9:
                return self.starts[i] + (n - self.cum[i]) / self.pps_ms[i]
            i += 1
        return math.inf

    def rate_gbps(self, t: float) -> float:
        i = bisect.bisect_right(self.starts, t) - 1
        return self.pps_ms[max(i, 0)] * self.bits / 1e6 if i >= 0 else 0.0


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def flow_index(seq: int, flows: int, burst: int = 1) -> int:
    """Round-robin flow for the ``seq``-th packet of an interface; ``burst`` packets per turn."""
    return (seq // burst) % flows


def generate(schedule: RateSchedule, flows: int = DEFAULT_FLOWS, horizon_ms: float = 1000.0, seed: int = 0,
             packet_bytes: int = DEFAULT_PACKET_BYTES, burst: int = 1) -> dict[int, list[PacketRecord]]:
    """Packet stream per interface over ``[0, horizon_ms)``."""
    if horizon_ms <= 0:
        raise ValueError("horizon must be positive")
    if flows < 1:
        raise ValueError("need at least one flow")
    if not MIN_PACKET_BYTES <= packet_bytes <= MAX_PACKET_BYTES:
        raise ValueError(f"packet size must lie in [{MIN_PACKET_BYTES}, {MAX_PACKET_BYTES}]")
    streams: dict[int, list[PacketRecord]] = {}
    for app, iface in schedule.interfaces():
        curve = RateCurve(schedule.steps[(app, iface)], packet_bytes)
        keys = [make_flow(iface, i, seed) for i in range(flows)]
        total = int(math.floor(curve.count(horizon_ms) + 1e-9))
        base = _mix64(seed ^ (iface << 48))
        out = []
        for j in range(total):
            t = curve.time_of(j + 1)
            if t >= horizon_ms:
                break
            out.append(PacketRecord(t, packet_bytes, keys[flow_index(j, flows, burst)], _mix64(base + j), iface))
        streams[iface] = out
    return streams


FILLER_ALPHABET = bytes(range(0x80, 0x100))


def synth_payload(seed: int, size: int, match_fraction_target: float,
                  patterns: Sequence[bytes] | None = None) -> bytes:
    """Deterministic payload; with probability ``target`` it embeds one pattern.

    Filler bytes come from 0x80-0xFF, disjoint from the pattern alphabet.
    """
    if not 0.0 <= match_fraction_target <= 1.0:
        raise ValueError("match fraction target must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    filler = np.frombuffer(FILLER_ALPHABET, dtype=np.uint8)
    buf = bytearray(filler[rng.integers(0, len(filler), size)].tobytes())
    embed = rng.random() < match_fraction_target
    if embed and size > 0:
        pats = patterns if patterns is not None else _corpus()
        p = pats[int(rng.integers(0, len(pats)))][:size]
        at = int(rng.integers(0, size - len(p) + 1))
        buf[at:at + len(p)] = p
    return bytes(buf)


_CORPUS: list[bytes] | None = None


def _corpus() -> list[bytes]:
    global _CORPUS
    if _CORPUS is None:
        _CORPUS = load_patterns()
        assert not set(FILLER_ALPHABET) & set(PATTERN_ALPHABET)
    return _CORPUS


# ------------------------------------------------------------------ flow sets

@dataclass(frozen=True)
class FlowSpan:
    """Flows touched by packets ``[start, start + count)`` of one interface.

    A compact stand-in for the explicit set of flow hashes when flows are
    assigned round-robin; two spans only overlap on the same interface.
    """
    iface: int
    start: int
    count: int
    flows: int
    burst: int = 1

    def indices(self) -> list[tuple[int, int]]:
        """Flow-index ranges as inclusive (lo, hi) pairs, at most two."""
        if self.count <= 0:
            return []
        first = self.start // self.burst
        last = (self.start + self.count - 1) // self.burst
        n = last - first + 1
        if n >= self.flows:
            return [(0, self.flows - 1)]
        lo = first % self.flows
        hi = lo + n - 1
        if hi < self.flows:
            return [(lo, hi)]
        return [(lo, self.flows - 1), (0, hi - self.flows)]

    def index_set(self) -> set[int]:
        return {flow_index(s, self.flows, self.burst) for s in range(self.start, self.start + self.count)}

    def intersects(self, other: "FlowSpan") -> bool:
        if self.iface != other.iface:
            return False
        if (self.flows, self.burst) != (other.flows, other.burst):
            return bool(self.index_set() & other.index_set())
        return any(a <= d and c <= b for a, b in self.indices() for c, d in other.indices())


def flows_overlap(a: FlowSpan | frozenset[int], b: FlowSpan | frozenset[int]) -> bool:
    if isinstance(a, FlowSpan) and isinstance(b, FlowSpan):
        return a.intersects(b)
    sa = a if not isinstance(a, FlowSpan) else None
    sb = b if not isinstance(b, FlowSpan) else None
    if sa is None or sb is None:
        raise TypeError("cannot compare a flow span with explicit flow hashes")
    return not sa.isdisjoint(sb)


@dataclass
class FlowAffinityMap:
    """Live flow pins: which device holds outstanding work for which flows."""
    _pins: dict[int, tuple[object, str]] = field(default_factory=dict)
    _last: dict[int, str] = field(default_factory=dict)
    _next: int = 0

    def pin(self, flows: FlowSpan | frozenset[int], device: str) -> int:
        token = self._next
        self._next += 1
        self._pins[token] = (flows, device)
        if not isinstance(flows, FlowSpan):
            for h in flows:
                self._last[h] = device
        return token

    def release(self, token: int) -> None:
        self._pins.pop(token, None)

    def conflicts(self, flows: FlowSpan | frozenset[int], device: str) -> list[str]:
        """Other devices currently pinned to any of ``flows``."""
        hit = {d for f, d in self._pins.values() if d != device and flows_overlap(f, flows)}
        return sorted(hit)

    def last_device(self, flow_hash: int) -> str | None:
        return self._last.get(flow_hash)

    def __len__(self) -> int:
        return len(self._pins)


@dataclass
class Batch:
    app: str
    packets: list[PacketRecord]
    flow_set: frozenset[int]
    assembled_at_ms: float
    fill_latency_ms: float

    def __len__(self) -> int:
        return len(self.packets)


def assemble_batches(stream: Iterable[PacketRecord], app: str, batch_size: int,
                     affinity: FlowAffinityMap | None = None) -> Iterator[Batch]:
    """Cut an arrival-ordered stream into batches; the last one may be partial.

    The affinity map is not consulted here: dispatch enforces it. Batches
    only carry their flow set for that check.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    cur: list[PacketRecord] = []
    for pkt in stream:
        cur.append(pkt)
        if len(cur) == batch_size:
            yield _close(app, cur)
            cur = []
    if cur:
        yield _close(app, cur)


def _close(app: str, pkts: list[PacketRecord]) -> Batch:
    return Batch(app, pkts, frozenset(p.flow.hash for p in pkts), pkts[-1].arrival_ms,
                 pkts[-1].arrival_ms - pkts[0].arrival_ms)


def write_dump(streams: Mapping[int, Sequence[PacketRecord]], path) -> None:
    """Flat debug dump, one packet per line: ``arrival_ms,iface,size,flow_hash``."""
    rows = sorted((p for s in streams.values() for p in s), key=lambda p: (p.arrival_ms, p.iface))
    with open(path, "w") as fh:
        fh.write("arrival_ms,iface,size,flow_hash\n")
        for p in rows:
            fh.write(f"{p.arrival_ms:.6f},{p.iface},{p.size_bytes},{p.flow.hash}\n")
