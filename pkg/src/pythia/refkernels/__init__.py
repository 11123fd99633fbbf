"""Software versions of the three packet-processing applications (DPI, MD5, AES)."""

from __future__ import annotations

import hashlib
import string
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from pythia.refkernels.aes import aes128_cbc
from pythia.refkernels.aho_corasick import DfaMatcher, ac_build, ac_match
from pythia.refkernels.md5 import md5_digest

__all__ = [
    "APPS", "DfaMatcher", "KernelResult", "ac_build", "ac_match", "aes128_cbc", "md5_digest",
    "flow_iv", "flow_key", "generate_patterns", "load_patterns", "default_matcher",
    "run_kernel", "save_patterns",
]

APPS = ("DPI", "MD5", "AES")
PATTERN_ALPHABET = (string.ascii_letters + string.digits).encode()
CORPUS_SEED = 0x5EED
CORPUS_SIZE = 10_000


def generate_patterns(count: int = CORPUS_SIZE, seed: int = CORPUS_SEED,
                      min_len: int = 4, max_len: int = 32) -> list[bytes]:
    """Distinct fixed strings with lengths uniform in [min_len, max_len]."""
    rng = np.random.default_rng(seed)
    alphabet = np.frombuffer(PATTERN_ALPHABET, dtype=np.uint8)
    seen: set[bytes] = set()
    out: list[bytes] = []
    while len(out) < count:
        n = int(rng.integers(min_len, max_len + 1))
        p = alphabet[rng.integers(0, len(alphabet), n)].tobytes()
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


def _escape(p: bytes) -> str:
    return "".join(chr(b) if 0x21 <= b <= 0x7E and b != 0x5C else f"\\x{b:02x}" for b in p)


def _unescape(line: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(line):
        if line[i] == "\\":
            if line[i + 1] != "x":
                raise ValueError(f"bad escape in pattern line {line!r}")
            out.append(int(line[i + 2:i + 4], 16))
            i += 4
        else:
            out.append(ord(line[i]))
            i += 1
    return bytes(out)


def save_patterns(patterns: Sequence[bytes], path: str | Path) -> None:
    Path(path).write_text("".join(_escape(p) + "\n" for p in patterns))


def load_patterns(path: str | Path | None = None) -> list[bytes]:
    if path is None:
        path = Path(str(resources.files("pythia") / "data" / "patterns.txt"))
    return [_unescape(line) for line in Path(path).read_text().splitlines() if line]


@lru_cache(maxsize=2)
def default_matcher() -> DfaMatcher:
    return ac_build(load_patterns())


def flow_key(flow_hash: int, seed: int = 0) -> bytes:
    """Per-connection AES key derived from the flow hash."""
    return hashlib.blake2b(flow_hash.to_bytes(8, "little"), digest_size=16,
                           key=seed.to_bytes(8, "little"), person=b"pythia-key").digest()


def flow_iv(flow_hash: int, seed: int = 0) -> bytes:
    return hashlib.blake2b(flow_hash.to_bytes(8, "little"), digest_size=16,
                           key=seed.to_bytes(8, "little"), person=b"pythia-iv").digest()


@dataclass(frozen=True)
class KernelResult:
    app: str
    output: Any
    wall_latency_ms: float
    packets: int

    @property
    def mpps(self) -> float:
        if self.wall_latency_ms <= 0:
            return 0.0
        return self.packets / self.wall_latency_ms / 1e3


def run_kernel(app: str, payloads: Sequence[bytes], flow_hashes: Sequence[int] | None = None,
               matcher: DfaMatcher | None = None, key_seed: int = 0) -> KernelResult:
    """Run one application over a batch and time it."""
    if app not in APPS:
        raise ValueError(f"unknown app {app!r}")
    t0 = time.perf_counter()
    if app == "DPI":
        output: Any = ac_match(matcher or default_matcher(), payloads)
    elif app == "MD5":
        output = md5_digest(payloads)
    else:
        hashes = flow_hashes if flow_hashes is not None else [0] * len(payloads)
        output = aes128_cbc(payloads, [flow_key(h, key_seed) for h in hashes],
                            [flow_iv(h, key_seed) for h in hashes])
    wall = (time.perf_counter() - t0) * 1e3
    return KernelResult(app, output, wall, len(payloads))
