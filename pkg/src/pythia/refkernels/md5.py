"""MD5 (RFC 1321), computed for many messages at once with uint32 lanes."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Sequence

import numpy as np

_S = np.array([7, 12, 17, 22] * 4 + [5, 9, 14, 20] * 4 + [4, 11, 16, 23] * 4 + [6, 10, 15, 21] * 4)
_K = np.array([int(abs(math.sin(i + 1)) * 2**32) & 0xFFFFFFFF for i in range(64)], dtype=np.uint32)
_G = [i if i < 16 else (5 * i + 1) % 16 if i < 32 else (3 * i + 5) % 16 if i < 48 else (7 * i) % 16
      for i in range(64)]
_INIT = (0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476)


def _pad(msg: bytes) -> bytes:
    bitlen = (8 * len(msg)) & 0xFFFFFFFFFFFFFFFF
    tail = b"\x80" + b"\x00" * ((55 - len(msg)) % 64)
    return msg + tail + bitlen.to_bytes(8, "little")


def _rotl(x: np.ndarray, s: int) -> np.ndarray:
    return (x << np.uint32(s)) | (x >> np.uint32(32 - s))


def _digest_same_length(msgs: Sequence[bytes]) -> list[bytes]:
    padded = np.frombuffer(b"".join(_pad(m) for m in msgs), dtype="<u4")
    words = padded.reshape(len(msgs), -1, 16)
    n = len(msgs)
    a0 = np.full(n, _INIT[0], dtype=np.uint32)
    b0 = np.full(n, _INIT[1], dtype=np.uint32)
    c0 = np.full(n, _INIT[2], dtype=np.uint32)
    d0 = np.full(n, _INIT[3], dtype=np.uint32)
    with np.errstate(over="ignore"):
        for blk in range(words.shape[1]):
            m = words[:, blk, :].astype(np.uint32)
            a, b, c, d = a0, b0, c0, d0
            for i in range(64):
                if i < 16:
                    f = (b & c) | (~b & d)
                elif i < 32:
                    f = (d & b) | (~d & c)
                elif i < 48:
                    f = b ^ c ^ d
                else:
                    f = c ^ (b | ~d)
                f = f + a + _K[i] + m[:, _G[i]]
                a, d, c = d, c, b
                b = b + _rotl(f, int(_S[i]))
            a0 = a0 + a
            b0 = b0 + b
            c0 = c0 + c
            d0 = d0 + d
    out = np.stack([a0, b0, c0, d0], axis=1).astype("<u4")
    return [row.tobytes() for row in out]


def md5_digest(payloads: Sequence[bytes]) -> list[bytes]:
    """16-byte digest of each payload, in input order."""
    # messages with the same padded block count share one lane group
    groups: dict[int, list[int]] = defaultdict(list)
    for i, p in enumerate(payloads):
        groups[(len(p) + 8) // 64].append(i)
    out: list[bytes] = [b""] * len(payloads)
    for members in groups.values():
        for i, d in zip(members, _digest_same_length([payloads[i] for i in members])):
            out[i] = d
    return out
