"""AES-128 in CBC mode, vectorized across packets.

Each packet may carry its own key and IV (per-connection keys). Packets are
grouped by padded length and every group is pushed through the rounds as an
``(n, 16)`` byte matrix; CBC chaining stays sequential per packet.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

BLOCK = 16


def _xtime(x: np.ndarray) -> np.ndarray:
    return (((x << 1) ^ np.where(x & 0x80, 0x1B, 0)) & 0xFF).astype(np.uint8)


def _gf_mul(a: int, b: int) -> int:
    p = 0
    for _ in range(8):
        if b & 1:
            p ^= a
        hi = a & 0x80
        a = (a << 1) & 0xFF
        if hi:
            a ^= 0x1B
        b >>= 1
    return p


def _make_sbox() -> tuple[np.ndarray, np.ndarray]:
    inv = [0] * 256
    for a in range(1, 256):
        for b in range(1, 256):
            if _gf_mul(a, b) == 1:
                inv[a] = b
                break
    sbox = np.zeros(256, dtype=np.uint8)
    for x in range(256):
        b = inv[x]
        s = b
        for k in range(1, 5):
            s ^= ((b << k) | (b >> (8 - k))) & 0xFF
        sbox[x] = s ^ 0x63
    inv_sbox = np.zeros(256, dtype=np.uint8)
    inv_sbox[sbox] = np.arange(256, dtype=np.uint8)
    return sbox, inv_sbox


SBOX, INV_SBOX = _make_sbox()
_MUL = {k: np.array([_gf_mul(x, k) for x in range(256)], dtype=np.uint8) for k in (9, 11, 13, 14)}

# state is column-major: byte index = 4 * column + row
_SHIFT = np.array([(4 * ((c + r) % 4) + r) for c in range(4) for r in range(4)])
_INV_SHIFT = np.argsort(_SHIFT)
_RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]


def expand_keys(keys: np.ndarray) -> np.ndarray:
    """Round keys for a stack of 16-byte keys: (n, 16) -> (n, 11, 16)."""
    n = keys.shape[0]
    w = np.zeros((n, 44, 4), dtype=np.uint8)
    w[:, :4, :] = keys.reshape(n, 4, 4)
    for i in range(4, 44):
        t = w[:, i - 1, :].copy()
        if i % 4 == 0:
            t = SBOX[np.roll(t, -1, axis=1)]
            t[:, 0] ^= _RCON[i // 4 - 1]
        w[:, i, :] = w[:, i - 4, :] ^ t
    return w.reshape(n, 11, 16)


def _mix_columns(s: np.ndarray) -> np.ndarray:
    c = s.reshape(-1, 4, 4)
    a0, a1, a2, a3 = c[:, :, 0], c[:, :, 1], c[:, :, 2], c[:, :, 3]
    t = a0 ^ a1 ^ a2 ^ a3
    out = np.empty_like(c)
    out[:, :, 0] = a0 ^ t ^ _xtime(a0 ^ a1)
    out[:, :, 1] = a1 ^ t ^ _xtime(a1 ^ a2)
    out[:, :, 2] = a2 ^ t ^ _xtime(a2 ^ a3)
    out[:, :, 3] = a3 ^ t ^ _xtime(a3 ^ a0)
    return out.reshape(-1, 16)


def _inv_mix_columns(s: np.ndarray) -> np.ndarray:
    c = s.reshape(-1, 4, 4)
    a = [c[:, :, i] for i in range(4)]
    m9, m11, m13, m14 = _MUL[9], _MUL[11], _MUL[13], _MUL[14]
    out = np.empty_like(c)
    out[:, :, 0] = m14[a[0]] ^ m11[a[1]] ^ m13[a[2]] ^ m9[a[3]]
    out[:, :, 1] = m9[a[0]] ^ m14[a[1]] ^ m11[a[2]] ^ m13[a[3]]
    out[:, :, 2] = m13[a[0]] ^ m9[a[1]] ^ m14[a[2]] ^ m11[a[3]]
    out[:, :, 3] = m11[a[0]] ^ m13[a[1]] ^ m9[a[2]] ^ m14[a[3]]
    return out.reshape(-1, 16)


def encrypt_blocks(blocks: np.ndarray, round_keys: np.ndarray) -> np.ndarray:
    s = blocks ^ round_keys[:, 0]
    for r in range(1, 10):
        s = _mix_columns(SBOX[s][:, _SHIFT]) ^ round_keys[:, r]
    return SBOX[s][:, _SHIFT] ^ round_keys[:, 10]


def decrypt_blocks(blocks: np.ndarray, round_keys: np.ndarray) -> np.ndarray:
    s = blocks ^ round_keys[:, 10]
    for r in range(9, 0, -1):
        s = INV_SBOX[s[:, _INV_SHIFT]] ^ round_keys[:, r]
        s = _inv_mix_columns(s)
    return INV_SBOX[s[:, _INV_SHIFT]] ^ round_keys[:, 0]


def pkcs7_pad(data: bytes) -> bytes:
    n = BLOCK - len(data) % BLOCK
    return data + bytes([n]) * n


def pkcs7_unpad(data: bytes) -> bytes:
    if not data or len(data) % BLOCK:
        raise ValueError("ciphertext is not a whole number of blocks")
    n = data[-1]
    if not 1 <= n <= BLOCK or data[-n:] != bytes([n]) * n:
        raise ValueError("bad PKCS#7 padding")
    return data[:-n]


def _per_packet(value: bytes | Sequence[bytes], count: int, name: str) -> list[bytes]:
    if isinstance(value, (bytes, bytearray)):
        items = [bytes(value)] * count
    else:
        items = [bytes(v) for v in value]
        if len(items) != count:
            raise ValueError(f"need one {name} per packet")
    for v in items:
        if len(v) != BLOCK:
            raise ValueError(f"{name} must be 16 bytes, got {len(v)}")
    return items


def aes128_cbc(payloads: Sequence[bytes], key: bytes | Sequence[bytes], iv: bytes | Sequence[bytes],
               direction: str = "encrypt") -> list[bytes]:
    """Encrypt (PKCS#7-padding first) or decrypt (then unpad) each payload."""
    if direction not in ("encrypt", "decrypt"):
        raise ValueError(f"direction must be 'encrypt' or 'decrypt', not {direction!r}")
    n = len(payloads)
    keys = _per_packet(key, n, "key")
    ivs = _per_packet(iv, n, "iv")
    if n == 0:
        return []
    if direction == "encrypt":
        data = [pkcs7_pad(bytes(p)) for p in payloads]
    else:
        data = [bytes(p) for p in payloads]
        if any(not d or len(d) % BLOCK for d in data):
            raise ValueError("ciphertext is not a whole number of blocks")

    groups: dict[int, list[int]] = defaultdict(list)
    for i, d in enumerate(data):
        groups[len(d)].append(i)
    out: list[bytes] = [b""] * n
    for length, members in groups.items():
        k = np.frombuffer(b"".join(keys[i] for i in members), dtype=np.uint8).reshape(-1, 16)
        rk = expand_keys(k)
        blocks = np.frombuffer(b"".join(data[i] for i in members), dtype=np.uint8)
        blocks = blocks.reshape(len(members), length // BLOCK, BLOCK)
        chain = np.frombuffer(b"".join(ivs[i] for i in members), dtype=np.uint8).reshape(-1, 16)
        res = np.empty_like(blocks)
        if direction == "encrypt":
            for b in range(blocks.shape[1]):
                chain = encrypt_blocks(blocks[:, b] ^ chain, rk)
                res[:, b] = chain
        else:
            # CBC decryption has no chaining dependency, so all blocks go at once
            m, nb = blocks.shape[:2]
            plain = decrypt_blocks(blocks.reshape(-1, 16), np.repeat(rk, nb, axis=0)).reshape(m, nb, 16)
            prev = np.concatenate([chain[:, None, :], blocks[:, :-1]], axis=1)
            res = plain ^ prev
        for j, i in enumerate(members):
            out[i] = res[j].tobytes()
    if direction == "decrypt":
        out = [pkcs7_unpad(o) for o in out]
    return out
