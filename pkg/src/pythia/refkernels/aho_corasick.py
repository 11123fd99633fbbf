"""Aho-Corasick multi-pattern matcher compiled to a dense DFA.

Construction is the textbook goto/failure automaton, then every state's
transition row is filled in from its failure state so matching needs a
single table lookup per input byte. Bytes that occur in no pattern share
one equivalence class, which keeps the table at
``states x classes`` instead of ``states x 256``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_PATTERN_LEN = 1024


@dataclass(frozen=True)
class DfaMatcher:
    patterns: tuple[bytes, ...]
    byte_class: np.ndarray      # (256,) int32, byte -> column
    delta: np.ndarray           # (states, classes) int32
    out_count: np.ndarray       # (states,) int32, patterns ending here incl. via failure links
    out_ids: tuple[tuple[int, ...], ...]

    @property
    def num_states(self) -> int:
        return self.delta.shape[0]

    def find_all(self, text: bytes) -> list[tuple[int, int]]:
        """All (pattern_index, start_offset) occurrences, ordered by end offset."""
        hits = []
        state = 0
        cls = self.byte_class
        delta = self.delta
        for pos, b in enumerate(text):
            state = int(delta[state, cls[b]])
            for pid in self.out_ids[state]:
                hits.append((pid, pos - len(self.patterns[pid]) + 1))
        return hits

    def count(self, text: bytes) -> int:
        state = 0
        total = 0
        for b in text:
            state = int(self.delta[state, self.byte_class[b]])
            total += int(self.out_count[state])
        return total


def ac_build(patterns: Sequence[bytes]) -> DfaMatcher:
    if not patterns:
        raise ValueError("pattern set is empty")
    pats = tuple(bytes(p) for p in patterns)
    for i, p in enumerate(pats):
        if not p:
            raise ValueError(f"pattern {i} is empty")
        if len(p) > MAX_PATTERN_LEN:
            raise ValueError(f"pattern {i} longer than {MAX_PATTERN_LEN} bytes")

    used = sorted({b for p in pats for b in p})
    byte_class = np.zeros(256, dtype=np.int32)
    for c, b in enumerate(used, start=1):
        byte_class[b] = c
    n_classes = len(used) + 1

    # goto trie over byte classes
    goto: list[dict[int, int]] = [{}]
    own: list[list[int]] = [[]]
    for pid, p in enumerate(pats):
        s = 0
        for b in p:
            c = int(byte_class[b])
            nxt = goto[s].get(c)
            if nxt is None:
                nxt = len(goto)
                goto[s][c] = nxt
                goto.append({})
                own.append([])
            s = nxt
        own[s].append(pid)

    n = len(goto)
    delta = np.zeros((n, n_classes), dtype=np.int32)
    fail = [0] * n
    outputs: list[tuple[int, ...]] = [()] * n
    outputs[0] = tuple(own[0])
    queue: deque[int] = deque()
    for c, s in goto[0].items():
        delta[0, c] = s
        queue.append(s)
        outputs[s] = tuple(own[s])
    while queue:
        s = queue.popleft()
        f = fail[s]
        delta[s] = delta[f]
        for c, t in goto[s].items():
            delta[s, c] = t
            fail[t] = int(delta[f, c])
            outputs[t] = tuple(own[t]) + outputs[fail[t]]
            queue.append(t)
    out_count = np.fromiter((len(o) for o in outputs), dtype=np.int32, count=n)
    return DfaMatcher(pats, byte_class, delta, out_count, tuple(outputs))


def ac_match(matcher: DfaMatcher, payloads: Sequence[bytes]) -> np.ndarray:
    """Per-packet match counts, stepping all packets through the DFA together."""
    counts = np.zeros(len(payloads), dtype=np.int64)
    if not payloads:
        return counts
    lengths = np.fromiter((len(p) for p in payloads), dtype=np.int64, count=len(payloads))
    width = int(lengths.max()) if len(payloads) else 0
    if width == 0:
        return counts
    buf = np.zeros((len(payloads), width), dtype=np.uint8)
    for i, p in enumerate(payloads):
        buf[i, :len(p)] = np.frombuffer(p, dtype=np.uint8)
    classes = matcher.byte_class[buf]
    state = np.zeros(len(payloads), dtype=np.int32)
    delta = matcher.delta
    out = matcher.out_count
    for pos in range(width):
        live = lengths > pos
        nxt = delta[state, classes[:, pos]]
        state = np.where(live, nxt, state)
        counts += np.where(live, out[state], 0)
    return counts
