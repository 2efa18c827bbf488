"""Flow-keyed state store.

Exact-match entries live in a d-left hash table: d subtables, one entry per
bucket, each key hashed to one candidate bucket per subtable.  Insertion
takes the first free candidate; when all candidates are taken, a bounded
relocation search (cuckoo-style) tries to shuffle existing entries into
their alternate buckets before giving up with TableFull.  Without the
relocation step a half-loaded table of this geometry fails inserts far too
often to be usable as a flow table.

A small ternary table holds wildcard exceptions (static state assignment to
key ranges).  Resolution order for a lookup:

    exact unexpired entry  >  expiry rollback  >  wildcard exception  >  DEFAULT

Timeouts are soft and evaluated lazily: an entry whose timeout elapsed is
reinterpreted as its rollback state (``to_state``) at the next lookup.  A
rollback to DEFAULT deletes the entry instead of storing label 0.

State labels are 32-bit ints.  DEFAULT is 0.  The out-of-band NULL state is
represented as Python None and can never be stored.
"""

from __future__ import annotations

import hashlib
from collections import deque
from typing import Iterator

from .errors import TableFull, WidthMismatch
from .scope import MAX_KEY_BYTES, FlowKey
from .ternary import TernaryPattern, TernaryTable

DEFAULT = 0
STATE_MAX = (1 << 32) - 1

EXCEPTION_KEY_WIDTH = MAX_KEY_BYTES * 8  # exception patterns cover the padded key

_RELOCATION_BUDGET = 256


class StateEntry:
    __slots__ = ("key", "state", "timeout_us", "to_state", "written_at")

    def __init__(self, key: FlowKey, state: int, timeout_us: int, to_state: int,
                 written_at: int):
        self.key = key
        self.state = state
        self.timeout_us = timeout_us
        self.to_state = to_state
        self.written_at = written_at


def _check_label(state: int, what: str = "state") -> None:
    if state is None:
        raise ValueError(f"{what} NULL cannot be stored in the state table")
    if not (0 <= state <= STATE_MAX):
        raise ValueError(f"{what} {state} is not a 32-bit label")


class StateTable:
    """d-left flow state store with wildcard exceptions and soft timeouts."""

    def __init__(self, subtables: int = 4, buckets: int = 1024,
                 exception_capacity: int = 32):
        if subtables < 1 or buckets < 1:
            raise ValueError("need at least one subtable and one bucket")
        self.subtables = subtables
        self.buckets = buckets
        self.capacity = subtables * buckets
        self._slots: list[list[StateEntry | None]] = [
            [None] * buckets for _ in range(subtables)
        ]
        self._index: dict[FlowKey, tuple[int, int]] = {}
        self._exceptions = TernaryTable(EXCEPTION_KEY_WIDTH, exception_capacity)

    # -- hashing ---------------------------------------------------------

    def _candidates(self, key: FlowKey) -> list[tuple[int, int]]:
        """One candidate bucket per subtable, from independent hash slices."""
        digest = hashlib.blake2b(
            bytes(key.shape) + key.data, digest_size=4 * self.subtables
        ).digest()
        return [
            (i, int.from_bytes(digest[4 * i:4 * i + 4], "big") % self.buckets)
            for i in range(self.subtables)
        ]

    # -- exact-entry plumbing ---------------------------------------------

    def _get_entry(self, key: FlowKey) -> StateEntry | None:
        loc = self._index.get(key)
        if loc is None:
            return None
        return self._slots[loc[0]][loc[1]]

    def _drop_entry(self, key: FlowKey) -> None:
        loc = self._index.pop(key, None)
        if loc is not None:
            self._slots[loc[0]][loc[1]] = None

    def _place_new(self, entry: StateEntry) -> None:
        cands = self._candidates(entry.key)
        for i, b in cands:
            if self._slots[i][b] is None:
                self._slots[i][b] = entry
                self._index[entry.key] = (i, b)
                return
        self._relocate_and_place(entry, cands)

    def _relocate_and_place(self, entry: StateEntry, cands: list[tuple[int, int]]) -> None:
        # BFS over occupied slots: an edge moves a slot's occupant to one of
        # its alternate candidate buckets.  Finding a free slot yields a
        # relocation chain ending in one of the new entry's candidates.
        parent: dict[tuple[int, int], tuple[int, int] | None] = {
            pos: None for pos in cands
        }
        queue = deque(cands)
        free: tuple[int, int] | None = None
        budget = _RELOCATION_BUDGET
        while queue and budget > 0:
            budget -= 1
            pos = queue.popleft()
            occupant = self._slots[pos[0]][pos[1]]
            assert occupant is not None
            for alt in self._candidates(occupant.key):
                if alt in parent:
                    continue
                parent[alt] = pos
                if self._slots[alt[0]][alt[1]] is None:
                    free = alt
                    break
                queue.append(alt)
            if free is not None:
                break
        if free is None:
            raise TableFull("all candidate buckets occupied and relocation failed")
        pos = free
        while True:
            prev = parent[pos]
            if prev is None:
                break
            moved = self._slots[prev[0]][prev[1]]
            self._slots[pos[0]][pos[1]] = moved
            self._index[moved.key] = pos
            pos = prev
        self._slots[pos[0]][pos[1]] = entry
        self._index[entry.key] = pos

    # -- the datapath contract ---------------------------------------------

    def lookup(self, key: FlowKey, now_us: int) -> int:
        """State label for a key.

        Expiry is applied here: an expired entry either rewrites itself to
        its rollback state (timeout cleared) or, when rolling back to
        DEFAULT, is deleted.  Apart from that, lookups do not mutate.
        """
        entry = self._get_entry(key)
        if entry is not None:
            if entry.timeout_us and now_us - entry.written_at >= entry.timeout_us:
                if entry.to_state == DEFAULT:
                    self._drop_entry(key)
                    return DEFAULT
                entry.state = entry.to_state
                entry.timeout_us = 0
                entry.to_state = DEFAULT
                entry.written_at = now_us
            return entry.state
        if len(self._exceptions):
            padded = int.from_bytes(key.padded(), "big")
            exc = self._exceptions.lookup(padded)
            if exc is not None:
                return exc.payload
        return DEFAULT

    def set_state(self, key: FlowKey, state: int, timeout_us: int = 0,
                  to_state: int = DEFAULT, now_us: int = 0) -> int | None:
        """Upsert the entry for a key; returns the prior state (None if new).

        Writing DEFAULT with no timeout deletes the entry, so table
        occupancy tracks only flows in a non-default state.
        """
        if state is None or not 0 <= state <= STATE_MAX:
            _check_label(state)
        if to_state is None or not 0 <= to_state <= STATE_MAX:
            _check_label(to_state, "to_state")
        if timeout_us < 0:
            raise ValueError("timeout must be non-negative")
        entry = self._get_entry(key)
        prior = entry.state if entry is not None else None
        if state == DEFAULT and timeout_us == 0:
            if entry is not None:
                self._drop_entry(key)
            return prior
        if entry is not None:
            entry.state = state
            entry.timeout_us = timeout_us
            entry.to_state = to_state
            entry.written_at = now_us
        else:
            self._place_new(StateEntry(key, state, timeout_us, to_state, now_us))
        return prior

    def del_state(self, key: FlowKey) -> None:
        """Remove the exact entry for a key; no-op when absent."""
        self._drop_entry(key)

    # -- wildcard exceptions ------------------------------------------------

    def add_exception(self, pattern: TernaryPattern, priority: int, state: int) -> int:
        """Install a wildcard entry over the zero-padded key bytes."""
        _check_label(state)
        if pattern.width != EXCEPTION_KEY_WIDTH:
            raise WidthMismatch(
                f"exception pattern width {pattern.width} != {EXCEPTION_KEY_WIDTH}")
        return self._exceptions.insert(pattern, priority, state)

    def remove_exception(self, handle: int) -> None:
        self._exceptions.remove(handle)

    @property
    def exception_count(self) -> int:
        return len(self._exceptions)

    # -- maintenance ---------------------------------------------------------

    def sweep(self, now_us: int) -> int:
        """Apply expiry to every entry eagerly; returns how many changed."""
        changed = 0
        for key in list(self._index):
            entry = self._get_entry(key)
            if entry.timeout_us and now_us - entry.written_at >= entry.timeout_us:
                changed += 1
                if entry.to_state == DEFAULT:
                    self._drop_entry(key)
                else:
                    entry.state = entry.to_state
                    entry.timeout_us = 0
                    entry.to_state = DEFAULT
                    entry.written_at = now_us
        return changed

    def dump(self, now_us: int) -> list[dict]:
        """Entries as JSON-able dicts, ordered by key bytes."""
        out = []
        for key in sorted(self._index, key=lambda k: (k.data, k.shape)):
            e = self._get_entry(key)
            out.append({
                "key_hex": e.key.data.hex(),
                "state": e.state,
                "timeout_us": e.timeout_us,
                "to_state": e.to_state,
                "age_us": now_us - e.written_at,
            })
        return out

    def entries(self) -> Iterator[StateEntry]:
        for key in self._index:
            yield self._get_entry(key)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: FlowKey) -> bool:
        return key in self._index
