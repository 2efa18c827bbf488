"""Software ternary match table.

The contract is the ordering rule, not the data structure: a lookup returns
the matching entry with the highest priority, ties broken by earliest
insertion.  Entries are kept pre-sorted so a lookup is a first-match scan,
which also makes the tie-break free.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Any, Iterator

from .errors import PatternError, TableFull, UnknownHandle, WidthMismatch


@dataclass(frozen=True)
class TernaryPattern:
    """Masked match over a fixed-width bit string.

    Invariant: value bits outside the mask are zero, so two patterns match
    the same key set iff they compare equal.
    """

    value: int
    mask: int
    width: int

    def __post_init__(self):
        if self.width <= 0:
            raise PatternError(f"width must be positive, got {self.width}")
        limit = 1 << self.width
        if not (0 <= self.mask < limit):
            raise PatternError("mask does not fit the declared width")
        if not (0 <= self.value < limit):
            raise PatternError("value does not fit the declared width")
        if self.value & ~self.mask:
            raise PatternError("value has bits set outside the mask")

    @classmethod
    def exact(cls, value: int, width: int) -> "TernaryPattern":
        return cls(value, (1 << width) - 1, width)

    @classmethod
    def wildcard(cls, width: int) -> "TernaryPattern":
        return cls(0, 0, width)

    def matches(self, key: int) -> bool:
        return key & self.mask == self.value


@dataclass
class TernaryEntry:
    pattern: TernaryPattern
    priority: int
    seq: int
    payload: Any

    @property
    def handle(self) -> int:
        return self.seq


class TernaryTable:
    """Priority-ordered ternary table with a configurable capacity."""

    def __init__(self, width: int, capacity: int | None = None):
        if width <= 0:
            raise PatternError(f"width must be positive, got {width}")
        self.width = width
        self.capacity = capacity
        self._limit = 1 << width
        self._next_seq = 0
        self._by_handle: dict[int, TernaryEntry] = {}
        self._order: list[TernaryEntry] = []   # sorted by (-priority, seq)
        self._scan: list[tuple[int, int, TernaryEntry]] | None = []

    @staticmethod
    def _rank(entry: TernaryEntry) -> tuple[int, int]:
        return (-entry.priority, entry.seq)

    def insert(self, pattern: TernaryPattern, priority: int = 0, payload: Any = None) -> int:
        if pattern.width != self.width:
            raise WidthMismatch(f"pattern width {pattern.width} != table width {self.width}")
        if self.capacity is not None and len(self._by_handle) >= self.capacity:
            raise TableFull(f"capacity {self.capacity} reached")
        entry = TernaryEntry(pattern, priority, self._next_seq, payload)
        self._next_seq += 1
        bisect.insort(self._order, entry, key=self._rank)
        self._by_handle[entry.seq] = entry
        self._scan = None
        return entry.seq

    def lookup(self, key: int) -> TernaryEntry | None:
        if not (0 <= key < self._limit):
            raise WidthMismatch(f"key does not fit {self.width} bits")
        scan = self._scan
        if scan is None:
            scan = self._scan = [(e.pattern.mask, e.pattern.value, e) for e in self._order]
        for mask, value, entry in scan:
            if key & mask == value:
                return entry
        return None

    def remove(self, handle: int) -> None:
        entry = self._by_handle.pop(handle, None)
        if entry is None:
            raise UnknownHandle(f"no entry with handle {handle}")
        self._order.remove(entry)
        self._scan = None

    def entries(self) -> Iterator[TernaryEntry]:
        """Entries in match order (highest priority, then earliest)."""
        return iter(self._order)

    def __len__(self) -> int:
        return len(self._by_handle)

    def __contains__(self, handle: int) -> bool:
        return handle in self._by_handle
