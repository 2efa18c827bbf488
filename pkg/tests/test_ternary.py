"""Ternary match engine against a brute-force oracle."""

import random

import pytest

from flowfsm.errors import PatternError, TableFull, UnknownHandle, WidthMismatch
from flowfsm.ternary import TernaryPattern, TernaryTable

from helpers import tcam_oracle

WIDTH = 16


def random_pattern(rng, width=WIDTH):
    mask = rng.getrandbits(width)
    value = rng.getrandbits(width) & mask
    return TernaryPattern(value, mask, width)


def test_pattern_invariant_rejected():
    with pytest.raises(PatternError):
        TernaryPattern(value=1, mask=0, width=8)
    with pytest.raises(PatternError):
        TernaryPattern(value=0, mask=1 << 8, width=8)
    with pytest.raises(PatternError):
        TernaryPattern(0, 0, 0)


def test_insert_and_exact_lookup():
    table = TernaryTable(WIDTH)
    table.insert(TernaryPattern.exact(0xBEEF, WIDTH), payload="hit")
    entry = table.lookup(0xBEEF)
    assert entry is not None and entry.payload == "hit"
    assert table.lookup(0xBEEE) is None


def test_priority_wins_over_order():
    table = TernaryTable(WIDTH)
    table.insert(TernaryPattern.wildcard(WIDTH), priority=5, payload="low")
    table.insert(TernaryPattern.wildcard(WIDTH), priority=10, payload="high")
    assert table.lookup(0).payload == "high"


def test_equal_priority_earliest_wins():
    table = TernaryTable(WIDTH)
    table.insert(TernaryPattern.wildcard(WIDTH), priority=3, payload="first")
    table.insert(TernaryPattern.wildcard(WIDTH), priority=3, payload="second")
    assert table.lookup(0x1234).payload == "first"


def test_capacity_128():
    table = TernaryTable(WIDTH, capacity=128)
    for i in range(128):
        table.insert(TernaryPattern.exact(i, WIDTH))
    with pytest.raises(TableFull):
        table.insert(TernaryPattern.exact(200, WIDTH))


def test_width_mismatch():
    table = TernaryTable(WIDTH)
    with pytest.raises(WidthMismatch):
        table.insert(TernaryPattern.exact(1, 8))
    with pytest.raises(WidthMismatch):
        table.lookup(1 << WIDTH)


def test_remove_semantics():
    table = TernaryTable(WIDTH)
    h = table.insert(TernaryPattern.exact(7, WIDTH), payload="x")
    table.remove(h)
    assert table.lookup(7) is None
    with pytest.raises(UnknownHandle):
        table.remove(h)


def test_remove_reveals_other_entry():
    rng = random.Random(11)
    table = TernaryTable(WIDTH)
    shadow = []
    handles = []
    for i in range(8):
        p = TernaryPattern(0, 0, WIDTH) if i % 2 else random_pattern(rng)
        pr = rng.randrange(3)
        h = table.insert(p, pr, payload=i)
        handles.append(h)
        shadow.append([p.value, p.mask, pr, h, i])
    # remove the current best for a key, check the oracle agrees on the next
    key = rng.getrandbits(WIDTH)
    best = table.lookup(key)
    table.remove(best.handle)
    shadow = [row for row in shadow if row[3] != best.handle]
    expect = tcam_oracle([tuple(r) for r in shadow], key)
    got = table.lookup(key)
    assert (got.payload if got else None) == expect


def test_oracle_equivalence_randomized():
    rng = random.Random(42)
    for _ in range(30):
        table = TernaryTable(WIDTH)
        shadow = []
        for _ in range(rng.randrange(1, 65)):
            p = random_pattern(rng)
            priority = rng.randrange(4)
            seq = table.insert(p, priority, payload=len(shadow))
            shadow.append((p.value, p.mask, priority, seq, len(shadow)))
        for _ in range(300):
            key = rng.getrandbits(WIDTH)
            got = table.lookup(key)
            assert (got.payload if got else None) == tcam_oracle(shadow, key)


def test_deterministic_replay():
    def build():
        rng = random.Random(3)
        table = TernaryTable(WIDTH)
        for _ in range(20):
            table.insert(random_pattern(rng), rng.randrange(3))
        return [e.handle if e else None
                for e in (table.lookup(k) for k in range(0, 1 << WIDTH, 997))]
    assert build() == build()


def test_priority_monotonicity():
    rng = random.Random(9)
    for _ in range(40):
        table = TernaryTable(WIDTH)
        for _ in range(10):
            table.insert(random_pattern(rng), rng.randrange(2, 6))
        key = rng.getrandbits(WIDTH)
        before = table.lookup(key)
        # A higher-priority matching entry must take over ...
        table.insert(TernaryPattern.exact(key, WIDTH), priority=100, payload="top")
        assert table.lookup(key).payload == "top"
        # ... and a lower-priority one must never change the result.
        table.insert(TernaryPattern.exact(key, WIDTH), priority=0, payload="bottom")
        assert table.lookup(key).payload == "top"
        del before
