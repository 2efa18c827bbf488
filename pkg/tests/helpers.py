"""Independent reference implementations used as test oracles.

Everything here is written from the documented contracts, not from the
engine code, so a test comparing the two is a real cross-check.
"""

from __future__ import annotations


def tcam_oracle(entries, key):
    """Linear scan over (value, mask, priority, seq, payload) tuples:
    best match = highest priority, then earliest inserted."""
    best = None
    for value, mask, priority, seq, payload in entries:
        if key & mask == value:
            if best is None or (priority, -seq) > (best[0], -best[1]):
                best = (priority, seq, payload)
    return None if best is None else best[2]


# -- port knocking: hand-coded five-state Mealy machine -----------------------

KNOCKS = (5123, 6234, 7345, 8456)
PK_DEFAULT, PK_S1, PK_S2, PK_S3, PK_OPEN = range(5)
PK_STATES = (PK_DEFAULT, PK_S1, PK_S2, PK_S3, PK_OPEN)
# Symbols: the four knock ports (UDP), the service port (TCP), anything else.
PK_SYMBOLS = (5123, 6234, 7345, 8456, 22, "other")


def port_knock_oracle(state, symbol):
    """(next_state, forwarded) for one packet in one state."""
    if state == PK_OPEN:
        return (PK_OPEN, symbol == 22)
    if symbol == KNOCKS[state]:
        return (state + 1, False)
    return (PK_DEFAULT, False)


# -- MAC learning ---------------------------------------------------------------

class LearningSwitchOracle:
    """Brute-force learning switch: forward on dst, then learn src."""

    def __init__(self, ports):
        self.ports = ports
        self.table = {}

    def packet(self, src, dst, in_port):
        known = self.table.get(dst)
        if known is None:
            out = set(range(1, self.ports + 1)) - {in_port}
        else:
            out = {known}
        self.table[src] = in_port
        return out


# -- state table reference model -------------------------------------------------

class StateTableModel:
    """Dict-based model of the state table resolution order.

    Implements, literally: exact unexpired entry wins; an expired entry
    yields its rollback state (rewritten, timeout cleared) or is deleted
    when rolling back to DEFAULT; otherwise the best matching wildcard
    exception; otherwise DEFAULT (0).
    """

    def __init__(self):
        self.entries = {}       # key bytes -> [state, timeout, to_state, written]
        self.exceptions = []    # (match_fn, priority, seq, state)
        self._seq = 0

    def set_state(self, key, state, timeout_us=0, to_state=0, now_us=0):
        if state == 0 and timeout_us == 0:
            self.entries.pop(key, None)
        else:
            self.entries[key] = [state, timeout_us, to_state, now_us]

    def add_exception(self, match_fn, priority, state):
        self.exceptions.append((match_fn, priority, self._seq, state))
        self._seq += 1

    def lookup(self, key, now_us, pad_to=48):
        entry = self.entries.get(key)
        if entry is not None:
            state, timeout, to_state, written = entry
            if timeout and now_us - written >= timeout:
                if to_state == 0:
                    del self.entries[key]
                    return 0
                entry[0] = to_state
                entry[1] = 0
                entry[2] = 0
                entry[3] = now_us
                return to_state
            return state
        padded = key + b"\x00" * (pad_to - len(key))
        best = None
        for match_fn, priority, seq, state in self.exceptions:
            if match_fn(padded):
                if best is None or (priority, -seq) > (best[0], -best[1]):
                    best = (priority, seq, state)
        return 0 if best is None else best[2]


# -- IPv4 ------------------------------------------------------------------------

def ipv4_header_is_valid(header):
    """Ones-complement sum over the whole header must be 0xFFFF."""
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return total == 0xFFFF
