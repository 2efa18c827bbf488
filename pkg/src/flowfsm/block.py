"""The stateful block: one state table + one transition table + two scopes.

Each packet is handled in three steps: (1) the lookup scope builds a flow
key and fetches that flow's state label, (2) the transition (XFSM) table
does a ternary match over the label and the packet fields and picks the
highest-priority entry, (3) the entry's actions run, and its optional
set-state instruction writes the next label under the update-scope key.
The state write happens after the actions and before any goto hands the
packet to a later table, so a downstream table on the same key already
observes the new label.

Transition-table key layout (LSB up): 32 state label bits, 1 NULL flag bit,
then every catalog field at its bit width, then one presence bit per field.
Presence bits keep an entry that constrains a field from matching packets
where that field's layer is absent.  An entry with a wildcard state match
(mask 0) matches the NULL state too; matching NULL exclusively is possible
via the flag bit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field as dc_field

from .errors import (
    ConfigError,
    FieldAbsent,
    IncompatibleScopes,
    LabelPresent,
    NoDefaultEntry,
    NoLabel,
    PatternError,
    TableFull,
    UnknownAction,
    UnknownMeter,
    ValueOverflow,
)
from .fields import CATALOG, FieldId
from .packet import ParsedPacket, pop_label, push_label
from .scope import ScopeSpec
from .state_table import DEFAULT, STATE_MAX, StateTable
from .ternary import TernaryPattern, TernaryTable

DEFAULT_XFSM_CAPACITY = 128
FULL_STATE_MASK = 0xFFFFFFFF

# -- key layout ------------------------------------------------------------

_STATE_BITS = 32
_NULL_BIT = 1 << _STATE_BITS

def _build_layout() -> tuple[dict[FieldId, int], dict[FieldId, int], int]:
    offsets: dict[FieldId, int] = {}
    bit = _STATE_BITS + 1
    for f in CATALOG:
        offsets[f] = bit
        bit += f.width_bits
    presence = {f: 1 << (bit + i) for i, f in enumerate(CATALOG)}
    return offsets, presence, bit + len(CATALOG)


_FIELD_OFFSET, _PRESENCE_BIT, XFSM_KEY_WIDTH = _build_layout()
_KEY_BITS = {f: (_FIELD_OFFSET[f], _PRESENCE_BIT[f]) for f in CATALOG}


def xfsm_key(pkt: ParsedPacket, state: int | None) -> int:
    key = _NULL_BIT if state is None else state
    bits = _KEY_BITS
    for f, v in pkt.fields.items():
        off, pres = bits[f]
        key |= (v << off) | pres
    return key


# -- entry model -------------------------------------------------------------

@dataclass(frozen=True)
class StateMatch:
    """Match over the state label: any, exact, NULL, or masked (ternary)."""

    kind: str
    value: int = 0
    mask: int = 0

    @classmethod
    def any_(cls) -> "StateMatch":
        return cls("any")

    @classmethod
    def exact(cls, value: int) -> "StateMatch":
        if not (0 <= value <= STATE_MAX):
            raise ConfigError(f"state label {value} is not 32-bit")
        return cls("exact", value)

    @classmethod
    def null(cls) -> "StateMatch":
        return cls("null")

    @classmethod
    def ternary(cls, value: int, mask: int) -> "StateMatch":
        if not (0 <= mask <= STATE_MAX) or not (0 <= value <= STATE_MAX):
            raise ConfigError("state value/mask must be 32-bit")
        if value & ~mask:
            raise ConfigError("state value has bits outside the mask")
        return cls("ternary", value, mask)

    def covers_default(self) -> bool:
        if self.kind == "any":
            return True
        if self.kind == "exact":
            return self.value == DEFAULT
        if self.kind == "ternary":
            return self.value == 0
        return False

    def bits(self) -> tuple[int, int]:
        """(value, mask) contribution to the transition-table pattern."""
        if self.kind == "any":
            return 0, 0
        if self.kind == "null":
            return _NULL_BIT, _NULL_BIT
        if self.kind == "exact":
            return self.value, _NULL_BIT | FULL_STATE_MASK
        return self.value, _NULL_BIT | self.mask


@dataclass(frozen=True)
class FieldMatch:
    field: FieldId
    value: int
    mask: int | None = None  # None = exact full-width match

    def __post_init__(self):
        # Canonical form: a mask covering the whole field IS an exact match.
        if self.mask is not None and self.mask == (1 << self.field.width_bits) - 1:
            object.__setattr__(self, "mask", None)


# Actions: a closed set.

@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Output:
    port: int


@dataclass(frozen=True)
class OutputToState:
    """Output to the port named by the current state label."""


@dataclass(frozen=True)
class Flood:
    """Output to every port except the ingress port."""


@dataclass(frozen=True)
class SetField:
    field: FieldId
    value: int


@dataclass(frozen=True)
class PushLabel:
    label: int


@dataclass(frozen=True)
class PopLabel:
    pass


@dataclass(frozen=True)
class Meter:
    meter_id: int


_ACTION_TYPES = (Drop, Output, OutputToState, Flood, SetField, PushLabel,
                 PopLabel, Meter)

IN_PORT_STATE = "in_port"  # parametric next-state source


@dataclass(frozen=True)
class SetState:
    """State write instruction carried by a transition entry.

    ``next_state`` may be the sentinel ``IN_PORT_STATE`` to write the
    ingress port number instead of a literal label.  ``merge_mask`` narrows
    the write to part of the label: unmasked bits are preserved from the
    update key's current state (a read-modify-write), which is how programs
    maintain composite labels half by half.
    """

    next_state: int | str = DEFAULT
    timeout_us: int = 0
    to_state: int = DEFAULT
    merge_mask: int = FULL_STATE_MASK
    update_scope: ScopeSpec | None = None

    def __post_init__(self):
        if isinstance(self.next_state, str):
            if self.next_state != IN_PORT_STATE:
                raise ConfigError(f"bad next_state {self.next_state!r}")
        elif not (0 <= self.next_state <= STATE_MAX):
            raise ConfigError(f"next_state {self.next_state} is not 32-bit")
        if not (0 <= self.to_state <= STATE_MAX):
            raise ConfigError(f"to_state {self.to_state} is not 32-bit")
        if not (0 <= self.merge_mask <= STATE_MAX):
            raise ConfigError("merge_mask must be 32-bit")
        if self.timeout_us < 0:
            raise ConfigError("timeout_us must be non-negative")


@dataclass(frozen=True)
class XfsmEntry:
    state: StateMatch
    match: tuple[FieldMatch, ...] = ()
    actions: tuple = ()
    set_state: SetState | None = None
    goto: int | None = None
    priority: int = 0


def compile_pattern(entry: XfsmEntry, ignore_state: bool = False) -> TernaryPattern:
    value = 0
    mask = 0
    if not ignore_state:
        sv, sm = entry.state.bits()
        value |= sv
        mask |= sm
    for fm in entry.match:
        width = fm.field.width_bits
        fmask = fm.mask if fm.mask is not None else (1 << width) - 1
        if not (0 <= fmask < (1 << width)) or not (0 <= fm.value < (1 << width)):
            raise PatternError(f"{fm.field.name}: match does not fit {width} bits")
        if fm.value & ~fmask:
            raise PatternError(f"{fm.field.name}: value has bits outside the mask")
        off = _FIELD_OFFSET[fm.field]
        value |= fm.value << off
        mask |= fmask << off
        pb = _PRESENCE_BIT[fm.field]
        value |= pb
        mask |= pb
    return TernaryPattern(value, mask, XFSM_KEY_WIDTH)


# -- execution results --------------------------------------------------------


class BlockResult:
    """Outcome of one packet's pass through one block (hot path: slots)."""

    __slots__ = ("pkt", "dropped", "drop_reason", "out_ports", "flood",
                 "goto", "state", "transition", "matched")

    def __init__(self, pkt, dropped=False, drop_reason=None, out_ports=(),
                 flood=False, goto=None, state=None, transition=None,
                 matched=False):
        self.pkt = pkt
        self.dropped = dropped
        self.drop_reason = drop_reason
        self.out_ports = out_ports
        self.flood = flood
        self.goto = goto
        self.state = state
        self.transition = transition  # (key hex, from, to)
        self.matched = matched


class StatefulBlock:
    """One pipeline table: transition table plus (optionally) a state table."""

    def __init__(self, table_id: int = 0, stateful: bool = True,
                 lookup_scope: ScopeSpec | None = None,
                 update_scope: ScopeSpec | None = None,
                 xfsm_capacity: int = DEFAULT_XFSM_CAPACITY,
                 state_subtables: int = 4, state_buckets: int = 1024,
                 exception_capacity: int = 32):
        self.table_id = table_id
        self.stateful = stateful
        self.lookup_scope = lookup_scope
        self.update_scope = update_scope
        self.xfsm = TernaryTable(XFSM_KEY_WIDTH, xfsm_capacity)
        self.states = StateTable(
            state_subtables, state_buckets, exception_capacity
        ) if stateful else None
        self.counters: Counter = Counter()
        self._entries: dict[int, XfsmEntry] = {}
        self._active = False

    # -- configuration -----------------------------------------------------

    def set_lookup_scope(self, scope: ScopeSpec) -> None:
        self.lookup_scope = scope
        self._active = False

    def set_update_scope(self, scope: ScopeSpec) -> None:
        self.update_scope = scope
        self._active = False

    def install_entry(self, entry: XfsmEntry) -> int:
        """Validate and install one transition entry; returns its handle."""
        if not isinstance(entry, XfsmEntry):
            raise UnknownAction(f"not a transition entry: {entry!r}")
        for i, act in enumerate(entry.actions):
            if not isinstance(act, _ACTION_TYPES):
                raise UnknownAction(f"unknown action: {act!r}")
            if isinstance(act, Drop) and i != len(entry.actions) - 1:
                raise ConfigError("drop is terminal: no actions may follow it")
            if isinstance(act, Output) and act.port < 1:
                raise ConfigError(f"output port {act.port} is not a valid port")
            if isinstance(act, SetField) and not (0 <= act.value <= act.field.max_value):
                raise ValueOverflow(
                    f"{act.field.name}: {act.value} exceeds {act.field.width_bits} bits")
            if isinstance(act, PushLabel) and not (0 <= act.label <= FieldId.MPLS_LABEL.max_value):
                raise ValueOverflow(f"label {act.label} exceeds 20 bits")
        if entry.goto is not None and entry.goto <= self.table_id:
            raise ConfigError(
                f"goto {entry.goto} must target a table after {self.table_id}")
        pattern = compile_pattern(entry, ignore_state=not self.stateful)
        handle = self.xfsm.insert(pattern, entry.priority, payload=entry)
        self._entries[handle] = entry
        return handle

    def remove_entry(self, handle: int) -> None:
        self.xfsm.remove(handle)
        del self._entries[handle]
        self._active = False

    def add_exception(self, pattern: TernaryPattern, priority: int, state: int) -> int:
        if not self.stateful:
            raise ConfigError("stateless table has no state exceptions")
        return self.states.add_exception(pattern, priority, state)

    def activate(self) -> None:
        """Check the block is runnable; raises on configuration errors."""
        if not self._entries:
            raise ConfigError(f"table {self.table_id}: no entries installed")
        if self.stateful:
            if self.lookup_scope is None or self.update_scope is None:
                raise ConfigError(
                    f"table {self.table_id}: stateful block needs both scopes")
            if not self.lookup_scope.compatible_with(self.update_scope):
                raise IncompatibleScopes(
                    f"table {self.table_id}: lookup shape {self.lookup_scope.shape} "
                    f"!= update shape {self.update_scope.shape}")
            if not any(e.state.covers_default() for e in self._entries.values()):
                raise NoDefaultEntry(
                    f"table {self.table_id}: no entry matches the DEFAULT state")
        self._active = True

    def entries(self) -> list[XfsmEntry]:
        return list(self._entries.values())

    # -- the per-packet cycle ------------------------------------------------

    def process(self, pkt: ParsedPacket, now_us: int, meter_fn=None) -> BlockResult:
        """Run the lookup / transition / update cycle for one packet.

        Runtime never raises for data-dependent conditions: a transition
        miss drops the packet, a NULL update key skips the state write, and
        both are counted.
        """
        if not self._active:
            self.activate()
        in_port = pkt.in_port
        counters = self.counters

        state: int | None = None
        if self.stateful:
            lkey = self.lookup_scope.extract(pkt)
            state = self.states.lookup(lkey, now_us) if lkey is not None else None
            ent = self.xfsm.lookup(xfsm_key(pkt, state))
        else:
            ent = self.xfsm.lookup(xfsm_key(pkt, DEFAULT))

        if ent is None:
            counters["no_match"] += 1
            return BlockResult(pkt, dropped=True, drop_reason="no_match", state=state)
        counters["matched"] += 1
        entry: XfsmEntry = ent.payload

        # Update key comes from the packet as it arrived, before any rewrite.
        ukey = None
        ss = entry.set_state
        if ss is not None and self.stateful:
            uscope = ss.update_scope or self.update_scope
            ukey = uscope.extract(pkt)

        ports: list[int] = []
        flood = False
        dropped = False
        drop_reason = None
        for act in entry.actions:
            cls = type(act)
            if cls is Output:
                ports.append(act.port)
            elif cls is Flood:
                flood = True
            elif cls is Drop:
                dropped = True
                drop_reason = "drop_action"
                break
            elif cls is OutputToState:
                if state:
                    ports.append(state)
                else:
                    counters["output_to_state_invalid"] += 1
            elif cls is SetField:
                try:
                    pkt.set_field(act.field, act.value)
                except (FieldAbsent, ValueOverflow):
                    counters["action_error"] += 1
                    dropped = True
                    drop_reason = "action_error"
                    break
            elif cls is PushLabel:
                try:
                    pkt = push_label(pkt, act.label)
                except (LabelPresent, ValueOverflow):
                    counters["action_error"] += 1
                    dropped = True
                    drop_reason = "action_error"
                    break
            elif cls is PopLabel:
                try:
                    pkt = pop_label(pkt)
                except NoLabel:
                    counters["action_error"] += 1
                    dropped = True
                    drop_reason = "action_error"
                    break
            else:  # Meter
                if meter_fn is None:
                    raise UnknownMeter(
                        f"meter {act.meter_id} used outside a metered pipeline")
                pkt = meter_fn(act.meter_id, pkt, now_us)

        # State update runs at the end of the block, drop or not.
        transition = None
        if ss is not None and self.stateful:
            if ukey is None:
                counters["null_update_key"] += 1
            else:
                nxt = in_port if ss.next_state == IN_PORT_STATE else ss.next_state
                if ss.merge_mask != FULL_STATE_MASK:
                    current = self.states.lookup(ukey, now_us)
                    nxt = (current & ~ss.merge_mask) | (nxt & ss.merge_mask)
                try:
                    prior = self.states.set_state(
                        ukey, nxt, ss.timeout_us, ss.to_state, now_us)
                except TableFull:
                    counters["state_table_full"] += 1
                else:
                    came_from = prior if prior is not None else DEFAULT
                    transition = (ukey.data.hex(), came_from, nxt)

        return BlockResult(
            pkt, dropped, drop_reason, tuple(ports), flood,
            entry.goto if not dropped else None, state, transition, True)
