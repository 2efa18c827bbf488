"""Binary control channel: message codec, dispatcher, capability bits.

Every message starts with an 8-byte header (version, type, total length,
xid); all integers are big-endian.  The exact byte layouts are documented
in docs/wire.md and pinned by golden files under tests/golden/.

State-mod messages configure the per-table key extractors and flow state
entries; flow-mod messages install transition entries; capability messages
advertise which tables are stateful.  cookie/cookie_mask are carried but
reserved.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field as dc_field
from typing import Iterator

from .block import (
    Drop,
    FieldMatch,
    Flood,
    Meter as MeterAction,
    Output,
    OutputToState,
    PopLabel,
    PushLabel,
    SetField,
    SetState,
    StateMatch,
    XfsmEntry,
    FULL_STATE_MASK,
)
from .errors import (
    BadCommand,
    BadLength,
    ExtractorBusy,
    NotStateful,
    Truncated,
    UnknownAction,
    UnknownTable,
)
from .fields import FieldId
from .scope import MAX_KEY_BYTES, ScopeSpec

WIRE_VERSION = 1
HEADER_LEN = 8
SET_STATE_INSTRUCTION_TYPE = 7
SET_STATE_INSTRUCTION_LEN = 16

# Capability bit advertising stateful table support; per-table config bit.
CAP_STATEFUL = 1 << 9
TABLE_CONFIG_STATEFUL = 1


class MsgType(enum.IntEnum):
    STATE_MOD = 1
    FLOW_MOD = 2
    CAPABILITIES_REQUEST = 3
    CAPABILITIES_REPLY = 4


class StateModCommand(enum.IntEnum):
    SET_L_EXTRACTOR = 0
    SET_U_EXTRACTOR = 1
    ADD_FLOW_STATE = 2
    DEL_FLOW_STATE = 3


# -- message model -------------------------------------------------------------

@dataclass(frozen=True)
class SetExtractor:
    table_id: int
    role: str                       # "lookup" | "update"
    fields: tuple[FieldId, ...]
    cookie: int = 0
    cookie_mask: int = 0
    xid: int = 0


@dataclass(frozen=True)
class AddFlowState:
    table_id: int
    key: bytes
    state: int
    timeout_us: int = 0
    to_state: int = 0
    cookie: int = 0
    cookie_mask: int = 0
    xid: int = 0


@dataclass(frozen=True)
class DelFlowState:
    table_id: int
    key: bytes
    cookie: int = 0
    cookie_mask: int = 0
    xid: int = 0


@dataclass(frozen=True)
class FlowMod:
    table_id: int
    entry: XfsmEntry
    xid: int = 0


@dataclass(frozen=True)
class CapabilitiesRequest:
    xid: int = 0


@dataclass(frozen=True)
class CapabilitiesReply:
    capabilities: int
    table_flags: tuple[int, ...]
    xid: int = 0


Message = (SetExtractor | AddFlowState | DelFlowState | FlowMod |
           CapabilitiesRequest | CapabilitiesReply)

_STATE_KIND_CODE = {"any": 0, "exact": 1, "null": 2, "ternary": 3}
_STATE_KIND_NAME = {v: k for k, v in _STATE_KIND_CODE.items()}

_ACTION_CODE = {Drop: 0, Output: 1, OutputToState: 2, Flood: 3,
                SetField: 4, PushLabel: 5, PopLabel: 6, MeterAction: 7}


# -- encoding ------------------------------------------------------------------

def _header(msg_type: int, body_len: int, xid: int) -> bytes:
    return struct.pack("!BBHI", WIRE_VERSION, msg_type, HEADER_LEN + body_len, xid)


def _encode_state_mod(msg, command: int, payload: bytes) -> bytes:
    body = struct.pack("!QQBB", msg.cookie, msg.cookie_mask, msg.table_id,
                       command) + payload
    return _header(MsgType.STATE_MOD, len(body), msg.xid) + body


def encode(msg: Message) -> bytes:
    if isinstance(msg, SetExtractor):
        command = (StateModCommand.SET_L_EXTRACTOR if msg.role == "lookup"
                   else StateModCommand.SET_U_EXTRACTOR)
        payload = struct.pack("!I", len(msg.fields))
        payload += b"".join(struct.pack("!H", int(f)) for f in msg.fields)
        return _encode_state_mod(msg, command, payload)
    if isinstance(msg, AddFlowState):
        if len(msg.key) > MAX_KEY_BYTES:
            raise BadLength(f"key is {len(msg.key)} bytes, limit {MAX_KEY_BYTES}")
        payload = struct.pack("!II", len(msg.key), msg.state) + msg.key
        payload += struct.pack("!II", msg.timeout_us, msg.to_state)
        return _encode_state_mod(msg, StateModCommand.ADD_FLOW_STATE, payload)
    if isinstance(msg, DelFlowState):
        if len(msg.key) > MAX_KEY_BYTES:
            raise BadLength(f"key is {len(msg.key)} bytes, limit {MAX_KEY_BYTES}")
        payload = struct.pack("!I", len(msg.key)) + msg.key
        return _encode_state_mod(msg, StateModCommand.DEL_FLOW_STATE, payload)
    if isinstance(msg, FlowMod):
        body = _encode_flow_mod_body(msg)
        return _header(MsgType.FLOW_MOD, len(body), msg.xid) + body
    if isinstance(msg, CapabilitiesRequest):
        return _header(MsgType.CAPABILITIES_REQUEST, 0, msg.xid)
    if isinstance(msg, CapabilitiesReply):
        body = struct.pack("!IB", msg.capabilities, len(msg.table_flags))
        body += bytes(msg.table_flags)
        return _header(MsgType.CAPABILITIES_REPLY, len(body), msg.xid) + body
    raise BadCommand(f"cannot encode {type(msg).__name__}")


def encode_set_state_instruction(state: int, timeout_us: int, to_state: int) -> bytes:
    return struct.pack("!HHIII", SET_STATE_INSTRUCTION_TYPE,
                       SET_STATE_INSTRUCTION_LEN, state, timeout_us, to_state)


def _encode_flow_mod_body(msg: FlowMod) -> bytes:
    entry = msg.entry
    sm = entry.state
    body = struct.pack("!BBHII", msg.table_id, _STATE_KIND_CODE[sm.kind],
                       entry.priority, sm.value, sm.mask)
    flags = (1 if entry.set_state is not None else 0) | \
            (2 if entry.goto is not None else 0)
    body += struct.pack("!BBBB", len(entry.match), len(entry.actions), flags, 0)
    for fm in entry.match:
        width = fm.field.width_bits
        mask = fm.mask if fm.mask is not None else (1 << width) - 1
        body += struct.pack("!HQQ", int(fm.field), fm.value, mask)
    for act in entry.actions:
        code = _ACTION_CODE.get(type(act))
        if code is None:
            raise UnknownAction(f"cannot encode action {act!r}")
        field_code = 0
        arg = 0
        if isinstance(act, Output):
            arg = act.port
        elif isinstance(act, SetField):
            field_code = int(act.field)
            arg = act.value
        elif isinstance(act, PushLabel):
            arg = act.label
        elif isinstance(act, MeterAction):
            arg = act.meter_id
        body += struct.pack("!BHQ", code, field_code, arg)
    ss = entry.set_state
    if ss is not None:
        if (ss.update_scope is not None or ss.merge_mask != FULL_STATE_MASK
                or isinstance(ss.next_state, str)):
            raise BadCommand(
                "set-state extensions (scope override, merge, in_port) "
                "have no wire encoding; install them via program files")
        body += encode_set_state_instruction(ss.next_state, ss.timeout_us, ss.to_state)
    if entry.goto is not None:
        body += struct.pack("!B", entry.goto)
    return body


# -- decoding ------------------------------------------------------------------

def decode(buf: bytes) -> Message:
    """Decode exactly one message; the buffer must hold it exactly."""
    if len(buf) < HEADER_LEN:
        raise Truncated(f"{len(buf)} bytes is shorter than the header")
    version, msg_type, length, xid = struct.unpack_from("!BBHI", buf, 0)
    if version != WIRE_VERSION:
        raise BadCommand(f"unsupported protocol version {version}")
    if length < HEADER_LEN:
        raise BadLength(f"declared length {length} is shorter than the header")
    if len(buf) < length:
        raise Truncated(f"declared {length} bytes, buffer holds {len(buf)}")
    if len(buf) > length:
        raise BadLength(f"declared {length} bytes, buffer holds {len(buf)}")
    body = buf[HEADER_LEN:length]
    if msg_type == MsgType.STATE_MOD:
        return _decode_state_mod(body, xid)
    if msg_type == MsgType.FLOW_MOD:
        return _decode_flow_mod(body, xid)
    if msg_type == MsgType.CAPABILITIES_REQUEST:
        if body:
            raise BadLength("capabilities request carries no body")
        return CapabilitiesRequest(xid=xid)
    if msg_type == MsgType.CAPABILITIES_REPLY:
        return _decode_caps_reply(body, xid)
    raise BadCommand(f"unknown message type {msg_type}")


def iter_messages(buf: bytes) -> Iterator[Message]:
    """Decode a concatenation of length-prefixed messages."""
    off = 0
    while off < len(buf):
        if len(buf) - off < HEADER_LEN:
            raise Truncated("trailing bytes shorter than a header")
        (length,) = struct.unpack_from("!H", buf, off + 2)
        if length < HEADER_LEN or off + length > len(buf):
            raise Truncated("message overruns the buffer")
        yield decode(buf[off:off + length])
        off += length


def _need(body: bytes, off: int, count: int) -> None:
    if off + count > len(body):
        raise Truncated(f"need {count} bytes at offset {off}, have {len(body) - off}")


def _decode_state_mod(body: bytes, xid: int) -> Message:
    _need(body, 0, 18)
    cookie, cookie_mask, table_id, command = struct.unpack_from("!QQBB", body, 0)
    payload = body[18:]
    try:
        command = StateModCommand(command)
    except ValueError:
        raise BadCommand(f"unknown state-mod command {command}") from None
    if command in (StateModCommand.SET_L_EXTRACTOR, StateModCommand.SET_U_EXTRACTOR):
        _need(payload, 0, 4)
        (count,) = struct.unpack_from("!I", payload, 0)
        if len(payload) != 4 + 2 * count:
            raise BadLength(f"extractor payload length != {4 + 2 * count}")
        fields = []
        for i in range(count):
            (code,) = struct.unpack_from("!H", payload, 4 + 2 * i)
            try:
                fields.append(FieldId(code))
            except ValueError:
                raise BadCommand(f"unknown field code {code}") from None
        role = "lookup" if command == StateModCommand.SET_L_EXTRACTOR else "update"
        return SetExtractor(table_id, role, tuple(fields), cookie, cookie_mask, xid)
    if command == StateModCommand.ADD_FLOW_STATE:
        _need(payload, 0, 8)
        key_len, state = struct.unpack_from("!II", payload, 0)
        if key_len > MAX_KEY_BYTES:
            raise BadLength(f"key_len {key_len} exceeds {MAX_KEY_BYTES}")
        if len(payload) != 8 + key_len + 8:
            raise BadLength("flow-state payload length mismatch")
        key = payload[8:8 + key_len]
        timeout_us, to_state = struct.unpack_from("!II", payload, 8 + key_len)
        return AddFlowState(table_id, key, state, timeout_us, to_state,
                            cookie, cookie_mask, xid)
    # DEL_FLOW_STATE
    _need(payload, 0, 4)
    (key_len,) = struct.unpack_from("!I", payload, 0)
    if key_len > MAX_KEY_BYTES:
        raise BadLength(f"key_len {key_len} exceeds {MAX_KEY_BYTES}")
    if len(payload) != 4 + key_len:
        raise BadLength("flow-state payload length mismatch")
    return DelFlowState(table_id, payload[4:4 + key_len], cookie, cookie_mask, xid)


def decode_set_state_instruction(body: bytes, off: int = 0) -> tuple[int, int, int]:
    """Returns (state, timeout_us, to_state); enforces the fixed length."""
    _need(body, off, SET_STATE_INSTRUCTION_LEN)
    itype, ilen, state, timeout_us, to_state = struct.unpack_from("!HHIII", body, off)
    if itype != SET_STATE_INSTRUCTION_TYPE:
        raise BadCommand(f"instruction type {itype} is not set-state")
    if ilen != SET_STATE_INSTRUCTION_LEN:
        raise BadLength(
            f"set-state instruction length {ilen} != {SET_STATE_INSTRUCTION_LEN}")
    return state, timeout_us, to_state


def _decode_flow_mod(body: bytes, xid: int) -> FlowMod:
    _need(body, 0, 16)
    table_id, skind, priority, s_value, s_mask = struct.unpack_from("!BBHII", body, 0)
    n_match, n_actions, flags, _pad = struct.unpack_from("!BBBB", body, 12)
    if skind not in _STATE_KIND_NAME:
        raise BadCommand(f"unknown state match kind {skind}")
    kind = _STATE_KIND_NAME[skind]
    if kind == "any":
        state = StateMatch.any_()
    elif kind == "exact":
        state = StateMatch.exact(s_value)
    elif kind == "null":
        state = StateMatch.null()
    else:
        state = StateMatch.ternary(s_value, s_mask)
    off = 16
    matches = []
    for _ in range(n_match):
        _need(body, off, 18)
        code, value, mask = struct.unpack_from("!HQQ", body, off)
        off += 18
        try:
            fid = FieldId(code)
        except ValueError:
            raise BadCommand(f"unknown field code {code}") from None
        full = (1 << fid.width_bits) - 1
        matches.append(FieldMatch(fid, value, None if mask == full else mask))
    actions = []
    for _ in range(n_actions):
        _need(body, off, 11)
        code, field_code, arg = struct.unpack_from("!BHQ", body, off)
        off += 11
        if code == 0:
            actions.append(Drop())
        elif code == 1:
            actions.append(Output(arg))
        elif code == 2:
            actions.append(OutputToState())
        elif code == 3:
            actions.append(Flood())
        elif code == 4:
            try:
                actions.append(SetField(FieldId(field_code), arg))
            except ValueError:
                raise BadCommand(f"unknown field code {field_code}") from None
        elif code == 5:
            actions.append(PushLabel(arg))
        elif code == 6:
            actions.append(PopLabel())
        elif code == 7:
            actions.append(MeterAction(arg))
        else:
            raise UnknownAction(f"unknown action code {code}")
    set_state = None
    if flags & 1:
        state_v, timeout_us, to_state = decode_set_state_instruction(body, off)
        off += SET_STATE_INSTRUCTION_LEN
        set_state = SetState(state_v, timeout_us=timeout_us, to_state=to_state)
    goto = None
    if flags & 2:
        _need(body, off, 1)
        goto = body[off]
        off += 1
    if off != len(body):
        raise BadLength(f"flow-mod body has {len(body) - off} stray bytes")
    entry = XfsmEntry(state, tuple(matches), tuple(actions), set_state, goto, priority)
    return FlowMod(table_id, entry, xid)


def _decode_caps_reply(body: bytes, xid: int) -> CapabilitiesReply:
    _need(body, 0, 5)
    caps, n_tables = struct.unpack_from("!IB", body, 0)
    if len(body) != 5 + n_tables:
        raise BadLength("capability reply length mismatch")
    return CapabilitiesReply(caps, tuple(body[5:5 + n_tables]), xid)


# -- applying messages to a switch ----------------------------------------------

def _table(sw, table_id: int):
    if not (0 <= table_id < len(sw.tables)):
        raise UnknownTable(f"no table {table_id}")
    return sw.tables[table_id]


def _stateful_table(sw, table_id: int):
    block = _table(sw, table_id)
    if not block.stateful:
        raise NotStateful(f"table {table_id} is stateless")
    return block


def capabilities(sw) -> CapabilitiesReply:
    """Advertise stateful support: one global bit, one config bit per table."""
    flags = tuple(TABLE_CONFIG_STATEFUL if b.stateful else 0 for b in sw.tables)
    caps = CAP_STATEFUL if any(flags) else 0
    return CapabilitiesReply(caps, flags)


def apply(sw, msg: Message, now_us: int = 0) -> dict:
    """Apply a decoded message to a switch; returns a small result record.

    Setting an extractor is idempotent, but changing it while the state
    table holds entries is rejected: existing keys would become
    uninterpretable under the new scope.
    """
    if isinstance(msg, SetExtractor):
        block = _stateful_table(sw, msg.table_id)
        scope = ScopeSpec(msg.fields, msg.role)
        current = (block.lookup_scope if msg.role == "lookup"
                   else block.update_scope)
        if current is not None and current.fields == scope.fields:
            return {"applied": "set_extractor", "table": msg.table_id,
                    "changed": False}
        if len(block.states):
            raise ExtractorBusy(
                f"table {msg.table_id}: state table holds {len(block.states)} "
                "entries; extractor change rejected")
        if msg.role == "lookup":
            block.set_lookup_scope(scope)
        else:
            block.set_update_scope(scope)
        return {"applied": "set_extractor", "table": msg.table_id, "changed": True}
    if isinstance(msg, AddFlowState):
        block = _stateful_table(sw, msg.table_id)
        if block.lookup_scope is None:
            raise NotStateful(f"table {msg.table_id} has no lookup scope yet")
        key = block.lookup_scope.key_from_bytes(msg.key)
        block.states.set_state(key, msg.state, msg.timeout_us, msg.to_state, now_us)
        return {"applied": "add_flow_state", "table": msg.table_id}
    if isinstance(msg, DelFlowState):
        block = _stateful_table(sw, msg.table_id)
        if block.lookup_scope is None:
            raise NotStateful(f"table {msg.table_id} has no lookup scope yet")
        key = block.lookup_scope.key_from_bytes(msg.key)
        block.states.del_state(key)
        return {"applied": "del_flow_state", "table": msg.table_id}
    if isinstance(msg, FlowMod):
        block = _table(sw, msg.table_id)
        handle = block.install_entry(msg.entry)
        sw._finalized = False
        return {"applied": "flow_mod", "table": msg.table_id, "handle": handle}
    if isinstance(msg, CapabilitiesRequest):
        reply = capabilities(sw)
        return {"applied": "capabilities", "reply": reply}
    raise BadCommand(f"cannot apply {type(msg).__name__}")
