"""Program files: load, validate, build switches; bundled example programs.

A program file (YAML or JSON) describes a switch: port count, meters, one
section per table (scopes, transition entries, wildcard exceptions), and
optional initial flow states.  See README.md for the full syntax.

The generators return plain dicts in exactly that schema, so a generated
program can be written to disk, diffed, and loaded like a hand-written one.
"""

from __future__ import annotations

import json

import yaml

from .block import (
    Drop,
    FieldMatch,
    Flood,
    IN_PORT_STATE,
    Meter as MeterAction,
    Output,
    OutputToState,
    PopLabel,
    PushLabel,
    SetField,
    SetState,
    StateMatch,
    StatefulBlock,
    XfsmEntry,
    FULL_STATE_MASK,
)
from .errors import SchemaError
from .fields import FieldId, field_match_from_text, field_value_from_text
from .pipeline import Meter, MeterBand, Switch
from .scope import ScopeSpec
from .ternary import TernaryPattern
from .state_table import EXCEPTION_KEY_WIDTH
from .scope import MAX_KEY_BYTES


def load_program(path) -> dict:
    text = open(path, "r", encoding="utf-8").read()
    try:
        if str(path).endswith(".json"):
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise SchemaError(f"{path}: not valid YAML/JSON ({exc})") from None
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: program must be a mapping")
    return data


def save_program(path, program: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(program, fh, sort_keys=False)


# -- dict -> engine objects ------------------------------------------------------

def _scope_from_list(raw, role: str, where: str) -> ScopeSpec:
    if not isinstance(raw, list) or not raw:
        raise SchemaError(f"{where}: scope must be a non-empty list of field names")
    return ScopeSpec(tuple(FieldId.from_name(n) for n in raw), role)


def _state_match_from_raw(raw, where: str) -> StateMatch:
    if raw is None:
        return StateMatch.any_()
    if isinstance(raw, str):
        text = raw.strip().lower()
        if text in ("any", "*"):
            return StateMatch.any_()
        if text == "null":
            return StateMatch.null()
        try:
            return StateMatch.exact(int(text, 0))
        except ValueError:
            raise SchemaError(f"{where}: bad state {raw!r}") from None
    if isinstance(raw, bool):
        raise SchemaError(f"{where}: bad state {raw!r}")
    if isinstance(raw, int):
        return StateMatch.exact(raw)
    if isinstance(raw, dict):
        if set(raw) - {"value", "mask"}:
            raise SchemaError(f"{where}: state keys must be value/mask")
        return StateMatch.ternary(int(raw.get("value", 0)), int(raw.get("mask", 0)))
    raise SchemaError(f"{where}: bad state {raw!r}")


def _action_from_raw(raw, where: str):
    if isinstance(raw, str):
        name = raw.strip().lower()
        if name == "drop":
            return Drop()
        if name == "flood":
            return Flood()
        if name == "output_to_state":
            return OutputToState()
        if name == "pop_label":
            return PopLabel()
        raise SchemaError(f"{where}: unknown action {raw!r}")
    if isinstance(raw, dict) and len(raw) == 1:
        ((name, arg),) = raw.items()
        name = name.strip().lower()
        if name == "output":
            return Output(int(arg))
        if name == "push_label":
            return PushLabel(int(arg))
        if name == "meter":
            return MeterAction(int(arg))
        if name == "set_field":
            if not isinstance(arg, dict) or len(arg) != 1:
                raise SchemaError(f"{where}: set_field takes one field: value pair")
            ((fname, fval),) = arg.items()
            fid = FieldId.from_name(fname)
            return SetField(fid, field_value_from_text(fid, fval))
        raise SchemaError(f"{where}: unknown action {raw!r}")
    raise SchemaError(f"{where}: unknown action {raw!r}")


def _set_state_from_raw(raw, where: str) -> SetState:
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: set_state must be a mapping")
    allowed = {"next", "timeout_us", "to_state", "merge_mask", "update_scope"}
    if set(raw) - allowed:
        raise SchemaError(f"{where}: set_state keys must be {sorted(allowed)}")
    nxt = raw.get("next", 0)
    if isinstance(nxt, str):
        if nxt.strip().lower() != IN_PORT_STATE:
            raise SchemaError(f"{where}: set_state next must be an int or 'in_port'")
        nxt = IN_PORT_STATE
    scope = raw.get("update_scope")
    return SetState(
        next_state=nxt,
        timeout_us=int(raw.get("timeout_us", 0)),
        to_state=int(raw.get("to_state", 0)),
        merge_mask=int(raw.get("merge_mask", FULL_STATE_MASK)),
        update_scope=None if scope is None else _scope_from_list(scope, "update", where),
    )


def entry_from_dict(raw: dict, where: str) -> XfsmEntry:
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: entry must be a mapping")
    allowed = {"state", "match", "actions", "set_state", "goto", "priority"}
    if set(raw) - allowed:
        raise SchemaError(f"{where}: entry keys must be {sorted(allowed)}")
    state = _state_match_from_raw(raw.get("state"), where)
    matches = []
    for fname, fval in (raw.get("match") or {}).items():
        fid = FieldId.from_name(fname)
        value, mask = field_match_from_text(fid, fval)
        matches.append(FieldMatch(fid, value, mask))
    actions = tuple(_action_from_raw(a, where) for a in (raw.get("actions") or []))
    set_state = raw.get("set_state")
    goto = raw.get("goto")
    return XfsmEntry(
        state=state,
        match=tuple(matches),
        actions=actions,
        set_state=None if set_state is None else _set_state_from_raw(set_state, where),
        goto=None if goto is None else int(goto),
        priority=int(raw.get("priority", 0)),
    )


def _exception_from_dict(raw: dict, scope: ScopeSpec, where: str):
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: exception must be a mapping")
    allowed = {"state", "priority", "match", "key_value_hex", "key_mask_hex"}
    if set(raw) - allowed:
        raise SchemaError(f"{where}: exception keys must be {sorted(allowed)}")
    if "state" not in raw:
        raise SchemaError(f"{where}: exception needs a state")
    state = int(raw["state"])
    priority = int(raw.get("priority", 0))
    if "key_value_hex" in raw or "key_mask_hex" in raw:
        try:
            value = bytes.fromhex(raw.get("key_value_hex", ""))
            mask = bytes.fromhex(raw.get("key_mask_hex", ""))
        except ValueError:
            raise SchemaError(f"{where}: bad exception hex") from None
        if len(value) > MAX_KEY_BYTES or len(mask) > MAX_KEY_BYTES:
            raise SchemaError(f"{where}: exception key exceeds {MAX_KEY_BYTES} bytes")
        value += b"\x00" * (MAX_KEY_BYTES - len(value))
        mask += b"\x00" * (MAX_KEY_BYTES - len(mask))
        pattern = TernaryPattern(int.from_bytes(value, "big"),
                                 int.from_bytes(mask, "big"), EXCEPTION_KEY_WIDTH)
        return pattern, priority, state
    # Structured form: per-scope-field values with optional masks, laid out
    # at the field's position inside the key.
    value = 0
    mask = 0
    offset = 0
    matches = raw.get("match") or {}
    if set(matches) - {f.name.lower() for f in scope.fields}:
        raise SchemaError(f"{where}: exception fields must belong to the scope")
    for fid, width in zip(scope.fields, scope.shape):
        name = fid.name.lower()
        if name in matches:
            v, m = field_match_from_text(fid, matches[name])
            if m is None:
                m = (1 << fid.width_bits) - 1
            shift = (MAX_KEY_BYTES - offset - width) * 8
            value |= v << shift
            mask |= m << shift
        offset += width
    pattern = TernaryPattern(value, mask, EXCEPTION_KEY_WIDTH)
    return pattern, priority, state


def build_switch(program: dict) -> Switch:
    """Build and finalize a switch from a program dict."""
    if not isinstance(program, dict):
        raise SchemaError("program must be a mapping")
    sw_sec = program.get("switch") or {}
    ports = sw_sec.get("ports")
    if not isinstance(ports, int) or ports < 1:
        raise SchemaError("switch.ports must be a positive int")
    sw = Switch(ports)

    for i, mraw in enumerate(program.get("meters") or []):
        where = f"meters[{i}]"
        if not isinstance(mraw, dict) or "id" not in mraw:
            raise SchemaError(f"{where}: meter needs an id")
        bands = []
        for braw in mraw.get("bands") or []:
            bands.append(MeterBand(float(braw["rate"]), float(braw["burst"]),
                                   int(braw.get("dscp_remark", 1))))
        if not bands:
            raise SchemaError(f"{where}: meter needs at least one band")
        sw.add_meter(Meter(int(mraw["id"]), bands,
                           unit=mraw.get("unit", "packets")))

    tables = program.get("tables")
    if not isinstance(tables, list) or not tables:
        raise SchemaError("program needs a non-empty tables list")
    for idx, traw in enumerate(tables):
        where = f"tables[{idx}]"
        if not isinstance(traw, dict):
            raise SchemaError(f"{where}: table must be a mapping")
        tid = traw.get("table", idx)
        if tid != idx:
            raise SchemaError(f"{where}: table ids must be 0..n in order, got {tid}")
        stateful = bool(traw.get("stateful", True))
        kwargs = {}
        for opt in ("xfsm_capacity", "state_buckets", "exception_capacity"):
            if opt in traw:
                kwargs[opt] = int(traw[opt])
        block = StatefulBlock(tid, stateful=stateful, **kwargs)
        if stateful:
            if "lookup_scope" not in traw or "update_scope" not in traw:
                raise SchemaError(f"{where}: stateful table needs both scopes")
            block.set_lookup_scope(
                _scope_from_list(traw["lookup_scope"], "lookup", where))
            block.set_update_scope(
                _scope_from_list(traw["update_scope"], "update", where))
        for j, eraw in enumerate(traw.get("entries") or []):
            block.install_entry(entry_from_dict(eraw, f"{where}.entries[{j}]"))
        for j, xraw in enumerate(traw.get("exceptions") or []):
            pattern, priority, state = _exception_from_dict(
                xraw, block.lookup_scope, f"{where}.exceptions[{j}]")
            block.add_exception(pattern, priority, state)
        sw.add_table(block)

    for i, sraw in enumerate(program.get("initial_states") or []):
        where = f"initial_states[{i}]"
        if not isinstance(sraw, dict):
            raise SchemaError(f"{where}: must be a mapping")
        tid = int(sraw.get("table", 0))
        if not (0 <= tid < len(sw.tables)) or not sw.tables[tid].stateful:
            raise SchemaError(f"{where}: no stateful table {tid}")
        block = sw.tables[tid]
        if "key_hex" in sraw:
            try:
                key = block.lookup_scope.key_from_bytes(bytes.fromhex(sraw["key_hex"]))
            except ValueError:
                raise SchemaError(f"{where}: bad key_hex") from None
        elif "key" in sraw:
            kv = sraw["key"]
            names = [f.name.lower() for f in block.lookup_scope.fields]
            if set(kv) != set(names):
                raise SchemaError(f"{where}: key must give exactly {names}")
            values = [field_value_from_text(f, kv[f.name.lower()])
                      for f in block.lookup_scope.fields]
            key = block.lookup_scope.key_from_values(values)
        else:
            raise SchemaError(f"{where}: needs key or key_hex")
        block.states.set_state(key, int(sraw["state"]),
                               int(sraw.get("timeout_us", 0)),
                               int(sraw.get("to_state", 0)), now_us=0)
    sw.finalize()
    return sw


# -- bundled programs -------------------------------------------------------------

KNOCK_SEQUENCE = (5123, 6234, 7345, 8456)
OPEN_PORT = 22


def gen_port_knocking(knock_ports=KNOCK_SEQUENCE, open_port: int = OPEN_PORT,
                      out_port: int = 2, ports: int = 2) -> dict:
    """Firewall that opens ``open_port`` for a source IP after the right
    knock sequence; every other packet is dropped, wrong knocks reset."""
    entries = []
    for stage, knock in enumerate(knock_ports):
        entries.append({
            "state": stage,
            "match": {"udp_dst": int(knock)},
            "actions": ["drop"],
            "set_state": {"next": stage + 1},
        })
    open_state = len(knock_ports)
    entries.append({
        "state": open_state,
        "match": {"tcp_dst": int(open_port)},
        "actions": [{"output": out_port}],
    })
    entries.append({"state": open_state, "actions": ["drop"]})
    # Anything else is a wrong knock: drop and reset to DEFAULT.
    entries.append({"state": "any", "actions": ["drop"], "set_state": {"next": 0}})
    return {
        "switch": {"ports": ports},
        "tables": [{
            "table": 0,
            "stateful": True,
            "lookup_scope": ["ip_src"],
            "update_scope": ["ip_src"],
            "entries": entries,
        }],
    }


def gen_mac_learning(n_ports: int, parametric: bool = False) -> dict:
    """Learning switch: forward on the destination MAC's learned port,
    learn the source MAC's port on every packet.

    The full table holds (n+1)*n entries.  The parametric variant collapses
    the n*n forwarding entries into one whose output port and written state
    both come from the packet (state label and ingress port), leaving n+1.
    """
    if n_ports < 2:
        raise SchemaError("mac learning needs at least 2 ports")
    entries = []
    if parametric:
        for i in range(1, n_ports + 1):
            entries.append({
                "state": 0,
                "match": {"in_port": i},
                "actions": ["flood"],
                "set_state": {"next": i},
            })
        entries.append({
            "state": "any",
            "actions": ["output_to_state"],
            "set_state": {"next": "in_port"},
        })
    else:
        for i in range(1, n_ports + 1):
            entries.append({
                "state": 0,
                "match": {"in_port": i},
                "actions": ["flood"],
                "set_state": {"next": i},
            })
            for j in range(1, n_ports + 1):
                entries.append({
                    "state": j,
                    "match": {"in_port": i},
                    "actions": [{"output": j}],
                    "set_state": {"next": i},
                })
    needed = len(entries)
    return {
        "switch": {"ports": n_ports},
        "tables": [{
            "table": 0,
            "stateful": True,
            "lookup_scope": ["eth_dst"],
            "update_scope": ["eth_src"],
            "xfsm_capacity": max(128, needed),
            "entries": entries,
        }],
    }


# MPLS-label learning: composite 32-bit state label, high half = local edge
# port of a MAC, low half = peer switch the MAC lives behind.  Labels carry
# (destination switch << 10 | origin switch); the broadcast destination is
# all-ones.
_BCAST = 0x3FF


def _mpls_label_of(dst_switch: int, origin: int) -> int:
    return ((dst_switch & _BCAST) << 10) | (origin & _BCAST)


def gen_mpls_learning(edge_ports, switch_ids, self_id: int,
                      transport_port: int, ports: int | None = None) -> dict:
    """Edge switch of a label-switched core, learning MAC locations on both
    sides: outbound packets learn the source MAC's edge port, inbound
    labeled packets learn the source MAC's origin switch."""
    edge_ports = [int(p) for p in edge_ports]
    switch_ids = [int(s) for s in switch_ids]
    if not edge_ports or not switch_ids:
        raise SchemaError("need at least one edge port and one peer switch id")
    for sid in switch_ids + [self_id]:
        if not (1 <= sid <= _BCAST - 1):
            raise SchemaError(f"switch id {sid} out of range 1..{_BCAST - 1}")
    if ports is None:
        ports = max(edge_ports + [transport_port])
    entries = []
    hi = lambda p: (p & 0xFFFF) << 16
    # Outbound (from an edge port): destination's switch half decides.
    for pi in edge_ports:
        entries.append({
            "state": {"value": 0, "mask": 0x0000FFFF},
            "match": {"in_port": pi},
            "actions": [{"push_label": _mpls_label_of(_BCAST, self_id)}, "flood"],
            "set_state": {"next": hi(pi), "merge_mask": 0xFFFF0000},
        })
        for sj in switch_ids:
            entries.append({
                "state": {"value": sj, "mask": 0x0000FFFF},
                "match": {"in_port": pi},
                "actions": [{"push_label": _mpls_label_of(sj, self_id)},
                            {"output": transport_port}],
                "set_state": {"next": hi(pi), "merge_mask": 0xFFFF0000},
            })
    # Inbound (labeled): destination's edge-port half decides; learn the
    # origin switch carried in the label's low bits.
    for sj in switch_ids:
        label_match = {"mpls_label": {"value": sj, "mask": _BCAST}}
        entries.append({
            "state": {"value": 0, "mask": 0xFFFF0000},
            "match": label_match,
            "actions": ["pop_label", "flood"],
            "set_state": {"next": sj, "merge_mask": 0x0000FFFF},
        })
        for pi in edge_ports:
            entries.append({
                "state": {"value": hi(pi), "mask": 0xFFFF0000},
                "match": label_match,
                "actions": ["pop_label", {"output": pi}],
                "set_state": {"next": sj, "merge_mask": 0x0000FFFF},
            })
    return {
        "switch": {"ports": ports},
        "tables": [{
            "table": 0,
            "stateful": True,
            "lookup_scope": ["eth_dst"],
            "update_scope": ["eth_src"],
            "xfsm_capacity": max(128, len(entries)),
            "entries": entries,
        }],
    }


def gen_ddos(dst_ips, *, stage1_rate: float = 100.0, stage1_burst: float = 5.0,
             stage2_rate: float = 50.0, stage2_burst: float = 3.0,
             out_port: int = 2, ports: int = 2) -> dict:
    """Program-file rendering of the two-stage SYN-flood pipeline."""
    if not dst_ips:
        raise SchemaError("ddos program needs at least one watched destination")
    meters = []
    t0_entries = []
    t2_entries = []
    for i, dst in enumerate(dst_ips):
        meters.append({"id": i + 1, "unit": "packets",
                       "bands": [{"rate": stage1_rate, "burst": stage1_burst,
                                  "dscp_remark": 1}]})
        meters.append({"id": 1000 + i + 1, "unit": "packets",
                       "bands": [{"rate": stage2_rate, "burst": stage2_burst,
                                  "dscp_remark": 2}]})
        syn_match = {"ip_dst": dst, "tcp_flags": "0x02/0x02"}
        t0_entries.append({"state": "any", "match": syn_match,
                           "actions": [{"meter": i + 1}], "goto": 1, "priority": 1})
        t2_entries.append({"state": "any", "match": syn_match,
                           "actions": [{"meter": 1000 + i + 1}], "goto": 3,
                           "priority": 1})
    t0_entries.append({"state": "any", "goto": 1, "priority": 0})
    t2_entries.append({"state": "any", "goto": 3, "priority": 0})
    pair = ["ip_src", "ip_dst"]
    fwd = [{"output": out_port}]
    t1_entries = [
        {"state": 0, "match": {"ip_dscp": 0}, "actions": fwd,
         "set_state": {"next": 1}},
        {"state": 0, "match": {"ip_dscp": 1}, "set_state": {"next": 2}, "goto": 2},
        {"state": 1, "actions": fwd},
        {"state": 2, "match": {"ip_dscp": 0}, "actions": fwd,
         "set_state": {"next": 1}},
        {"state": 2, "match": {"ip_dscp": 1}, "set_state": {"next": 2}, "goto": 2},
    ]
    t3_entries = [
        {"state": 0, "actions": fwd, "set_state": {"next": 2}},
        {"state": 2, "match": {"ip_dscp": 1}, "actions": fwd},
        {"state": 2, "match": {"ip_dscp": 2}, "actions": ["drop"],
         "set_state": {"next": 3}},
        {"state": 3, "match": {"ip_dscp": 2}, "actions": ["drop"]},
        {"state": 3, "match": {"ip_dscp": 1}, "actions": fwd,
         "set_state": {"next": 2}},
    ]
    return {
        "switch": {"ports": ports},
        "meters": meters,
        "tables": [
            {"table": 0, "stateful": False, "entries": t0_entries},
            {"table": 1, "stateful": True, "lookup_scope": pair,
             "update_scope": pair, "entries": t1_entries},
            {"table": 2, "stateful": False, "entries": t2_entries},
            {"table": 3, "stateful": True, "lookup_scope": pair,
             "update_scope": pair, "entries": t3_entries},
        ],
    }
