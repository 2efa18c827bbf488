"""Packet pipeline: tables composed with goto, meters, forwarding verdicts.

A switch walks each packet through its tables starting at table 0,
following goto instructions (which must strictly increase, so the pipeline
cannot loop).  Output and flood actions accumulate across tables; a drop
anywhere discards the packet.  Run-to-completion: one packet traverses the
whole pipeline before the next one enters, so the lookup/update feedback
loop is hazard-free by construction (see ``hazard`` for the pipelined-HW
model of that relaxation).

Meters are token buckets per band, remarking the DSCP field of packets that
exceed a band's rate.  Time is virtual and in microseconds throughout.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .errors import ConfigError, UnknownMeter
from .fields import FieldId, ipv4_to_int
from .packet import ParsedPacket, parse
from .block import (
    Drop,
    FieldMatch,
    Meter as MeterAction,
    Output,
    SetState,
    StateMatch,
    StatefulBlock,
    XfsmEntry,
)
from .errors import FlowFsmError
from .scope import ScopeSpec


class MeterBand:
    __slots__ = ("rate", "burst", "dscp_remark", "tokens", "last_us")

    def __init__(self, rate: float, burst: float, dscp_remark: int):
        if rate <= 0:
            raise ConfigError(f"band rate must be positive, got {rate}")
        if burst < 1:
            raise ConfigError(f"band burst must be at least 1, got {burst}")
        if not (0 <= dscp_remark <= 63):
            raise ConfigError(f"dscp remark {dscp_remark} out of range 0..63")
        self.rate = float(rate)
        self.burst = float(burst)
        self.dscp_remark = dscp_remark
        self.tokens = float(burst)   # bucket starts full
        self.last_us: int | None = None


class Meter:
    """DSCP-remarking meter: one token bucket per band.

    Bands are kept sorted by rate ascending; a packet that exceeds several
    bands is remarked with the highest exceeded band's value.  ``unit``
    selects what a token pays for: one packet, or (unit="bits") one bit of
    frame length.
    """

    def __init__(self, meter_id: int, bands, unit: str = "packets"):
        if unit not in ("packets", "bits"):
            raise ConfigError(f"meter unit must be packets or bits, got {unit!r}")
        if not bands:
            raise ConfigError("meter needs at least one band")
        self.meter_id = meter_id
        self.unit = unit
        self.bands = sorted(bands, key=lambda b: b.rate)

    def apply(self, pkt: ParsedPacket, now_us: int) -> int | None:
        """Update buckets at ``now_us``; remark and return the DSCP value if
        any band is exceeded, else None."""
        cost = 1.0 if self.unit == "packets" else len(pkt.raw) * 8.0
        exceeded: MeterBand | None = None
        for band in self.bands:
            if band.last_us is not None:
                dt = now_us - band.last_us
                if dt > 0:
                    band.tokens = min(band.burst, band.tokens + band.rate * dt / 1e6)
            band.last_us = now_us
            if band.tokens >= cost:
                band.tokens -= cost
            else:
                exceeded = band  # ascending order: last one = highest rate
        if exceeded is None:
            return None
        if pkt.get_field(FieldId.IP_DSCP) is not None:
            pkt.set_field(FieldId.IP_DSCP, exceeded.dscp_remark)
        return exceeded.dscp_remark


class PacketResult:
    """Forwarding verdict for one submitted frame."""

    __slots__ = ("verdict", "out_ports", "pkt_bytes", "dscp", "table_path",
                 "transitions", "reason")

    def __init__(self, verdict, out_ports, pkt_bytes, dscp, table_path,
                 transitions, reason=None):
        self.verdict = verdict          # "forward" | "drop"
        self.out_ports = out_ports
        self.pkt_bytes = pkt_bytes
        self.dscp = dscp
        self.table_path = table_path
        self.transitions = transitions
        self.reason = reason

    def log_record(self, seq: int) -> dict:
        rec = {
            "pkt_seq": seq,
            "verdict": self.verdict,
            "out_ports": list(self.out_ports),
            "dscp": self.dscp,
            "table_path": list(self.table_path),
            "state_transitions": self.transitions,
        }
        if self.reason is not None:
            rec["reason"] = self.reason
        return rec


class Switch:
    """Ordered tables plus meters, processing one packet at a time."""

    def __init__(self, ports: int):
        if ports < 1:
            raise ConfigError("switch needs at least one port")
        self.ports = ports
        self.tables: list[StatefulBlock] = []
        self.meters: dict[int, Meter] = {}
        self.counters: Counter = Counter()
        self._finalized = False
        self._meter_fn = self.apply_meter  # bound once; submit() is hot

    def add_table(self, block: StatefulBlock) -> StatefulBlock:
        if block.table_id != len(self.tables):
            raise ConfigError(
                f"table id {block.table_id} out of order, expected {len(self.tables)}")
        self.tables.append(block)
        self._finalized = False
        return block

    def add_meter(self, meter: Meter) -> Meter:
        if meter.meter_id in self.meters:
            raise ConfigError(f"duplicate meter id {meter.meter_id}")
        self.meters[meter.meter_id] = meter
        return meter

    def finalize(self) -> None:
        """Activate every table and cross-check references."""
        if not self.tables:
            raise ConfigError("switch has no tables")
        for block in self.tables:
            block.activate()
            for entry in block.entries():
                if entry.goto is not None and entry.goto >= len(self.tables):
                    raise ConfigError(
                        f"table {block.table_id}: goto {entry.goto} has no target")
                for act in entry.actions:
                    if isinstance(act, MeterAction) and act.meter_id not in self.meters:
                        raise UnknownMeter(f"meter {act.meter_id} is not configured")
                    if isinstance(act, Output) and act.port > self.ports:
                        raise ConfigError(
                            f"output port {act.port} exceeds {self.ports} ports")
        self._finalized = True

    def apply_meter(self, meter_id: int, pkt: ParsedPacket, now_us: int) -> ParsedPacket:
        meter = self.meters.get(meter_id)
        if meter is None:
            raise UnknownMeter(f"meter {meter_id} is not configured")
        remark = meter.apply(pkt, now_us)
        if remark is not None:
            self.counters[f"meter_{meter_id}_exceeded"] += 1
        return pkt

    def submit(self, raw: bytes, in_port: int, now_us: int = 0) -> PacketResult:
        """Parse a frame and walk it through the pipeline."""
        if not (1 <= in_port <= self.ports):
            raise ValueError(f"in_port {in_port} not in 1..{self.ports}")
        if not self._finalized:
            self.finalize()
        try:
            pkt = parse(raw, in_port)
        except FlowFsmError as exc:
            self.counters["parse_errors"] += 1
            return PacketResult("drop", (), None, None, (), [],
                                reason=f"parse:{type(exc).__name__}")

        path: list[int] = []
        ports: list[int] = []
        flood = False
        transitions: list[dict] = []
        tables = self.tables
        meter_fn = self._meter_fn
        tid = 0
        while True:
            path.append(tid)
            res = tables[tid].process(pkt, now_us, meter_fn)
            pkt = res.pkt
            if res.transition is not None:
                key_hex, came_from, went_to = res.transition
                transitions.append({
                    "table": tid, "key_hex": key_hex,
                    "from": came_from, "to": went_to,
                })
            if res.dropped:
                self.counters["dropped"] += 1
                return PacketResult("drop", (), None,
                                    pkt.fields.get(FieldId.IP_DSCP),
                                    tuple(path), transitions, reason=res.drop_reason)
            if res.out_ports:
                ports.extend(res.out_ports)
            flood = flood or res.flood
            if res.goto is None:
                break
            tid = res.goto

        out = set(ports)
        if flood:
            out.update(range(1, self.ports + 1))
            out.discard(in_port)
        valid = {p for p in out if 1 <= p <= self.ports}
        if len(valid) != len(out):
            self.counters["invalid_output_port"] += len(out) - len(valid)
        if not valid:
            self.counters["dropped"] += 1
            return PacketResult("drop", (), None, pkt.fields.get(FieldId.IP_DSCP),
                                tuple(path), transitions, reason="no_output")
        self.counters["forwarded"] += 1
        return PacketResult("forward", tuple(sorted(valid)), pkt.to_bytes(),
                            pkt.fields.get(FieldId.IP_DSCP), tuple(path),
                            transitions)

    def dump_state(self, now_us: int = 0) -> list[dict]:
        """Flow state entries across all stateful tables, JSON-able."""
        out = []
        for block in self.tables:
            if not block.stateful:
                continue
            scope = block.lookup_scope.names() if block.lookup_scope else ""
            for rec in block.states.dump(now_us):
                rec = {"table": block.table_id, "scope": scope, **rec}
                out.append(rec)
        return out


# -- the two-stage SYN-flood mitigation pipeline -------------------------------

GREEN = 1
YELLOW = 2
RED = 3

_SYN = FieldMatch(FieldId.TCP_FLAGS, 0x02, 0x02)
_STAGE2_METER_BASE = 1000


def build_ddos_pipeline(sw: Switch, dst_ips, *, stage1_rate: float,
                        stage1_burst: float, stage2_rate: float,
                        stage2_burst: float, out_port: int = 2,
                        unit: str = "packets") -> None:
    """Configure ``sw`` as the four-table SYN-flood mitigation pipeline.

    Tables 0 and 2 meter SYN packets per watched destination and remark
    DSCP to 1 and 2 respectively.  Table 1 classifies (ip_src, ip_dst)
    flows GREEN or YELLOW from the first-stage remark; table 3 escalates
    YELLOW flows to RED (dropped) while the second stage is exceeded and
    rolls them back to YELLOW when it subsides.  Flows already GREEN keep
    being forwarded whatever the meters say.
    """
    if sw.tables:
        raise ConfigError("ddos pipeline must be built on an empty switch")
    dsts = [ipv4_to_int(d) if isinstance(d, str) else int(d) for d in dst_ips]

    pair = lambda role: ScopeSpec((FieldId.IP_SRC, FieldId.IP_DST), role)

    t0 = sw.add_table(StatefulBlock(0, stateful=False))
    t1 = sw.add_table(StatefulBlock(
        1, lookup_scope=pair("lookup"), update_scope=pair("update")))
    t2 = sw.add_table(StatefulBlock(2, stateful=False))
    t3 = sw.add_table(StatefulBlock(
        3, lookup_scope=pair("lookup"), update_scope=pair("update")))

    for i, dst in enumerate(dsts):
        sw.add_meter(Meter(i + 1, [MeterBand(stage1_rate, stage1_burst, 1)], unit))
        sw.add_meter(Meter(_STAGE2_METER_BASE + i + 1,
                           [MeterBand(stage2_rate, stage2_burst, 2)], unit))
        syn_to_dst = (FieldMatch(FieldId.IP_DST, dst), _SYN)
        t0.install_entry(XfsmEntry(
            StateMatch.any_(), syn_to_dst, (MeterAction(i + 1),), goto=1, priority=1))
        t2.install_entry(XfsmEntry(
            StateMatch.any_(), syn_to_dst,
            (MeterAction(_STAGE2_METER_BASE + i + 1),), goto=3, priority=1))
    t0.install_entry(XfsmEntry(StateMatch.any_(), (), (), goto=1, priority=0))
    t2.install_entry(XfsmEntry(StateMatch.any_(), (), (), goto=3, priority=0))

    fwd = (Output(out_port),)
    dscp = lambda v: (FieldMatch(FieldId.IP_DSCP, v),)
    # Stage 1 classification.
    t1.install_entry(XfsmEntry(StateMatch.exact(0), dscp(0), fwd,
                               set_state=SetState(GREEN)))
    t1.install_entry(XfsmEntry(StateMatch.exact(0), dscp(1), (),
                               set_state=SetState(YELLOW), goto=2))
    t1.install_entry(XfsmEntry(StateMatch.exact(GREEN), (), fwd))
    t1.install_entry(XfsmEntry(StateMatch.exact(YELLOW), dscp(0), fwd,
                               set_state=SetState(GREEN)))
    t1.install_entry(XfsmEntry(StateMatch.exact(YELLOW), dscp(1), (),
                               set_state=SetState(YELLOW), goto=2))
    # Stage 2 escalation.
    t3.install_entry(XfsmEntry(StateMatch.exact(0), (), fwd,
                               set_state=SetState(YELLOW)))
    t3.install_entry(XfsmEntry(StateMatch.exact(YELLOW), dscp(1), fwd))
    t3.install_entry(XfsmEntry(StateMatch.exact(YELLOW), dscp(2), (Drop(),),
                               set_state=SetState(RED)))
    t3.install_entry(XfsmEntry(StateMatch.exact(RED), dscp(2), (Drop(),)))
    t3.install_entry(XfsmEntry(StateMatch.exact(RED), dscp(1), fwd,
                               set_state=SetState(YELLOW)))
    sw.finalize()
