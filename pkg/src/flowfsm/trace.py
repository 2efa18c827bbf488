"""Trace files: one JSON object per line, one packet per object.

A line is either raw (``{"port": 1, "hex": "..."}``) or a structured
shorthand (``{"port": 1, "ip_src": "1.2.3.4", "udp_dst": 5123}``) that gets
assembled into a real frame.  ``time_us`` carries the virtual timestamp;
when absent, packets are stamped 0, 1, 2, ...  Virtual time is the only
clock anywhere, which keeps meter and timeout behavior reproducible.
"""

from __future__ import annotations

import json
import random
import struct
from typing import Iterable, Iterator, NamedTuple

from .errors import SchemaError
from .fields import FieldId, field_value_from_text
from .packet import (
    ETHERTYPE_IPV4,
    ETHERTYPE_MPLS,
    IPPROTO_TCP,
    IPPROTO_UDP,
    ipv4_checksum,
)

# Ethertype used for frames that carry no L3 payload we parse.
ETHERTYPE_OPAQUE = 0x88B5


class TracePacket(NamedTuple):
    seq: int
    time_us: int
    port: int
    data: bytes


def build_frame(*, eth_src: str | int = "02:00:00:00:00:01",
                eth_dst: str | int = "02:00:00:00:00:02",
                eth_type: int | None = None,
                mpls_label: int | None = None,
                ip_src: str | int | None = None,
                ip_dst: str | int | None = None,
                ip_proto: int | None = None,
                ip_dscp: int = 0,
                tcp_src: int | None = None, tcp_dst: int | None = None,
                tcp_flags: int | None = None,
                udp_src: int | None = None, udp_dst: int | None = None,
                payload: bytes = b"", pad_to: int = 60) -> bytes:
    """Assemble a frame from field values, filling lengths and checksums.

    Layers appear when any of their fields is given; an IPv4 layer is
    implied by L4 fields.  Frames are zero-padded to ``pad_to`` bytes
    (classic minimum of 60 before the FCS).
    """
    want_tcp = tcp_src is not None or tcp_dst is not None or tcp_flags is not None
    want_udp = udp_src is not None or udp_dst is not None
    if want_tcp and want_udp:
        raise SchemaError("packet cannot be both TCP and UDP")
    want_ip = want_tcp or want_udp or ip_src is not None or ip_dst is not None \
        or ip_proto is not None

    l4 = b""
    if want_tcp:
        flags = 0x02 if tcp_flags is None else tcp_flags
        l4 = struct.pack("!HHIIBBHHH", tcp_src or 0, tcp_dst or 0, 0, 0,
                         5 << 4, flags & 0xFF, 8192, 0, 0)
        proto = IPPROTO_TCP
    elif want_udp:
        l4 = struct.pack("!HHHH", udp_src or 0, udp_dst or 0, 8 + len(payload), 0)
        proto = IPPROTO_UDP
    else:
        proto = ip_proto if ip_proto is not None else 0

    l3 = b""
    if want_ip:
        src = field_value_from_text(FieldId.IP_SRC, ip_src if ip_src is not None else 0)
        dst = field_value_from_text(FieldId.IP_DST, ip_dst if ip_dst is not None else 0)
        if ip_proto is not None:
            proto = ip_proto
        total = 20 + len(l4) + len(payload)
        header = bytearray(struct.pack(
            "!BBHHHBBHII", 0x45, (ip_dscp & 0x3F) << 2, total, 0x1234, 0x4000,
            64, proto, 0, src, dst))
        header[10:12] = ipv4_checksum(header).to_bytes(2, "big")
        l3 = bytes(header) + l4 + payload
        inner_type = ETHERTYPE_IPV4
    else:
        l3 = payload
        inner_type = eth_type if eth_type is not None else ETHERTYPE_OPAQUE

    src_mac = field_value_from_text(FieldId.ETH_SRC, eth_src)
    dst_mac = field_value_from_text(FieldId.ETH_DST, eth_dst)
    if mpls_label is not None:
        shim = struct.pack("!I", ((mpls_label & 0xFFFFF) << 12) | (1 << 8) | 64)
        frame = dst_mac.to_bytes(6, "big") + src_mac.to_bytes(6, "big") \
            + struct.pack("!H", ETHERTYPE_MPLS) + shim + l3
    else:
        etype = eth_type if eth_type is not None else inner_type
        frame = dst_mac.to_bytes(6, "big") + src_mac.to_bytes(6, "big") \
            + struct.pack("!H", etype) + l3
    if len(frame) < pad_to:
        frame += b"\x00" * (pad_to - len(frame))
    return frame


_FRAME_KEYS = {
    "eth_src", "eth_dst", "eth_type", "mpls_label", "ip_src", "ip_dst",
    "ip_proto", "ip_dscp", "tcp_src", "tcp_dst", "tcp_flags",
    "udp_src", "udp_dst",
}


def packet_from_record(record: dict, seq: int, default_time: int) -> TracePacket:
    if not isinstance(record, dict):
        raise SchemaError(f"line {seq + 1}: expected an object")
    port = record.get("port")
    if not isinstance(port, int) or port < 1:
        raise SchemaError(f"line {seq + 1}: 'port' must be a positive int")
    time_us = record.get("time_us", default_time)
    if not isinstance(time_us, int) or time_us < 0:
        raise SchemaError(f"line {seq + 1}: 'time_us' must be a non-negative int")
    if "hex" in record:
        try:
            data = bytes.fromhex(record["hex"])
        except (ValueError, TypeError):
            raise SchemaError(f"line {seq + 1}: bad 'hex' frame") from None
        return TracePacket(seq, time_us, port, data)
    kwargs = {}
    for key, value in record.items():
        if key in ("port", "time_us"):
            continue
        if key == "payload_hex":
            try:
                kwargs["payload"] = bytes.fromhex(value)
            except (ValueError, TypeError):
                raise SchemaError(f"line {seq + 1}: bad payload_hex") from None
        elif key in _FRAME_KEYS:
            kwargs[key] = value
        else:
            raise SchemaError(f"line {seq + 1}: unknown key {key!r}")
    try:
        data = build_frame(**kwargs)
    except SchemaError as exc:
        raise SchemaError(f"line {seq + 1}: {exc}") from None
    return TracePacket(seq, time_us, port, data)


def read_trace(path) -> Iterator[TracePacket]:
    """Stream packets from a JSON-lines trace file."""
    seq = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: bad JSON ({exc.msg})") from None
            yield packet_from_record(record, seq, default_time=seq)
            seq += 1


def write_trace(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def host_mac(index: int) -> str:
    if not (0 <= index < 1 << 24):
        raise SchemaError(f"host index {index} out of range")
    return "02:00:00:%02x:%02x:%02x" % (
        (index >> 16) & 0xFF, (index >> 8) & 0xFF, index & 0xFF)


def gen_trace(spec: dict) -> list[dict]:
    """Deterministic synthetic traces; same spec, same records, always.

    Kinds:
      mac_random  -- random src/dst pairs over a host population, each host
                     pinned to the port ``1 + index % ports``.
      port_knock  -- a UDP knock sequence followed by an optional TCP probe.
    """
    kind = spec.get("kind")
    if kind == "mac_random":
        hosts = int(spec.get("hosts", 8))
        packets = int(spec.get("packets", 100))
        ports = int(spec.get("ports", 4))
        seed = int(spec.get("seed", 0))
        if hosts < 2 or ports < 2:
            raise SchemaError("mac_random needs at least 2 hosts and 2 ports")
        rng = random.Random(seed)
        records = []
        for i in range(packets):
            src = rng.randrange(hosts)
            dst = rng.randrange(hosts - 1)
            if dst >= src:
                dst += 1
            records.append({
                "time_us": i,
                "port": 1 + src % ports,
                "eth_src": host_mac(src),
                "eth_dst": host_mac(dst),
            })
        return records
    if kind == "port_knock":
        host = spec.get("host", "1.2.3.4")
        target = spec.get("target", "10.0.0.1")
        knocks = spec.get("knocks", [5123, 6234, 7345, 8456])
        probe = spec.get("probe", 22)
        port = int(spec.get("port", 1))
        records = []
        t = 0
        for k in knocks:
            records.append({
                "time_us": t, "port": port, "ip_src": host, "ip_dst": target,
                "udp_src": 40000, "udp_dst": int(k),
            })
            t += 1000
        if probe is not None:
            records.append({
                "time_us": t, "port": port, "ip_src": host, "ip_dst": target,
                "tcp_src": 40000, "tcp_dst": int(probe), "tcp_flags": 0x02,
            })
        return records
    raise SchemaError(f"unknown trace kind {kind!r}")
