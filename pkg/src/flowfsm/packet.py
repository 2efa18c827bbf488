"""Frame parsing and field rewriting.

Supported layers: Ethernet, a single MPLS label, IPv4, TCP and UDP.  The
catalog of addressable fields is fixed (see ``fields.CATALOG``); anything
else rides along as opaque bytes.  A parsed packet keeps the raw frame and,
for every parsed field, the byte position it came from, so rewrites patch
the frame in place and reserialization is always byte-exact.

IN_PORT and METADATA are synthetic fields: they live only in the field map,
never in the frame bytes, so scopes and matches treat them uniformly with
header fields.
"""

from __future__ import annotations

import struct

from .errors import (
    FieldAbsent,
    FrameTooShort,
    LabelPresent,
    MalformedHeader,
    NoLabel,
    ValueOverflow,
)
from .fields import FieldId

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
ETHERTYPE_MPLS = 0x8847
IPPROTO_TCP = 6
IPPROTO_UDP = 17

ETH_HEADER_LEN = 14
MPLS_SHIM_LEN = 4

# IPv4 header fields whose rewrite invalidates the header checksum.
_IPV4_HEADER_FIELDS = frozenset(
    (FieldId.IP_DSCP, FieldId.IP_PROTO, FieldId.IP_SRC, FieldId.IP_DST)
)
_SYNTHETIC = frozenset((FieldId.IN_PORT, FieldId.METADATA))


def ipv4_checksum(header: bytes | bytearray | memoryview) -> int:
    """RFC 791 header checksum (ones-complement sum of 16-bit words)."""
    total = 0
    view = memoryview(header)
    for i in range(0, len(view) - 1, 2):
        total += (view[i] << 8) | view[i + 1]
    if len(view) % 2:
        total += view[-1] << 8
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


class ParsedPacket:
    """A frame plus the field map extracted from it.

    Value semantics: instances are cheap to ``copy()`` and two copies never
    share mutable state.  ``set_field`` mutates in place; callers that need
    the original must copy first.
    """

    __slots__ = ("raw", "in_port", "fields", "_locs", "inner_ethertype", "_ip_off")

    def __init__(self, raw: bytearray, in_port: int):
        self.raw = raw
        self.in_port = in_port
        self.fields: dict[FieldId, int] = {}
        # field -> (byte offset, container length, bit shift inside container)
        self._locs: dict[FieldId, tuple[int, int, int]] = {}
        self.inner_ethertype: int | None = None
        self._ip_off: int | None = None

    def get_field(self, field: FieldId) -> int | None:
        """Parsed value, or None when the field's layer is absent."""
        return self.fields.get(field)

    def has_field(self, field: FieldId) -> bool:
        return field in self.fields

    def set_field(self, field: FieldId, value: int) -> "ParsedPacket":
        """Rewrite one field in both the field map and the raw bytes.

        IPv4 header rewrites recompute the header checksum so the frame
        stays valid at every pipeline stage.
        """
        if value < 0 or value > field.max_value:
            raise ValueOverflow(f"{field.name}: {value} exceeds {field.width_bits} bits")
        if field in _SYNTHETIC:
            self.fields[field] = value
            if field is FieldId.IN_PORT:
                self.in_port = value
            return self
        loc = self._locs.get(field)
        if loc is None:
            raise FieldAbsent(f"{field.name} not present in packet")
        off, nbytes, shift = loc
        cur = int.from_bytes(self.raw[off:off + nbytes], "big")
        fmask = ((1 << field.width_bits) - 1) << shift
        cur = (cur & ~fmask) | (value << shift)
        self.raw[off:off + nbytes] = cur.to_bytes(nbytes, "big")
        self.fields[field] = value
        if field in _IPV4_HEADER_FIELDS:
            self._refresh_ipv4_checksum()
        return self

    def _refresh_ipv4_checksum(self) -> None:
        off = self._ip_off
        if off is None:
            return
        hlen = (self.raw[off] & 0x0F) * 4
        self.raw[off + 10:off + 12] = b"\x00\x00"
        cks = ipv4_checksum(self.raw[off:off + hlen])
        self.raw[off + 10:off + 12] = cks.to_bytes(2, "big")

    def to_bytes(self) -> bytes:
        return bytes(self.raw)

    def copy(self) -> "ParsedPacket":
        dup = ParsedPacket(bytearray(self.raw), self.in_port)
        dup.fields = dict(self.fields)
        dup._locs = self._locs  # never mutated after parse
        dup.inner_ethertype = self.inner_ethertype
        dup._ip_off = self._ip_off
        return dup

    def __repr__(self) -> str:
        named = {f.name.lower(): v for f, v in self.fields.items()}
        return f"ParsedPacket(len={len(self.raw)}, {named})"


# Ethernet field positions never move; packets that stop at L2 share this
# dict (read-only by convention: parse replaces it before extending).
_ETH_LOCS = {
    FieldId.ETH_DST: (0, 6, 0),
    FieldId.ETH_SRC: (6, 6, 0),
    FieldId.ETH_TYPE: (12, 2, 0),
}

_from_bytes = int.from_bytes


def parse(buf: bytes | bytearray, in_port: int) -> ParsedPacket:
    """Parse a raw frame into a field-addressable packet.

    Layers that are simply not there (e.g. no IPv4 under an ARP ethertype)
    leave their fields absent; layers that declare more bytes than the
    buffer holds raise MalformedHeader.
    """
    if len(buf) < ETH_HEADER_LEN:
        raise FrameTooShort(f"{len(buf)} bytes < {ETH_HEADER_LEN}")
    raw = bytearray(buf)
    pkt = ParsedPacket.__new__(ParsedPacket)  # hot path: skip __init__
    pkt.raw = raw
    pkt.in_port = in_port
    pkt.inner_ethertype = None
    pkt._ip_off = None
    ethertype = (raw[12] << 8) | raw[13]
    pkt.fields = {
        FieldId.IN_PORT: in_port,
        FieldId.METADATA: 0,
        FieldId.ETH_DST: _from_bytes(raw[0:6], "big"),
        FieldId.ETH_SRC: _from_bytes(raw[6:12], "big"),
        FieldId.ETH_TYPE: ethertype,
    }

    off = ETH_HEADER_LEN
    if ethertype == ETHERTYPE_MPLS:
        if len(raw) < off + MPLS_SHIM_LEN:
            raise MalformedHeader("truncated MPLS shim")
        locs = pkt._locs = dict(_ETH_LOCS)
        shim = _from_bytes(raw[off:off + 4], "big")
        pkt.fields[FieldId.MPLS_LABEL] = shim >> 12
        locs[FieldId.MPLS_LABEL] = (off, 4, 12)
        bottom = (shim >> 8) & 1
        off += MPLS_SHIM_LEN
        if bottom and len(raw) > off and raw[off] >> 4 == 4:
            pkt.inner_ethertype = ETHERTYPE_IPV4
            _parse_ipv4(pkt, off)
    elif ethertype == ETHERTYPE_IPV4:
        pkt._locs = dict(_ETH_LOCS)
        _parse_ipv4(pkt, off)
    else:
        pkt._locs = _ETH_LOCS
    return pkt


def _parse_ipv4(pkt: ParsedPacket, off: int) -> None:
    raw = pkt.raw
    if raw[off] >> 4 != 4:
        return  # not IPv4 after all; leave the layer unparsed
    if len(raw) < off + 20:
        raise MalformedHeader("truncated IPv4 header")
    ihl = raw[off] & 0x0F
    if ihl < 5:
        raise MalformedHeader(f"IPv4 IHL {ihl} < 5")
    hlen = ihl * 4
    total = (raw[off + 2] << 8) | raw[off + 3]
    if off + hlen > len(raw) or total < hlen:
        raise MalformedHeader("IPv4 header overruns buffer")
    if off + total > len(raw):
        raise MalformedHeader("IPv4 total length overruns buffer")

    fields = pkt.fields
    locs = pkt._locs
    pkt._ip_off = off
    fields[FieldId.IP_DSCP] = raw[off + 1] >> 2
    locs[FieldId.IP_DSCP] = (off + 1, 1, 2)
    proto = raw[off + 9]
    fields[FieldId.IP_PROTO] = proto
    locs[FieldId.IP_PROTO] = (off + 9, 1, 0)
    fields[FieldId.IP_SRC] = int.from_bytes(raw[off + 12:off + 16], "big")
    locs[FieldId.IP_SRC] = (off + 12, 4, 0)
    fields[FieldId.IP_DST] = int.from_bytes(raw[off + 16:off + 20], "big")
    locs[FieldId.IP_DST] = (off + 16, 4, 0)

    l4_off = off + hlen
    l4_len = total - hlen
    if proto == IPPROTO_TCP:
        if l4_len < 20:
            raise MalformedHeader("truncated TCP header")
        fields[FieldId.TCP_SRC] = (raw[l4_off] << 8) | raw[l4_off + 1]
        locs[FieldId.TCP_SRC] = (l4_off, 2, 0)
        fields[FieldId.TCP_DST] = (raw[l4_off + 2] << 8) | raw[l4_off + 3]
        locs[FieldId.TCP_DST] = (l4_off + 2, 2, 0)
        fields[FieldId.TCP_FLAGS] = raw[l4_off + 13]
        locs[FieldId.TCP_FLAGS] = (l4_off + 13, 1, 0)
    elif proto == IPPROTO_UDP:
        if l4_len < 8:
            raise MalformedHeader("truncated UDP header")
        fields[FieldId.UDP_SRC] = (raw[l4_off] << 8) | raw[l4_off + 1]
        locs[FieldId.UDP_SRC] = (l4_off, 2, 0)
        fields[FieldId.UDP_DST] = (raw[l4_off + 2] << 8) | raw[l4_off + 3]
        locs[FieldId.UDP_DST] = (l4_off + 2, 2, 0)


def push_label(pkt: ParsedPacket, label: int, ttl: int = 64) -> ParsedPacket:
    """Insert an MPLS shim after the Ethernet header; returns a new packet.

    The displaced ethertype is remembered so a later pop restores it
    byte-exactly.
    """
    if label < 0 or label > FieldId.MPLS_LABEL.max_value:
        raise ValueOverflow(f"MPLS label {label} exceeds 20 bits")
    if FieldId.MPLS_LABEL in pkt.fields:
        raise LabelPresent("packet already carries a label")
    displaced = pkt.fields[FieldId.ETH_TYPE]
    shim = (label << 12) | (1 << 8) | (ttl & 0xFF)
    raw = bytes(pkt.raw)
    rebuilt = raw[:12] + struct.pack("!HI", ETHERTYPE_MPLS, shim) + raw[14:]
    out = parse(rebuilt, pkt.in_port)
    out.fields[FieldId.METADATA] = pkt.fields[FieldId.METADATA]
    out.inner_ethertype = displaced
    return out


def pop_label(pkt: ParsedPacket) -> ParsedPacket:
    """Remove the MPLS shim and restore the prior ethertype."""
    if FieldId.MPLS_LABEL not in pkt.fields:
        raise NoLabel("packet carries no label")
    inner = pkt.inner_ethertype
    raw = bytes(pkt.raw)
    if inner is None:
        payload_start = ETH_HEADER_LEN + MPLS_SHIM_LEN
        if len(raw) > payload_start and raw[payload_start] >> 4 == 4:
            inner = ETHERTYPE_IPV4
        else:
            inner = 0x0000
    rebuilt = raw[:12] + struct.pack("!H", inner) + raw[18:]
    out = parse(rebuilt, pkt.in_port)
    out.fields[FieldId.METADATA] = pkt.fields[FieldId.METADATA]
    return out
