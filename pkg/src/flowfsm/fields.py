"""Header field catalog.

Every field the engine can extract, match on, or rewrite is listed here with
a fixed bit width.  The enum values double as the on-the-wire field codes
used by extractor messages; they follow the OpenFlow OXM numbering so the
codes look familiar to controller-side tooling.
"""

from __future__ import annotations

import enum

from .errors import SchemaError


class FieldId(enum.IntEnum):
    IN_PORT = 0
    METADATA = 2
    ETH_DST = 3
    ETH_SRC = 4
    ETH_TYPE = 5
    IP_DSCP = 8
    IP_PROTO = 10
    IP_SRC = 11
    IP_DST = 12
    TCP_SRC = 13
    TCP_DST = 14
    UDP_SRC = 15
    UDP_DST = 16
    MPLS_LABEL = 34
    TCP_FLAGS = 42

    @property
    def width_bits(self) -> int:
        return _WIDTH_BITS[self]

    @property
    def width_bytes(self) -> int:
        return (_WIDTH_BITS[self] + 7) // 8

    @property
    def max_value(self) -> int:
        return (1 << _WIDTH_BITS[self]) - 1

    @classmethod
    def from_name(cls, name: str) -> "FieldId":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise SchemaError(f"unknown field name: {name!r}") from None

    @classmethod
    def from_code(cls, code: int) -> "FieldId":
        return cls(code)


_WIDTH_BITS = {
    FieldId.IN_PORT: 32,
    FieldId.METADATA: 64,
    FieldId.ETH_DST: 48,
    FieldId.ETH_SRC: 48,
    FieldId.ETH_TYPE: 16,
    FieldId.IP_DSCP: 6,
    FieldId.IP_PROTO: 8,
    FieldId.IP_SRC: 32,
    FieldId.IP_DST: 32,
    FieldId.TCP_SRC: 16,
    FieldId.TCP_DST: 16,
    FieldId.UDP_SRC: 16,
    FieldId.UDP_DST: 16,
    FieldId.MPLS_LABEL: 20,
    FieldId.TCP_FLAGS: 8,
}

# Fixed catalog order; key layouts and presence bits index into this.
CATALOG = (
    FieldId.IN_PORT,
    FieldId.ETH_SRC,
    FieldId.ETH_DST,
    FieldId.ETH_TYPE,
    FieldId.MPLS_LABEL,
    FieldId.IP_SRC,
    FieldId.IP_DST,
    FieldId.IP_PROTO,
    FieldId.IP_DSCP,
    FieldId.TCP_SRC,
    FieldId.TCP_DST,
    FieldId.TCP_FLAGS,
    FieldId.UDP_SRC,
    FieldId.UDP_DST,
    FieldId.METADATA,
)

_MAC_FIELDS = (FieldId.ETH_SRC, FieldId.ETH_DST)
_IP_FIELDS = (FieldId.IP_SRC, FieldId.IP_DST)


def mac_to_int(text: str) -> int:
    parts = text.split(":")
    if len(parts) != 6:
        raise SchemaError(f"bad MAC address: {text!r}")
    try:
        return int.from_bytes(bytes(int(p, 16) for p in parts), "big")
    except ValueError:
        raise SchemaError(f"bad MAC address: {text!r}") from None


def int_to_mac(value: int) -> str:
    return ":".join(f"{b:02x}" for b in value.to_bytes(6, "big"))


def ipv4_to_int(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4:
        raise SchemaError(f"bad IPv4 address: {text!r}")
    try:
        octets = [int(p) for p in parts]
    except ValueError:
        raise SchemaError(f"bad IPv4 address: {text!r}") from None
    if any(o < 0 or o > 255 for o in octets):
        raise SchemaError(f"bad IPv4 address: {text!r}")
    return int.from_bytes(bytes(octets), "big")


def int_to_ipv4(value: int) -> str:
    return ".".join(str(b) for b in value.to_bytes(4, "big"))


def field_value_from_text(field: FieldId, raw) -> int:
    """Parse one field value from its program/trace file spelling."""
    if isinstance(raw, bool):
        raise SchemaError(f"{field.name}: booleans are not field values")
    if isinstance(raw, int):
        value = raw
    elif isinstance(raw, str):
        text = raw.strip()
        if field in _MAC_FIELDS and ":" in text:
            value = mac_to_int(text)
        elif field in _IP_FIELDS and "." in text:
            value = ipv4_to_int(text)
        else:
            try:
                value = int(text, 0)
            except ValueError:
                raise SchemaError(f"{field.name}: bad value {raw!r}") from None
    else:
        raise SchemaError(f"{field.name}: bad value {raw!r}")
    if value < 0 or value > field.max_value:
        raise SchemaError(f"{field.name}: value {value} exceeds {field.width_bits} bits")
    return value


def field_match_from_text(field: FieldId, raw) -> tuple[int, int | None]:
    """Parse a match value, optionally masked as ``value/mask``.

    Returns (value, mask) where mask is None for an exact match.
    """
    if isinstance(raw, str) and "/" in raw:
        vtext, mtext = raw.split("/", 1)
        return (field_value_from_text(field, vtext),
                field_value_from_text(field, mtext))
    if isinstance(raw, dict):
        if set(raw) - {"value", "mask"}:
            raise SchemaError(f"{field.name}: match keys must be value/mask")
        value = field_value_from_text(field, raw.get("value", 0))
        mask = raw.get("mask")
        return (value, None if mask is None else field_value_from_text(field, mask))
    return (field_value_from_text(field, raw), None)
