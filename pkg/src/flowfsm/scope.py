"""Flow key extraction.

A scope is an ordered list of header fields; extracting it from a packet
concatenates the field values, each big-endian at its byte-padded width,
into a flow key.  Keys carry their shape (the per-field byte widths) so
keys built by different-shaped scopes never compare equal, while a lookup
scope and an update scope with matching shapes address the same entries --
which is exactly what cross-flow programs like MAC learning rely on.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple

from .errors import ConfigError
from .fields import FieldId
from .packet import ParsedPacket

MAX_KEY_BYTES = 48


class FlowKey(NamedTuple):
    shape: tuple[int, ...]
    data: bytes

    def hex(self) -> str:
        return self.data.hex()

    def padded(self, size: int = MAX_KEY_BYTES) -> bytes:
        return self.data + b"\x00" * (size - len(self.data))


class ScopeSpec:
    """Ordered field list used to build flow keys for state reads or writes."""

    __slots__ = ("fields", "role", "shape", "byte_len", "_single")

    def __init__(self, fields: Iterable[FieldId], role: str = "lookup"):
        fields = tuple(fields)
        if not fields:
            raise ConfigError("scope must list at least one field")
        for f in fields:
            if not isinstance(f, FieldId):
                raise ConfigError(f"scope field must be a FieldId, got {f!r}")
        if role not in ("lookup", "update"):
            raise ConfigError(f"scope role must be lookup or update, got {role!r}")
        self.fields = fields
        self.role = role
        self.shape = tuple(f.width_bytes for f in fields)
        self.byte_len = sum(self.shape)
        if self.byte_len > MAX_KEY_BYTES:
            raise ConfigError(
                f"scope key is {self.byte_len} bytes, limit is {MAX_KEY_BYTES}")
        # Single-field scopes dominate real programs; skip the join for them.
        self._single = (fields[0], self.shape[0]) if len(fields) == 1 else None

    def extract(self, pkt: ParsedPacket) -> FlowKey | None:
        """Build the flow key, or None (the NULL outcome) when any scope
        field is absent from the packet."""
        fields = pkt.fields
        single = self._single
        if single is not None:
            v = fields.get(single[0])
            if v is None:
                return None
            return FlowKey(self.shape, v.to_bytes(single[1], "big"))
        parts = []
        for f, width in zip(self.fields, self.shape):
            v = fields.get(f)
            if v is None:
                return None
            parts.append(v.to_bytes(width, "big"))
        return FlowKey(self.shape, b"".join(parts))

    def key_from_values(self, values: Iterable[int]) -> FlowKey:
        """Key from explicit per-field values in scope order."""
        values = tuple(values)
        if len(values) != len(self.fields):
            raise ConfigError(
                f"scope has {len(self.fields)} fields, got {len(values)} values")
        parts = []
        for f, width, v in zip(self.fields, self.shape, values):
            if v < 0 or v > f.max_value:
                raise ConfigError(f"{f.name}: value {v} out of range")
            parts.append(v.to_bytes(width, "big"))
        return FlowKey(self.shape, b"".join(parts))

    def key_from_bytes(self, data: bytes) -> FlowKey:
        if len(data) != self.byte_len:
            raise ConfigError(
                f"key is {len(data)} bytes, scope needs {self.byte_len}")
        return FlowKey(self.shape, bytes(data))

    def compatible_with(self, other: "ScopeSpec") -> bool:
        """True when keys from both scopes are interchangeable."""
        return self.shape == other.shape

    def names(self) -> str:
        return ",".join(f.name.lower() for f in self.fields)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ScopeSpec)
                and self.fields == other.fields and self.role == other.role)

    def __hash__(self) -> int:
        return hash((self.fields, self.role))

    def __repr__(self) -> str:
        return f"ScopeSpec([{self.names()}], role={self.role})"


def extract(pkt: ParsedPacket, scope: ScopeSpec) -> FlowKey | None:
    return scope.extract(pkt)
