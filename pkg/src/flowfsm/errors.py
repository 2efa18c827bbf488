"""Exception types shared across the package."""


class FlowFsmError(Exception):
    """Base class for every error this package raises deliberately."""


# Packet parsing and rewriting.

class FrameTooShort(FlowFsmError):
    """Frame shorter than a minimal Ethernet header."""


class MalformedHeader(FlowFsmError):
    """A header declares more bytes than the buffer holds."""


class FieldAbsent(FlowFsmError):
    """Rewrite requested for a field whose layer was not parsed."""


class ValueOverflow(FlowFsmError):
    """Value does not fit the field's bit width."""


class NoLabel(FlowFsmError):
    """Label pop requested on an unlabeled frame."""


class LabelPresent(FlowFsmError):
    """Label push on an already labeled frame (single label depth only)."""


# Ternary match engine.

class PatternError(FlowFsmError):
    """Ternary pattern violates the value/mask invariant."""


class WidthMismatch(FlowFsmError):
    """Pattern or key width differs from the table width."""


class TableFull(FlowFsmError):
    """Table reached its configured capacity."""


class UnknownHandle(FlowFsmError):
    """Handle does not name a live entry."""


# Block and pipeline configuration.

class ConfigError(FlowFsmError):
    """Invalid block or switch configuration."""


class UnknownAction(ConfigError):
    """Entry names an action outside the supported action set."""


class NoDefaultEntry(ConfigError):
    """Transition table has no entry covering the DEFAULT state."""


class IncompatibleScopes(ConfigError):
    """Lookup and update scopes produce keys of different shapes."""


class UnknownMeter(ConfigError):
    """Action references a meter id that is not configured."""


# Control channel.

class WireError(FlowFsmError):
    """Malformed control message bytes."""


class Truncated(WireError):
    """Buffer ends before the declared message length."""


class BadCommand(WireError):
    """Unknown message type, command code, or field code."""


class BadLength(WireError):
    """A length field disagrees with the actual layout."""


class ControlError(FlowFsmError):
    """Message that decodes fine but cannot be applied to this switch."""


class UnknownTable(ControlError):
    """Message addresses a table id the switch does not have."""


class NotStateful(ControlError):
    """State operation addressed to a stateless table."""


class ExtractorBusy(ControlError):
    """Extractor change rejected while the state table holds entries."""


# Program and trace files.

class SchemaError(FlowFsmError):
    """Program or trace file fails validation; message carries the location."""
