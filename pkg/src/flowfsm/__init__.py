"""flowfsm: a stateful match/action dataplane.

Per-flow state labels live in flow-keyed state tables and evolve at packet
rate through programmer-supplied transition tables; pipelines of such
blocks (plus plain match/action tables and meters) process traces in
virtual time.
"""

from .fields import CATALOG, FieldId
from .packet import ParsedPacket, parse, pop_label, push_label
from .scope import FlowKey, ScopeSpec, extract
from .state_table import DEFAULT, StateTable
from .ternary import TernaryPattern, TernaryTable
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
    StatefulBlock,
    XfsmEntry,
)
from .pipeline import Meter, MeterBand, PacketResult, Switch, build_ddos_pipeline

__version__ = "0.1.0"

__all__ = [
    "CATALOG", "FieldId", "ParsedPacket", "parse", "push_label", "pop_label",
    "FlowKey", "ScopeSpec", "extract", "DEFAULT", "StateTable",
    "TernaryPattern", "TernaryTable", "Drop", "FieldMatch", "Flood",
    "MeterAction", "Output", "OutputToState", "PopLabel", "PushLabel",
    "SetField", "SetState", "StateMatch", "StatefulBlock", "XfsmEntry",
    "Meter", "MeterBand", "PacketResult", "Switch", "build_ddos_pipeline",
    "__version__",
]
