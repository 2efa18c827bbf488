"""Clock-cycle model of the lookup-to-update feedback latency.

In a pipelined hardware datapath the state written for a packet commits L
cycles after its lookup, so a same-flow packet entering fewer than L cycles
later reads a stale state.  This module simulates that loop behind a
round-robin port mixer: with N busy input ports the mixer spaces same-port
packets N cycles apart, which removes the hazard once N >= L.

The mixer is work-conserving by default (an idle port's slot goes to the
next busy port), matching an aggregation of always-busy links; strict mode
dedicates every N-th cycle to its port unconditionally, making the spacing
guarantee hold even with idle ports.

This is an analysis tool: the functional pipeline is run-to-completion and
has no such hazard.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping, Sequence

from .errors import ConfigError

DEFAULT_LATENCY = 5


@dataclass
class HazardConfig:
    num_ports: int
    latency_cycles: int = DEFAULT_LATENCY
    # port id (1-based) -> [(arrival cycle, flow key), ...]
    schedules: Mapping[int, Sequence[tuple[int, Hashable]]] = field(default_factory=dict)
    strict: bool = False

    def validate(self) -> None:
        if self.num_ports < 1:
            raise ConfigError("need at least one port")
        if self.latency_cycles < 1:
            raise ConfigError("latency must be at least one cycle")
        for port, sched in self.schedules.items():
            if not (1 <= port <= self.num_ports):
                raise ConfigError(f"port {port} not in 1..{self.num_ports}")
            cycles = [c for c, _ in sched]
            if cycles != sorted(cycles):
                raise ConfigError(f"port {port}: arrivals must be cycle-sorted")
            if len(cycles) != len(set(cycles)):
                raise ConfigError(f"port {port}: at most one arrival per cycle")


@dataclass
class HazardReport:
    processed: list[tuple[int, int, Any]]        # (emit cycle, port, flow)
    hazards: list[dict]                          # {cycle, flow, stale_read_of}

    @property
    def hazard_count(self) -> int:
        return len(self.hazards)

    def to_json(self) -> dict:
        return {
            "processed": [
                {"cycle": c, "port": p, "flow": f} for c, p, f in self.processed
            ],
            "hazards": list(self.hazards),
            "hazard_count": self.hazard_count,
        }


def simulate(cfg: HazardConfig) -> HazardReport:
    """Emit one packet per cycle through the mixer and record stale reads.

    A hazard is a packet reading flow state while an update issued by an
    earlier same-flow packet (emitted fewer than L cycles before) has not
    yet committed.
    """
    cfg.validate()
    queues: dict[int, deque] = {
        p: deque(cfg.schedules.get(p, ())) for p in range(1, cfg.num_ports + 1)
    }
    pending = sum(len(q) for q in queues.values())
    last_emit: dict[Hashable, int] = {}
    processed: list[tuple[int, int, Any]] = []
    hazards: list[dict] = []
    latency = cfg.latency_cycles
    cycle = 0
    rr = 0  # index of the port scanned first (0-based)
    while pending:
        chosen = None
        if cfg.strict:
            port = (cycle % cfg.num_ports) + 1
            q = queues[port]
            if q and q[0][0] <= cycle:
                chosen = port
        else:
            for k in range(cfg.num_ports):
                port = ((rr + k) % cfg.num_ports) + 1
                q = queues[port]
                if q and q[0][0] <= cycle:
                    chosen = port
                    rr = (rr + k + 1) % cfg.num_ports
                    break
        if chosen is None:
            # Nothing ready: idle this cycle (strict) or jump ahead.
            if cfg.strict:
                cycle += 1
            else:
                upcoming = min(q[0][0] for q in queues.values() if q)
                cycle = max(cycle + 1, upcoming)
            continue
        _, flow = queues[chosen].popleft()
        pending -= 1
        prev = last_emit.get(flow)
        if prev is not None and cycle - prev < latency:
            hazards.append({"cycle": cycle, "flow": flow, "stale_read_of": prev})
        last_emit[flow] = cycle
        processed.append((cycle, chosen, flow))
        cycle += 1
    return HazardReport(processed, hazards)


def backlogged_config(num_ports: int, latency_cycles: int, hot_packets: int,
                      strict: bool = False) -> HazardConfig:
    """Worst case for one flow: back-to-back same-flow arrivals on port 1
    while every other port stays busy with unique background flows."""
    schedules: dict[int, list[tuple[int, Hashable]]] = {
        1: [(c, "hot") for c in range(hot_packets)]
    }
    for port in range(2, num_ports + 1):
        schedules[port] = [(c, f"bg-{port}-{c}") for c in range(hot_packets)]
    return HazardConfig(num_ports, latency_cycles, schedules, strict=strict)


def min_safe_ports(latency_cycles: int, hot_packets: int | None = None) -> int:
    """Smallest port count whose round-robin spacing removes the hazard for
    back-to-back same-flow traffic on a single port; equals the latency."""
    if latency_cycles < 1:
        raise ConfigError("latency must be at least one cycle")
    if hot_packets is None:
        hot_packets = max(4 * latency_cycles, 8)
    for n in range(1, latency_cycles + 2):
        report = simulate(backlogged_config(n, latency_cycles, hot_packets))
        if report.hazard_count == 0:
            return n
    raise AssertionError("unreachable: spacing equals port count")
