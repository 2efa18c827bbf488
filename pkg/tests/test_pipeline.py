"""Switch pipeline: forwarding, meters, the SYN-flood program."""

import random

import pytest

from flowfsm.block import (
    Drop,
    FieldMatch,
    Flood,
    Meter as MeterAction,
    Output,
    SetState,
    StateMatch,
    StatefulBlock,
    XfsmEntry,
)
from flowfsm.errors import ConfigError, UnknownMeter
from flowfsm.fields import FieldId
from flowfsm.packet import parse
from flowfsm.pipeline import (
    GREEN,
    RED,
    YELLOW,
    Meter,
    MeterBand,
    Switch,
    build_ddos_pipeline,
)
from flowfsm.scope import ScopeSpec
from flowfsm.trace import build_frame, host_mac

from helpers import LearningSwitchOracle


def mac_learning_switch(n_ports=4):
    sw = Switch(n_ports)
    block = StatefulBlock(0, lookup_scope=ScopeSpec((FieldId.ETH_DST,)),
                          update_scope=ScopeSpec((FieldId.ETH_SRC,), "update"))
    for i in range(1, n_ports + 1):
        block.install_entry(XfsmEntry(
            StateMatch.exact(0), (FieldMatch(FieldId.IN_PORT, i),),
            (Flood(),), SetState(i)))
        for j in range(1, n_ports + 1):
            block.install_entry(XfsmEntry(
                StateMatch.exact(j), (FieldMatch(FieldId.IN_PORT, i),),
                (Output(j),), SetState(i)))
    sw.add_table(block)
    sw.finalize()
    return sw


A, B, C = host_mac(0xA), host_mac(0xB), host_mac(0xC)


def test_mac_learning_flood_then_unicast():
    sw = mac_learning_switch(4)
    r1 = sw.submit(build_frame(eth_src=A, eth_dst=B), 1, 0)
    assert r1.verdict == "forward" and r1.out_ports == (2, 3, 4)
    assert r1.transitions == [
        {"table": 0, "key_hex": "0200000000" + "0a", "from": 0, "to": 1}]
    r2 = sw.submit(build_frame(eth_src=B, eth_dst=A), 2, 1)
    assert r2.out_ports == (1,)
    r3 = sw.submit(build_frame(eth_src=C, eth_dst=A), 3, 2)
    assert r3.out_ports == (1,)
    dump = sw.dump_state(2)
    assert {(d["key_hex"], d["state"]) for d in dump} == {
        ("02000000000a", 1), ("02000000000b", 2), ("02000000000c", 3)}


def test_mac_learning_matches_oracle_on_random_traffic():
    n_ports, hosts = 4, 10
    sw = mac_learning_switch(n_ports)
    oracle = LearningSwitchOracle(n_ports)
    rng = random.Random(1)
    for i in range(600):
        s = rng.randrange(hosts)
        d = rng.randrange(hosts - 1)
        if d >= s:
            d += 1
        port = 1 + s % n_ports
        res = sw.submit(build_frame(eth_src=host_mac(s), eth_dst=host_mac(d)),
                        port, i)
        want = oracle.packet(host_mac(s), host_mac(d), port)
        assert set(res.out_ports) == want, i


def test_flood_excludes_ingress_port():
    sw = mac_learning_switch(3)
    res = sw.submit(build_frame(eth_src=A, eth_dst=B), 2, 0)
    assert res.out_ports == (1, 3)


def test_submit_validates_port_and_parse_errors_drop():
    sw = mac_learning_switch(2)
    with pytest.raises(ValueError):
        sw.submit(build_frame(), 9, 0)
    res = sw.submit(b"\x00" * 5, 1, 0)
    assert res.verdict == "drop" and res.reason == "parse:FrameTooShort"


def test_goto_must_increase():
    sw = Switch(2)
    block = StatefulBlock(0, stateful=False)
    with pytest.raises(ConfigError):
        block.install_entry(XfsmEntry(StateMatch.any_(), (), (), goto=0))
    block.install_entry(XfsmEntry(StateMatch.any_(), (), (), goto=3))
    sw.add_table(block)
    with pytest.raises(ConfigError):
        sw.finalize()  # goto 3 has no target table


def test_meter_reference_checked_at_finalize():
    sw = Switch(2)
    block = StatefulBlock(0, stateful=False)
    block.install_entry(XfsmEntry(StateMatch.any_(), (),
                                  (MeterAction(9), Output(2))))
    sw.add_table(block)
    with pytest.raises(UnknownMeter):
        sw.finalize()


def syn(src, dst, dscp=0):
    return build_frame(ip_src=src, ip_dst=dst, ip_dscp=dscp,
                       tcp_src=1024, tcp_dst=80, tcp_flags=0x02)


def test_meter_burst_boundary():
    # rate 100/s, burst 10: ten back-to-back packets pass, the eleventh in
    # the same instant exceeds and is remarked.
    meter = Meter(1, [MeterBand(100, 10, 1)])
    for i in range(10):
        pkt = parse(syn("1.1.1.1", "2.2.2.2"), 1)
        assert meter.apply(pkt, now_us=5000) is None, i
    pkt = parse(syn("1.1.1.1", "2.2.2.2"), 1)
    assert meter.apply(pkt, 5000) == 1
    assert pkt.get_field(FieldId.IP_DSCP) == 1


def test_meter_idle_refill():
    meter = Meter(1, [MeterBand(100, 10, 1)])
    for i in range(10):
        meter.apply(parse(syn("1.1.1.1", "2.2.2.2"), 1), 0)
    # after a long idle period the bucket is full again
    pkt = parse(syn("1.1.1.1", "2.2.2.2"), 1)
    assert meter.apply(pkt, 10_000_000) is None


def test_meter_two_bands_highest_exceeded_wins():
    meter = Meter(1, [MeterBand(1000, 2, 2), MeterBand(100, 1, 1)])
    # constructor sorts ascending by rate; drain both buckets
    pkt = parse(syn("1.1.1.1", "2.2.2.2"), 1)
    assert meter.apply(pkt, 0) is None
    assert meter.apply(parse(syn("1.1.1.1", "2.2.2.2"), 1), 0) == 1
    assert meter.apply(parse(syn("1.1.1.1", "2.2.2.2"), 1), 0) == 2


def test_meter_conservation_bound():
    # Token-bucket accounting over an interval: conforming packets never
    # exceed burst + rate * span (+1 slack), and under saturating demand
    # (arrivals dense enough that the bucket never idles at its cap) they
    # also never fall short of it, so the remark count is pinned to within
    # one packet of arrivals - (rate * span + burst).
    for seed, rate, burst in ((1, 500, 2), (2, 1000, 3), (3, 2000, 5)):
        rng = random.Random(seed)
        meter = Meter(1, [MeterBand(rate, burst, 1)])
        t = 0
        arrivals = []
        for _ in range(4 * rate):
            arrivals.append(t)
            t += 100 + rng.randrange(20)   # dense: demand far above rate
        remarked = 0
        for t in arrivals:
            if meter.apply(parse(syn("1.1.1.1", "2.2.2.2"), 1), t) is not None:
                remarked += 1
        supply = burst + rate * (arrivals[-1] - arrivals[0]) / 1e6
        assert remarked >= len(arrivals) - supply - 1
        assert remarked <= len(arrivals) - supply + 1


def test_apply_meter_unknown():
    sw = mac_learning_switch(2)
    with pytest.raises(UnknownMeter):
        sw.apply_meter(42, parse(build_frame(), 1), 0)


def test_ddos_pipeline_classification():
    sw = Switch(2)
    build_ddos_pipeline(sw, ["10.0.0.9"], stage1_rate=10, stage1_burst=1,
                        stage2_rate=5, stage2_burst=2, out_port=2)
    dst = "10.0.0.9"
    flow_state = lambda tbl, src: sw.tables[tbl].states.lookup(
        sw.tables[tbl].lookup_scope.extract(parse(syn(src, dst), 1)), 10 ** 9)

    # Pre-attack flow: conforms, goes GREEN, forwarded.
    r = sw.submit(syn("10.0.1.1", dst), 1, 0)
    assert r.verdict == "forward" and r.dscp == 0
    assert flow_state(1, "10.0.1.1") == GREEN

    # Attack at one instant: the meter is drained, new flows go YELLOW.
    t = 100_000
    r = sw.submit(syn("10.0.2.1", dst), 1, t)       # consumes the refill
    assert flow_state(1, "10.0.2.1") == GREEN
    r = sw.submit(syn("10.0.2.2", dst), 1, t + 1)
    assert r.verdict == "forward"                    # first packet still goes
    assert r.dscp == 1
    assert flow_state(1, "10.0.2.2") == YELLOW
    assert flow_state(3, "10.0.2.2") == YELLOW
    assert r.table_path == (0, 1, 2, 3)

    # GREEN flow keeps being forwarded during the attack.
    r = sw.submit(syn("10.0.1.1", dst), 1, t + 2)
    assert r.verdict == "forward" and r.dscp == 1
    assert flow_state(1, "10.0.1.1") == GREEN

    # Stage-2 stays under threshold here (burst 2 covers the single YELLOW
    # packet), so escalate by draining it with more yellow traffic.
    sw.submit(syn("10.0.2.3", dst), 1, t + 3)        # yellow, drains m2
    r = sw.submit(syn("10.0.2.2", dst), 1, t + 4)    # now dscp=2 at stage 2
    assert r.verdict == "drop"
    assert flow_state(3, "10.0.2.2") == RED
    r = sw.submit(syn("10.0.2.2", dst), 1, t + 5)
    assert r.verdict == "drop"                       # RED + dscp=2 stays RED

    # Rates subside below stage-2 threshold but not stage-1: rollback.
    t2 = t + 1_000_000
    sw.submit(syn("10.0.1.1", dst), 1, t2)           # eats the stage-1 refill
    r = sw.submit(syn("10.0.2.2", dst), 1, t2 + 1)
    assert r.verdict == "forward" and r.dscp == 1
    assert flow_state(3, "10.0.2.2") == YELLOW


def test_ddos_non_syn_traffic_skips_meters():
    sw = Switch(2)
    build_ddos_pipeline(sw, ["10.0.0.9"], stage1_rate=10, stage1_burst=1,
                        stage2_rate=5, stage2_burst=1, out_port=2)
    plain = build_frame(ip_src="10.0.3.1", ip_dst="10.0.0.9",
                        tcp_dst=80, tcp_flags=0x10)  # ACK, not SYN
    r = sw.submit(plain, 1, 0)
    assert r.verdict == "forward" and r.dscp == 0
    assert not any(k.startswith("meter_") for k in sw.counters)


def test_ddos_requires_empty_switch():
    sw = mac_learning_switch(2)
    with pytest.raises(ConfigError):
        build_ddos_pipeline(sw, ["1.1.1.1"], stage1_rate=1, stage1_burst=1,
                            stage2_rate=1, stage2_burst=1)


def test_verdict_determinism():
    def run():
        sw = Switch(2)
        build_ddos_pipeline(sw, ["10.0.0.9"], stage1_rate=50, stage1_burst=2,
                            stage2_rate=20, stage2_burst=2, out_port=2)
        rng = random.Random(3)
        out = []
        for i in range(400):
            src = f"10.0.{rng.randrange(4)}.{rng.randrange(9) + 1}"
            res = sw.submit(syn(src, "10.0.0.9"), 1, i * 1357)
            out.append((res.verdict, res.out_ports, res.dscp, res.table_path))
        return out, sw.dump_state(400 * 1357)

    assert run() == run()


def test_state_write_commits_before_goto():
    # The upstream table's write happens before the packet is handed to the
    # next table, so it persists even when that table drops the packet, and
    # the transition log records it ahead of anything downstream does.
    scope = lambda role: ScopeSpec((FieldId.IP_SRC,), role)
    sw = Switch(2)
    t0 = StatefulBlock(0, lookup_scope=scope("lookup"), update_scope=scope("update"))
    t0.install_entry(XfsmEntry(StateMatch.any_(), (), (), SetState(7), goto=1))
    t1 = StatefulBlock(1, lookup_scope=scope("lookup"), update_scope=scope("update"))
    t1.install_entry(XfsmEntry(StateMatch.any_(), (), (Drop(),), SetState(9)))
    sw.add_table(t0)
    sw.add_table(t1)
    sw.finalize()
    res = sw.submit(syn("10.0.0.1", "10.0.0.2"), 1, 0)
    assert res.verdict == "drop"
    assert [(tr["table"], tr["to"]) for tr in res.transitions] == [(0, 7), (1, 9)]
    key = t0.lookup_scope.key_from_values((0x0A000001,))
    assert t0.states.lookup(key, 0) == 7
    assert t1.states.lookup(key, 0) == 9
