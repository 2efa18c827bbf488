"""Command-line front end.

Subcommands: run (replay a trace through a program), gen-program,
gen-trace, dump-state, hazard, send-msg.  All configuration comes from
flags; timestamps come from the trace file, never the wall clock.
"""

from __future__ import annotations

import argparse
import json
import sys

import yaml

from . import control, hazard, programs, trace
from .errors import FlowFsmError, SchemaError


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _emit(fh, record: dict, fmt: str) -> None:
    if fmt == "json":
        fh.write(json.dumps(record) + "\n")
    else:
        parts = [f"pkt {record['pkt_seq']}: {record['verdict']}"]
        if record["out_ports"]:
            parts.append("ports=" + ",".join(map(str, record["out_ports"])))
        if record.get("reason"):
            parts.append("reason=" + record["reason"])
        if record["dscp"] is not None:
            parts.append(f"dscp={record['dscp']}")
        parts.append("path=" + ">".join(map(str, record["table_path"])))
        for tr in record["state_transitions"]:
            parts.append(
                f"t{tr['table']}[{tr['key_hex']}]:{tr['from']}->{tr['to']}")
        fh.write(" ".join(parts) + "\n")


def _replay(program_path, trace_path):
    sw = programs.build_switch(programs.load_program(program_path))
    last_now = 0
    results = []
    if trace_path is not None:
        for tp in trace.read_trace(trace_path):
            last_now = tp.time_us
            results.append((tp.seq, sw.submit(tp.data, tp.port, tp.time_us)))
    return sw, results, last_now


def _cmd_run(args) -> int:
    sw, results, last_now = _replay(args.program, args.trace)
    fh, close = _open_out(args.log)
    try:
        for seq, res in results:
            _emit(fh, res.log_record(seq), args.format)
    finally:
        if close:
            fh.close()
    if args.dump is not None:
        fh, close = _open_out(args.dump)
        try:
            fh.write(json.dumps(sw.dump_state(last_now), indent=2) + "\n")
        finally:
            if close:
                fh.close()
    if args.summary:
        print(json.dumps(dict(sorted(sw.counters.items()))), file=sys.stderr)
    return 0


def _cmd_dump_state(args) -> int:
    sw, _results, last_now = _replay(args.program, args.trace)
    print(json.dumps(sw.dump_state(last_now), indent=2))
    return 0


def _cmd_gen_program(args) -> int:
    if args.kind == "port-knocking":
        prog = programs.gen_port_knocking(
            knock_ports=tuple(args.knock_ports), open_port=args.open_port,
            out_port=args.out_port, ports=args.ports)
    elif args.kind == "mac-learning":
        prog = programs.gen_mac_learning(args.ports, parametric=args.parametric)
    elif args.kind == "mpls-learning":
        prog = programs.gen_mpls_learning(
            args.edge_ports, args.switch_ids, args.self_id,
            args.transport_port, ports=args.ports)
    else:  # ddos
        prog = programs.gen_ddos(
            args.dst, stage1_rate=args.stage1_rate, stage1_burst=args.stage1_burst,
            stage2_rate=args.stage2_rate, stage2_burst=args.stage2_burst,
            out_port=args.out_port, ports=args.ports)
    text = yaml.safe_dump(prog, sort_keys=False)
    if args.output is None or args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _cmd_gen_trace(args) -> int:
    spec = {"kind": args.kind.replace("-", "_"), "seed": args.seed,
            "hosts": args.hosts, "packets": args.packets, "ports": args.ports}
    if args.kind == "port-knock":
        spec = {"kind": "port_knock", "host": args.host,
                "knocks": args.knock_ports, "probe": args.open_port}
    records = trace.gen_trace(spec)
    if args.output is None or args.output == "-":
        for rec in records:
            sys.stdout.write(json.dumps(rec, sort_keys=True) + "\n")
    else:
        trace.write_trace(args.output, records)
    return 0


def _cmd_hazard(args) -> int:
    if args.min_safe:
        print(json.dumps({"latency": args.latency,
                          "min_safe_ports": hazard.min_safe_ports(args.latency)}))
        return 0
    if args.schedule is not None:
        raw = json.load(open(args.schedule, "r", encoding="utf-8"))
        schedules = {
            int(port): [(int(c), str(flow)) for c, flow in arrivals]
            for port, arrivals in raw.items()
        }
        cfg = hazard.HazardConfig(args.ports, args.latency, schedules,
                                  strict=args.strict)
    else:
        cfg = hazard.backlogged_config(args.ports, args.latency, args.packets,
                                       strict=args.strict)
    print(json.dumps(hazard.simulate(cfg).to_json()))
    return 0


def _cmd_send_msg(args) -> int:
    sw = programs.build_switch(programs.load_program(args.program))
    failures = 0
    seq = 0
    for blob in args.hex:
        try:
            buf = bytes.fromhex(blob)
        except ValueError:
            print(json.dumps({"msg": seq, "status": "error",
                              "error": "BadHex"}))
            failures += 1
            seq += 1
            continue
        try:
            for msg in control.iter_messages(buf):
                try:
                    result = control.apply(sw, msg, now_us=args.now)
                    record = {"msg": seq, "status": "ok",
                              "applied": result.get("applied")}
                    reply = result.get("reply")
                    if reply is not None:
                        record["capabilities"] = reply.capabilities
                        record["table_flags"] = list(reply.table_flags)
                    print(json.dumps(record))
                except FlowFsmError as exc:
                    failures += 1
                    print(json.dumps({"msg": seq, "status": "error",
                                      "error": type(exc).__name__,
                                      "detail": str(exc)}))
                seq += 1
        except FlowFsmError as exc:
            failures += 1
            print(json.dumps({"msg": seq, "status": "error",
                              "error": type(exc).__name__, "detail": str(exc)}))
            seq += 1
    if args.dump:
        print(json.dumps(sw.dump_state(args.now)))
    return 1 if failures else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowfsm",
        description="Stateful match/action dataplane simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay a trace through a program")
    p.add_argument("program")
    p.add_argument("trace")
    p.add_argument("--log", default="-", help="verdict log path (default stdout)")
    p.add_argument("--dump", default=None, help="write final state dump here")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--summary", action="store_true",
                   help="print counters to stderr")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("dump-state", help="state dump after an optional trace")
    p.add_argument("program")
    p.add_argument("trace", nargs="?", default=None)
    p.set_defaults(func=_cmd_dump_state)

    p = sub.add_parser("gen-program", help="emit a bundled program as YAML")
    p.add_argument("kind", choices=("mac-learning", "mpls-learning",
                                    "port-knocking", "ddos"))
    p.add_argument("--ports", type=int, default=4)
    p.add_argument("--parametric", action="store_true")
    p.add_argument("--knock-ports", type=int, nargs="+",
                   default=list(programs.KNOCK_SEQUENCE))
    p.add_argument("--open-port", type=int, default=programs.OPEN_PORT)
    p.add_argument("--out-port", type=int, default=2)
    p.add_argument("--edge-ports", type=int, nargs="+", default=[1])
    p.add_argument("--switch-ids", type=int, nargs="+", default=[2])
    p.add_argument("--self-id", type=int, default=1)
    p.add_argument("--transport-port", type=int, default=2)
    p.add_argument("--dst", nargs="+", default=["10.0.0.9"])
    p.add_argument("--stage1-rate", type=float, default=100.0)
    p.add_argument("--stage1-burst", type=float, default=5.0)
    p.add_argument("--stage2-rate", type=float, default=50.0)
    p.add_argument("--stage2-burst", type=float, default=3.0)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_gen_program)

    p = sub.add_parser("gen-trace", help="emit a deterministic synthetic trace")
    p.add_argument("--kind", choices=("mac-random", "port-knock"),
                   default="mac-random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hosts", type=int, default=8)
    p.add_argument("--packets", type=int, default=100)
    p.add_argument("--ports", type=int, default=4)
    p.add_argument("--host", default="1.2.3.4")
    p.add_argument("--knock-ports", type=int, nargs="+",
                   default=list(programs.KNOCK_SEQUENCE))
    p.add_argument("--open-port", type=int, default=programs.OPEN_PORT)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("hazard", help="pipelined lookup/update hazard model")
    p.add_argument("--ports", type=int, default=4)
    p.add_argument("--latency", type=int, default=hazard.DEFAULT_LATENCY)
    p.add_argument("--schedule", default=None,
                   help="JSON file: port -> [[cycle, flow], ...]")
    p.add_argument("--packets", type=int, default=32,
                   help="back-to-back packets for the built-in schedule")
    p.add_argument("--strict", action="store_true",
                   help="non-work-conserving mixer")
    p.add_argument("--min-safe", action="store_true",
                   help="print the smallest hazard-free port count")
    p.set_defaults(func=_cmd_hazard)

    p = sub.add_parser("send-msg", help="inject raw control messages")
    p.add_argument("program")
    p.add_argument("--hex", action="append", required=True,
                   help="hex-encoded message buffer (repeatable)")
    p.add_argument("--now", type=int, default=0, help="virtual time in us")
    p.add_argument("--dump", action="store_true",
                   help="print the state dump afterwards")
    p.set_defaults(func=_cmd_send_msg)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FlowFsmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
