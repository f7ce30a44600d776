"""Command-line entry point wiring the toolchain together.

Subcommands: parse, validate, lower, analyze, simulate, curves.
Exit status: 0 success, 1 diagnostics, 2 usage error, 3 runtime error
(deadlock, capacity).  NETQIR_QUBIT_CAP overrides the simulator qubit cap.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import (
    CapacityError,
    DeadlockError,
    LoweringError,
    Severity,
    SimulationError,
)
from .ir import Protocol, validate
from .lowering import lower
from .parser import parse_module
from .printer import print_program
from .simulator import simulate
from .topology import (
    CURVE_COLUMNS,
    Topology,
    TopologyKind,
    analyze_qft,
    curves_to_csv,
    curves_to_json,
    emit_curves,
)

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

_PROTOCOLS = {
    "auto": Protocol.UNSPECIFIED,
    "teledata": Protocol.TELEDATA,
    "telegate": Protocol.TELEGATE,
    "expose": Protocol.EXPOSE,
}
_TOPOLOGIES = {
    "direct": TopologyKind.DIRECT,
    "communicator": TopologyKind.COMMUNICATOR,
}


@dataclass
class RunConfig:
    subcommand: str
    input: str | None = None
    topology: str = "direct"
    protocol: str = "auto"
    n_qpus: int = 2
    seed: int = 0
    fmt: str = "text"
    output: str | None = None
    circuit: str | None = None
    full_state: bool = False
    min_qpus: int = 2
    max_qpus: int = 11


def _write(config: RunConfig, text: str) -> None:
    if config.output:
        Path(config.output).write_text(text)
    else:
        sys.stdout.write(text)


def _load_program(config: RunConfig):
    path = Path(config.input)
    if not path.exists():
        print(f"error: no such file: {path}", file=sys.stderr)
        return None, EXIT_USAGE
    program, diags = parse_module(path.read_text())
    if program is not None:
        diags = diags + validate(program)
    errors = [d for d in diags if d.severity is Severity.ERROR]
    for d in diags:
        print(str(d), file=sys.stderr)
    if program is None or errors:
        return None, EXIT_DIAGNOSTICS
    return program, EXIT_OK


def run(config: RunConfig) -> int:
    """Execute one subcommand; returns the process exit status."""
    if config.subcommand in ("parse", "validate"):
        program, status = _load_program(config)
        if status != EXIT_OK:
            return status
        if config.subcommand == "parse":
            _write(config, print_program(program))
        else:
            print("ok: no diagnostics", file=sys.stderr)
        return EXIT_OK

    if config.subcommand == "analyze":
        if config.circuit != "qft":
            print("error: analyze supports --circuit qft", file=sys.stderr)
            return EXIT_USAGE
        if config.protocol == "auto":
            print("error: analyze needs an explicit protocol", file=sys.stderr)
            return EXIT_USAGE
        if config.n_qpus < 2:
            print("error: analyze needs --qpus >= 2", file=sys.stderr)
            return EXIT_USAGE
        report = analyze_qft(config.n_qpus, _PROTOCOLS[config.protocol],
                             _TOPOLOGIES[config.topology])
        row = {
            "protocol": config.protocol,
            "topology": config.topology,
            "n_qpus": config.n_qpus,
            "consumed": report.consumed,
            "needed_per_qpu": report.needed_per_qpu,
            "syncs": report.syncs,
        }
        if config.fmt == "csv":
            _write(config, curves_to_csv([row]))
        elif config.fmt == "json":
            _write(config, json.dumps(row, indent=2) + "\n")
        else:
            _write(config, " ".join(f"{c}={row[c]}" for c in CURVE_COLUMNS) + "\n")
        return EXIT_OK

    if config.subcommand == "curves":
        if config.protocol != "auto":
            print("error: curves always sweeps every protocol", file=sys.stderr)
            return EXIT_USAGE
        rows = emit_curves(n_range=(config.min_qpus, config.max_qpus))
        text = curves_to_json(rows) if config.fmt == "json" else curves_to_csv(rows)
        _write(config, text)
        return EXIT_OK

    # lower / simulate
    program, status = _load_program(config)
    if status != EXIT_OK:
        return status
    topology = Topology(_TOPOLOGIES[config.topology], config.n_qpus)
    try:
        lowered = lower(program, topology, _PROTOCOLS[config.protocol])
    except LoweringError as exc:
        where = f"{exc.loc}: " if exc.loc else ""
        print(f"{where}error: [{exc.rule}] {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    for w in lowered.warnings:
        print(str(w), file=sys.stderr)

    if config.subcommand == "lower":
        _write(config, lowered.serialize())
        return EXIT_OK

    try:
        result = simulate(lowered, seed=config.seed)
    except DeadlockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CapacityError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    lines = list(result.transcript)
    lines.append("final state:")
    order = result.logical_order()
    for logical in order:
        slot = result.layout[logical]
        if slot in result.state.released:
            lines.append(f"  logical {logical} -> {slot}  released = "
                         f"{result.state.released[slot]}")
        else:
            lines.append(f"  logical {logical} -> {slot}  "
                         f"P(1) = {result.state.probability_one(slot):.9f}")
    for slot in sorted(result.state.released):
        if slot not in result.layout.values():
            lines.append(f"  released {slot} = {result.state.released[slot]}")
    if config.full_state:
        vec = result.logical_vector()
        lines.append(f"amplitudes over [{', '.join(str(q) for q in order)}]:")
        for i, amp in enumerate(vec):
            if abs(amp) > 1e-12:
                lines.append(f"  |{i:0{len(order)}b}>  {amp.real:+.12f}{amp.imag:+.12f}j")
    _write(config, "\n".join(lines) + "\n")
    return EXIT_OK


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netqir",
                                 description="NetQIR toolchain: parse, validate, lower, "
                                             "analyze, simulate.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def add_common(p, with_input=True):
        if with_input:
            p.add_argument("input", help="input .nqir module")
        p.add_argument("-o", "--output", help="write output to a file instead of stdout")

    p = sub.add_parser("parse", help="parse and print the canonical form")
    add_common(p)
    p = sub.add_parser("validate", help="run all validation rules")
    add_common(p)

    p = sub.add_parser("lower", help="lower to per-rank primitive ops")
    add_common(p)
    p.add_argument("--qpus", type=int, default=2)
    p.add_argument("--topology", choices=sorted(_TOPOLOGIES), default="direct")
    p.add_argument("--protocol", choices=sorted(_PROTOCOLS), default="auto")

    p = sub.add_parser("analyze", help="communication-cost analysis")
    p.add_argument("--circuit", required=True, choices=["qft"])
    p.add_argument("--qpus", type=int, required=True)
    p.add_argument("--protocol", choices=sorted(_PROTOCOLS), required=True)
    p.add_argument("--topology", choices=sorted(_TOPOLOGIES), default="direct")
    p.add_argument("--format", dest="fmt", choices=["text", "csv", "json"], default="text")
    p.add_argument("-o", "--output")

    p = sub.add_parser("simulate", help="lower and run the multi-QPU simulator")
    add_common(p)
    p.add_argument("--qpus", type=int, default=2)
    p.add_argument("--topology", choices=sorted(_TOPOLOGIES), default="direct")
    p.add_argument("--protocol", choices=sorted(_PROTOCOLS), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full-state", action="store_true")

    p = sub.add_parser("curves", help="emit the full cost-curve sweep")
    p.add_argument("--min-qpus", type=int, default=2)
    p.add_argument("--max-qpus", type=int, default=11)
    p.add_argument("--format", dest="fmt", choices=["csv", "json"], default="csv")
    p.add_argument("-o", "--output")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    config = RunConfig(
        subcommand=args.subcommand,
        input=getattr(args, "input", None),
        topology=getattr(args, "topology", "direct"),
        protocol=getattr(args, "protocol", "auto"),
        n_qpus=getattr(args, "qpus", 2),
        seed=getattr(args, "seed", 0),
        fmt=getattr(args, "fmt", "text"),
        output=getattr(args, "output", None),
        circuit=getattr(args, "circuit", None),
        full_state=getattr(args, "full_state", False),
        min_qpus=getattr(args, "min_qpus", 2),
        max_qpus=getattr(args, "max_qpus", 11),
    )
    try:
        return run(config)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
