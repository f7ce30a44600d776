#!/usr/bin/env python3
"""Regenerate the .nqir corpus under tests/corpus/.

Most files are emitted through the builder so they stay in canonical form by
construction; the declaration sheet is written directly.  Run from the repo
root after changing the builder or printer:

    python scripts/generate_corpus.py
"""
from __future__ import annotations

import sys
from math import pi
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from netqir.builder import PrinterExecutor, emit, new_program
from netqir.intrinsics import COMM_INTRINSICS, DATATYPE_INTRINSICS, STATE_INTRINSICS
from netqir.intrinsics import intrinsic_symbol, signature_of
from netqir.topology import qft_text

CORPUS = ROOT / "tests" / "corpus"


def teleport(protocol=None) -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.qsend(q[0], dest=1, comm=world, protocol=protocol)
    with main.rank_conditional(world, 1) as s:
        s.qrecv(src=0, comm=world, protocol=protocol)
    main.finalize()
    return emit(main, PrinterExecutor())


def telegate_cz() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.qsend(q[0], dest=1, comm=world, protocol="telegate")
    with main.rank_conditional(world, 1) as s:
        r = s.qrecv(src=0, comm=world, protocol="telegate")
        s.cz(r, q[0])
    main.finalize()
    return emit(main, PrinterExecutor())


def expose_cp() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
    proxy = main.expose(q[0], 0, world)
    for j, m in ((1, 1), (2, 2)):
        with main.rank_conditional(world, j) as s:
            s.cp(2.0 * pi / 2.0 ** (m + 1), proxy, q[0])
    main.finalize()
    return emit(main, PrinterExecutor())


def expose_array() -> str:
    main, world = new_program()
    a = main.alloc_qubits(2)
    q = main.alloc_qubits(1, hint="t")
    with main.rank_conditional(world, 0) as s:
        s.h(a[0])
        s.h(a[1])
    proxies = main.expose_array(a, 2, 0, world)
    with main.rank_conditional(world, 1) as s:
        s.cz(proxies[0], q[0])
    with main.rank_conditional(world, 2) as s:
        s.cp(pi / 4.0, proxies[1], q[0])
    main.finalize()
    return emit(main, PrinterExecutor())


def scatter_gather(protocol="teledata") -> str:
    main, world = new_program()
    r = main.alloc_qubits(2, hint="r")
    with main.rank_conditional(world, 0) as s:
        buf = s.alloc_qubits(8, hint="s")
        s.scatter(buf, 2, r, 2, 0, world, protocol=protocol)
        s.gather(r, 2, buf, 2, 0, world, protocol=protocol)
    for j in (1, 2, 3):
        with main.rank_conditional(world, j) as s:
            s.scatter(None, 2, r, 2, 0, world, protocol=protocol)
            s.gather(r, 2, None, 2, 0, world, protocol=protocol)
    main.finalize()
    return emit(main, PrinterExecutor())


def collective_generic() -> str:
    main, world = new_program()
    r = main.alloc_qubits(1, hint="r")
    with main.rank_conditional(world, 0) as s:
        buf = s.alloc_qubits(2, hint="s")
        s.h(buf[1])
        s.scatter(buf, 1, r, 1, 0, world)
        s.gather(r, 1, buf, 1, 0, world)
    with main.rank_conditional(world, 1) as s:
        s.scatter(None, 1, r, 1, 0, world)
        s.gather(r, 1, None, 1, 0, world)
    main.finalize()
    return emit(main, PrinterExecutor())


def collective_telegate() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    r = main.alloc_qubits(1, hint="r")
    with main.rank_conditional(world, 0) as s:
        buf = s.alloc_qubits(2, hint="s")
        s.h(buf[0])
        s.h(buf[1])
        s.scatter(buf, 1, r, 1, 0, world, protocol="telegate")
        g = s.alloc_qubits(2, hint="g")
        s.gather(q, 1, g, 1, 0, world, protocol="telegate")
    with main.rank_conditional(world, 1) as s:
        s.scatter(None, 1, r, 1, 0, world, protocol="telegate")
        s.cz(r[0], q[0])
        s.gather(q, 1, None, 1, 0, world, protocol="telegate")
    main.finalize()
    return emit(main, PrinterExecutor())


def reduce_parity(protocol=None, fold=None) -> str:
    main, world = new_program()
    src = main.alloc_qubits(1, hint="src")
    with main.rank_conditional(world, 0) as s:
        s.x(src[0])
        acc = s.alloc_qubits(1, hint="acc")
        s.reduce(src, 1, acc, 1, 0, world, protocol=protocol, fold=fold)
    with main.rank_conditional(world, 1) as s:
        s.x(src[0])
        s.reduce(src, 1, None, 1, 0, world, protocol=protocol, fold=fold)
    with main.rank_conditional(world, 2) as s:
        s.reduce(src, 1, None, 1, 0, world, protocol=protocol, fold=fold)
    main.finalize()
    return emit(main, PrinterExecutor())


def array_protocols() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        a = s.alloc_qubits(2, hint="a")
        s.h(a[0])
        s.qsend_array(a, 2, 1, world, protocol="teledata")
        s.qrecv_array(2, 1, world, protocol="telegate")
    with main.rank_conditional(world, 1) as s:
        ra = s.qrecv_array(2, 0, world, protocol="teledata")
        s.cnot(ra[0], q[0])
        s.qsend_array(ra, 2, 0, world, protocol="telegate")
    main.finalize()
    return emit(main, PrinterExecutor())


def qsend_array_generic() -> str:
    main, world = new_program()
    with main.rank_conditional(world, 0) as s:
        a = s.alloc_qubits(3, hint="a")
        s.h(a[0])
        s.cnot(a[0], a[1])
        s.qsend_array(a, 3, 1, world)
    with main.rank_conditional(world, 1) as s:
        ra = s.qrecv_array(3, 0, world)
        s.measure(ra[2])
    main.finalize()
    return emit(main, PrinterExecutor())


def measure_send() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.measure_send(q[0], 1, world)
    with main.rank_conditional(world, 1) as s:
        s.measure_recv(1, 0, world)
    main.finalize()
    return emit(main, PrinterExecutor())


def measure_send_array() -> str:
    main, world = new_program()
    with main.rank_conditional(world, 0) as s:
        a = s.alloc_qubits(2, hint="a")
        s.x(a[1])
        s.measure_send_array(a, 2, 1, world)
    with main.rank_conditional(world, 1) as s:
        s.measure_recv_array(2, 0, world)
    main.finalize()
    return emit(main, PrinterExecutor())


def groups() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    g = main.group_from_ranks([0, 2])
    sub = main.comm_from_group(g)
    main.comm_size(world)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.qsend(q[0], dest=1, comm=sub, protocol="teledata")
    with main.rank_conditional(world, 2) as s:
        s.qrecv(src=0, comm=sub, protocol="teledata")
    main.finalize()
    return emit(main, PrinterExecutor())


def nested_conditionals() -> str:
    main, world = new_program()
    q = main.alloc_qubits(2)
    with main.rank_conditional(world, 0) as outer:
        outer.h(q[0])
        with outer.rank_conditional(world, 1) as inner:
            inner.x(q[1])
        outer.cz(q[0], q[1])
    with main.rank_conditional(world, 1, with_else=True) as s:
        s.z(q[0])
    main.finalize()
    return emit(main, PrinterExecutor())


def ghz_remote_cnot() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.qsend(q[0], dest=1, comm=world, protocol="telegate")
    with main.rank_conditional(world, 1) as s:
        r = s.qrecv(src=0, comm=world, protocol="telegate")
        s.cnot(r, q[0])
        s.qsend(q[0], dest=2, comm=world, protocol="telegate")
    with main.rank_conditional(world, 2) as s:
        r = s.qrecv(src=1, comm=world, protocol="telegate")
        s.cnot(r, q[0])
    main.finalize()
    return emit(main, PrinterExecutor())


def cp_precision() -> str:
    main, world = new_program()
    q = main.alloc_qubits(2)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.cp(pi / 2.0, q[0], q[1])
        s.cp(0.1234567890123456789, q[1], q[0])
        s.cp(2.0 * pi / 1024.0, q[0], q[1])
        s.measure(q[1])
        s.reset(q[1])
    main.finalize()
    return emit(main, PrinterExecutor())


def deadlock() -> str:
    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.qsend(q[0], dest=1, comm=world, protocol="teledata")
    main.finalize()
    return emit(main, PrinterExecutor())


def all_declarations() -> str:
    lines = ["%Qubit = type opaque", "%Array = type opaque",
             "%Comm = type opaque", "%Group = type opaque", ""]
    for table in (STATE_INTRINSICS, DATATYPE_INTRINSICS, COMM_INTRINSICS):
        for base in table:
            sig = signature_of(intrinsic_symbol(base))
            params = ", ".join(sig.surface_params)
            if sig.variadic_tail is not None:
                params += ", i32, i32"
            lines.append(f"declare {sig.surface_ret} @{intrinsic_symbol(base)}({params})")
    lines += [
        "",
        "define void @main() {",
        "entry:",
        "  call void @__netqir__initialize()",
        "  call void @__netqir__finalize()",
        "  ret void",
        "}",
    ]
    return "\n".join(lines) + "\n"


FILES = {
    "teleport.nqir": lambda: teleport(None),
    "teleport_teledata.nqir": lambda: teleport("teledata"),
    "telegate_cz.nqir": telegate_cz,
    "expose_cp.nqir": expose_cp,
    "expose_array.nqir": expose_array,
    "scatter_gather.nqir": scatter_gather,
    "collective_generic.nqir": collective_generic,
    "collective_telegate.nqir": collective_telegate,
    "reduce_parity.nqir": lambda: reduce_parity(None),
    "reduce_teledata.nqir": lambda: reduce_parity("teledata"),
    "reduce_cz_fold.nqir": lambda: reduce_parity("telegate", fold="cz"),
    "array_protocols.nqir": array_protocols,
    "qsend_array.nqir": qsend_array_generic,
    "measure_send.nqir": measure_send,
    "measure_send_array.nqir": measure_send_array,
    "groups.nqir": groups,
    "nested_conditionals.nqir": nested_conditionals,
    "ghz_remote_cnot.nqir": ghz_remote_cnot,
    "cp_precision.nqir": cp_precision,
    "deadlock.nqir": deadlock,
    "qft3.nqir": lambda: qft_text(2),
    "all_declarations.nqir": all_declarations,
}


def main() -> None:
    CORPUS.mkdir(parents=True, exist_ok=True)
    for name, build in FILES.items():
        path = CORPUS / name
        path.write_text(build())
        print(f"wrote {path.relative_to(ROOT)}")


if __name__ == "__main__":
    main()
