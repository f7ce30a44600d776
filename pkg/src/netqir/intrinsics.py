"""Intrinsic and gate signature tables plus the function-name grammar.

Every `__netqir__*` symbol decomposes as  base [+ `_array`] [+ `_teledata` | `_telegate`];
`classify` performs that decomposition and `intrinsic_name` inverts it.  The
signature table records two views of each function:

* the declared parameter list, where receive-style functions take an out-slot
  (written `Qubit**` / `Array**` / `i1*` in declarations elsewhere), and
* the surface form used by this toolchain's SSA syntax, where out-slots are
  returned values instead of pointer parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .diagnostics import UnknownIntrinsicError

NETQIR_PREFIX = "__netqir__"
QIS_PREFIX = "__quantum__qis__"
RT_PREFIX = "__quantum__rt__"


class SemType(Enum):
    """Semantic parameter/return kinds; `*_OUT` marks a receive out-slot."""

    QUBIT = "Qubit*"
    QUBIT_OUT = "Qubit**"
    ARRAY = "Array*"
    ARRAY_OUT = "Array**"
    COMM = "Comm*"
    GROUP = "Group*"
    BITS = "i1*"
    BITS_OUT = "i1* (out)"
    I1 = "i1"
    I32 = "i32"
    DOUBLE = "double"
    VOID = "void"

    @property
    def is_out(self) -> bool:
        return self in (SemType.QUBIT_OUT, SemType.ARRAY_OUT, SemType.BITS_OUT)

    @property
    def declared_name(self) -> str:
        """Spelling in declared signatures; the bit buffer out-slot is plain `i1*`."""
        return "i1*" if self is SemType.BITS_OUT else self.value


_SURFACE = {
    SemType.QUBIT: "%Qubit*",
    SemType.QUBIT_OUT: "%Qubit*",
    SemType.ARRAY: "%Array*",
    SemType.ARRAY_OUT: "%Array*",
    SemType.COMM: "%Comm*",
    SemType.GROUP: "%Group*",
    SemType.BITS: "i1*",
    SemType.BITS_OUT: "i1*",
    SemType.I1: "i1",
    SemType.I32: "i32",
    SemType.DOUBLE: "double",
    SemType.VOID: "void",
}


def surface_type(t: SemType) -> str:
    return _SURFACE[t]


@dataclass(frozen=True)
class Signature:
    """Declared and surface signature of one function symbol.

    `params` is the declared parameter list including out-slots.  The surface
    view drops out-slot parameters and returns them instead: at most one
    out-slot per signature.
    """

    name: str
    params: tuple[SemType, ...]
    ret: SemType = SemType.VOID
    variadic_tail: SemType | None = None  # repeated trailing params (group_from_ranks)

    @property
    def surface_params(self) -> tuple[str, ...]:
        return tuple(surface_type(p) for p in self.params if not p.is_out)

    @property
    def surface_ret(self) -> str:
        outs = [p for p in self.params if p.is_out]
        if outs:
            return surface_type(outs[0])
        return surface_type(self.ret)

    @property
    def declared(self) -> str:
        """Render the declared view, e.g. ``(Qubit**, i32, Comm*)``."""
        return "(" + ", ".join(p.declared_name for p in self.params) + ")"


def _sig(name: str, *params: SemType, ret: SemType = SemType.VOID,
         variadic_tail: SemType | None = None) -> Signature:
    return Signature(name, params, ret, variadic_tail)


_Q, _A, _C, _G = SemType.QUBIT, SemType.ARRAY, SemType.COMM, SemType.GROUP
_I32, _I1, _D = SemType.I32, SemType.I1, SemType.DOUBLE
_QO, _AO, _BO = SemType.QUBIT_OUT, SemType.ARRAY_OUT, SemType.BITS_OUT

_P2P_ARRAY = (_A, _I32, _I32, _C)          # (array, count, peer, comm)
_COLLECTIVE = (_A, _I32, _A, _I32, _I32, _C)  # (sendbuf, sendcount, recvbuf, recvcount, root, comm)

# Communication functions: point-to-point sends/receives and collectives.
COMM_INTRINSICS: dict[str, Signature] = {
    s.name: s
    for s in [
        _sig("qsend", _Q, _I32, _C),
        _sig("qsend_teledata", _Q, _I32, _C),
        _sig("qsend_telegate", _Q, _I32, _C),
        _sig("qsend_array", *_P2P_ARRAY),
        _sig("qsend_array_teledata", *_P2P_ARRAY),
        _sig("qsend_array_telegate", *_P2P_ARRAY),
        _sig("qrecv", _QO, _I32, _C),
        _sig("qrecv_teledata", _QO, _I32, _C),
        _sig("qrecv_telegate", _QO, _I32, _C),
        _sig("qrecv_array", _AO, _I32, _I32, _C),
        _sig("qrecv_array_teledata", _AO, _I32, _I32, _C),
        _sig("qrecv_array_telegate", _AO, _I32, _I32, _C),
        _sig("measure_send", _Q, _I32, _C),
        _sig("measure_send_array", *_P2P_ARRAY),
        _sig("measure_recv", _BO, _I32, _I32, _C),
        _sig("measure_recv_array", _BO, _I32, _I32, _C),
        _sig("scatter", *_COLLECTIVE),
        _sig("scatter_teledata", *_COLLECTIVE),
        _sig("scatter_telegate", *_COLLECTIVE),
        _sig("gather", *_COLLECTIVE),
        _sig("gather_teledata", *_COLLECTIVE),
        _sig("gather_telegate", *_COLLECTIVE),
        _sig("reduce", *_COLLECTIVE),
        _sig("reduce_teledata", *_COLLECTIVE),
        _sig("reduce_telegate", *_COLLECTIVE),
        _sig("expose", _Q, _I32, _C, ret=_Q),
        _sig("expose_array", _A, _I32, _I32, _C, ret=_A),
    ]
}

# Program-state and datatype functions.
STATE_INTRINSICS: dict[str, Signature] = {
    s.name: s
    for s in [
        _sig("initialize"),
        _sig("finalize"),
    ]
}

DATATYPE_INTRINSICS: dict[str, Signature] = {
    s.name: s
    for s in [
        _sig("comm_rank", _C, ret=_I32),
        _sig("comm_size", _C, ret=_I32),
        _sig("comm_world", ret=_C),
        _sig("group_from_ranks", _I32, ret=_G, variadic_tail=_I32),
        _sig("comm_from_group", _G, ret=_C),
    ]
}

INTRINSICS: dict[str, Signature] = {**COMM_INTRINSICS, **STATE_INTRINSICS, **DATATYPE_INTRINSICS}

# Fixed base gate set (QIR-style `__quantum__qis__<g>__body` symbols).
GATES: dict[str, Signature] = {
    s.name: s
    for s in [
        _sig("h", _Q),
        _sig("x", _Q),
        _sig("z", _Q),
        _sig("cnot", _Q, _Q),
        _sig("cz", _Q, _Q),
        _sig("cp", _D, _Q, _Q),
        _sig("mz", _Q, ret=_I1),
        _sig("reset", _Q),
    ]
}

# Runtime helpers for static allocation and buffer element access.
RT_FUNCS: dict[str, Signature] = {
    s.name: s
    for s in [
        _sig("qubit_allocate_array", _I32, ret=_A),
        _sig("array_get", _A, _I32, ret=_Q),
        _sig("bit_get", SemType.BITS, _I32, ret=_I1),
    ]
}


def signature_of(symbol: str) -> Signature:
    """Signature for a fully qualified symbol (`__netqir__*`, gate or rt helper).

    Raises UnknownIntrinsicError for any name outside the fixed tables.
    """
    if symbol.startswith(NETQIR_PREFIX):
        base = symbol[len(NETQIR_PREFIX):]
        if base in INTRINSICS:
            return INTRINSICS[base]
        raise UnknownIntrinsicError(f"unknown intrinsic '{symbol}'")
    if symbol.startswith(QIS_PREFIX) and symbol.endswith("__body"):
        gate = symbol[len(QIS_PREFIX):-len("__body")]
        if gate in GATES:
            return GATES[gate]
        raise UnknownIntrinsicError(f"unknown gate '{symbol}' (fixed gate set: {sorted(GATES)})")
    if symbol.startswith(RT_PREFIX):
        base = symbol[len(RT_PREFIX):]
        if base in RT_FUNCS:
            return RT_FUNCS[base]
        raise UnknownIntrinsicError(f"unknown runtime function '{symbol}'")
    raise UnknownIntrinsicError(f"unknown intrinsic '{symbol}'")


def is_known_symbol(symbol: str) -> bool:
    try:
        signature_of(symbol)
        return True
    except UnknownIntrinsicError:
        return False


def gate_symbol(gate: str) -> str:
    return f"{QIS_PREFIX}{gate}__body"


def intrinsic_symbol(base: str) -> str:
    return f"{NETQIR_PREFIX}{base}"


# --- function-name grammar ------------------------------------------------

BASES = (
    "qsend", "qrecv", "measure_send", "measure_recv",
    "scatter", "gather", "reduce", "expose",
    "comm_rank", "comm_size", "comm_world", "group_from_ranks", "comm_from_group",
    "initialize", "finalize",
)

PROTOCOL_MODIFIERS = ("teledata", "telegate")


@dataclass(frozen=True)
class IntrinsicClassification:
    """Decomposition of a `__netqir__` symbol per the function-name grammar."""

    base: str
    array_modifier: bool = False
    protocol_modifier: str = "none"  # none | teledata | telegate

    @property
    def name(self) -> str:
        """Reconstruct the full symbol; inverse of `classify`."""
        parts = [NETQIR_PREFIX, self.base]
        if self.array_modifier:
            parts.append("_array")
        if self.protocol_modifier != "none":
            parts.append("_" + self.protocol_modifier)
        return "".join(parts)


def classify(symbol: str) -> IntrinsicClassification:
    """Split a `__netqir__` symbol into base + optional array/protocol modifiers.

    Both modifiers are optional; the array modifier precedes the protocol one.
    Raises UnknownIntrinsicError when the result is not a declared intrinsic.
    """
    if not symbol.startswith(NETQIR_PREFIX):
        raise UnknownIntrinsicError(f"not a netqir symbol: '{symbol}'")
    rest = symbol[len(NETQIR_PREFIX):]

    protocol = "none"
    for p in PROTOCOL_MODIFIERS:
        if rest.endswith("_" + p):
            protocol = p
            rest = rest[: -len("_" + p)]
            break

    array = False
    if rest.endswith("_array"):
        array = True
        rest = rest[: -len("_array")]

    cls = IntrinsicClassification(rest, array, protocol)
    if rest not in BASES or cls.name != symbol or cls.name[len(NETQIR_PREFIX):] not in INTRINSICS:
        raise UnknownIntrinsicError(f"unknown intrinsic '{symbol}'")
    return cls
