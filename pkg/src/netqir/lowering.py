"""Protocol lowering: compile a validated program into per-rank primitive ops.

Pipeline:

1. *Trace* — execute the entry function once per rank with concrete rank and
   communicator values, folding branches; the result is a linear event list
   per rank.  Branching on measurement results is rejected (rank-divergent
   quantum control flow has no static lowering).
2. *Match* — pair each send with its receive (FIFO per endpoint pair), group
   collectives and exposes by communicator call order, resolve protocols
   (explicit suffix > caller default > usage analysis), and reject protocol
   mismatches.
3. *Expand* — replace every matched directive with its primitive expansion:
   teleportation for teledata, cat-entangler/cat-disentangler for telegate,
   a GHZ share for expose.  Under the star topology point-to-point traffic
   hops through the relay node, which gets its own op stream.

Telegate and expose treat the transferred qubit as a shared control
reference: the receiving side may only use it as CZ/CP operand or CNOT
control, and the disentangler is emitted after the last such use.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .diagnostics import Diagnostic, LoweringError, SourceLoc, warning
from .intrinsics import NETQIR_PREFIX, QIS_PREFIX, RT_PREFIX, classify
from .ir import (
    BinOp,
    Br,
    Call,
    CommHandle,
    GroupHandle,
    ICmp,
    Program,
    Protocol,
    Ref,
    Ret,
    comm_from_group,
    comm_world,
    group_from_ranks,
    netqir_base,
)
from .primitives import (
    RELAY,
    AllocEpr,
    AllocGhz,
    CondCorrection,
    CRecv,
    CSend,
    LocalGate,
    LoweredProgram,
    Measure,
    Qubit,
    Reset,
    SyncPoint,
)
from .topology import Topology, TopologyKind

_STEP_CAP = 200_000
_CALL_DEPTH_CAP = 64


# --- virtual values ---------------------------------------------------------


@dataclass(frozen=True)
class VQubit:
    rank: int
    vid: int


class VArray:
    __slots__ = ("rank", "elements")

    def __init__(self, rank: int, elements: list[VQubit]):
        self.rank = rank
        self.elements = elements


@dataclass(frozen=True)
class _ElemRef:
    """Pointer into an array slot; receive buffers are overwritten in place,
    so element reads resolve at use time, not at array_get time."""

    arr: VArray
    idx: int


@dataclass(frozen=True)
class VBits:
    rank: int
    vid: int
    count: int


@dataclass(frozen=True)
class BitSym:
    """Opaque runtime bit (measurement result); cannot steer control flow."""

    rank: int
    vid: int


# --- trace events -------------------------------------------------------------


@dataclass
class EvGate:
    gate: str
    qubits: tuple[VQubit, ...]
    param: float | None = None
    loc: SourceLoc | None = None


@dataclass
class EvMeasure:
    qubit: VQubit
    loc: SourceLoc | None = None


@dataclass
class EvReset:
    qubit: VQubit
    loc: SourceLoc | None = None


@dataclass
class EvSend:
    quantum: bool
    qubits: tuple[VQubit, ...]
    dest: int                       # absolute rank
    protocol: Protocol
    array: bool
    loc: SourceLoc | None = None


@dataclass
class EvRecv:
    quantum: bool
    count: int
    src: int                        # absolute rank
    protocol: Protocol
    outs: tuple[VQubit, ...] = ()
    bits: VBits | None = None
    array: bool = False
    loc: SourceLoc | None = None


@dataclass
class EvCollective:
    base: str                       # scatter | gather | reduce
    members: tuple[int, ...]
    root: int                       # absolute rank
    send: tuple[VQubit, ...] | None
    recv: tuple[VQubit, ...] | None
    sendcount: int
    recvcount: int
    protocol: Protocol
    fold: str | None = None
    loc: SourceLoc | None = None


@dataclass
class EvExpose:
    members: tuple[int, ...]
    root: int                       # absolute rank
    exposed: tuple[VQubit, ...]     # root only
    proxies: tuple[VQubit, ...]     # this rank's proxy handles
    loc: SourceLoc | None = None


@dataclass
class RankTrace:
    rank: int
    events: list = field(default_factory=list)
    data_vqs: list[VQubit] = field(default_factory=list)


# --- phase 1: trace ----------------------------------------------------------


class _Tracer:
    def __init__(self, program: Program, rank: int, n_ranks: int):
        self.program = program
        self.rank = rank
        self.n_ranks = n_ranks
        self.trace = RankTrace(rank)
        self.vids = itertools.count()
        self.consumed: set[VQubit] = set()
        self.steps = 0
        self.world = comm_world(n_ranks)
        self.groups = itertools.count()

    def run(self) -> RankTrace:
        entry = self.program.entry_function
        if entry is None:
            raise LoweringError("entry-missing", "program has no entry function")
        self._exec_function(entry, {}, depth=0)
        return self.trace

    # -- interpreter ---------------------------------------------------------

    def _exec_function(self, func, env: dict, depth: int) -> None:
        if depth > _CALL_DEPTH_CAP:
            raise LoweringError("call-depth", f"call depth over {_CALL_DEPTH_CAP} at rank {self.rank}")
        blocks = {b.label: b for b in func.blocks}
        label = func.blocks[0].label
        while True:
            for ins in blocks[label].instructions:
                self.steps += 1
                if self.steps > _STEP_CAP:
                    raise LoweringError("step-cap", f"rank {self.rank} exceeded {_STEP_CAP} steps")
                if isinstance(ins, Ret):
                    return
                if isinstance(ins, Br):
                    if ins.cond is None:
                        label = ins.then_label
                    else:
                        value = self._int(env, ins.cond, ins.loc)
                        label = ins.then_label if value else ins.else_label
                    break
                if isinstance(ins, ICmp):
                    lhs = self._int(env, ins.lhs, ins.loc)
                    rhs = self._int(env, ins.rhs, ins.loc)
                    env[ins.result] = {"eq": lhs == rhs, "ne": lhs != rhs, "slt": lhs < rhs}[ins.op]
                elif isinstance(ins, BinOp):
                    lhs = self._int(env, ins.lhs, ins.loc)
                    rhs = self._int(env, ins.rhs, ins.loc)
                    env[ins.result] = lhs + rhs if ins.op == "add" else lhs - rhs
                elif isinstance(ins, Call):
                    value = self._exec_call(ins, env, depth)
                    if ins.result is not None:
                        env[ins.result] = value
            else:
                raise LoweringError("block-unterminated", f"block %{label} fell through")

    def _int(self, env: dict, value, loc) -> int:
        v = env[value.name] if isinstance(value, Ref) else value
        if isinstance(v, BitSym):
            raise LoweringError(
                "measurement-branch",
                "control flow depending on a measurement result is not lowerable", loc)
        if isinstance(v, bool):
            return int(v)
        if not isinstance(v, int):
            raise LoweringError("non-integer", f"expected integer value, got {v!r}", loc)
        return v

    def _arg(self, env: dict, arg):
        if isinstance(arg.value, Ref):
            return env[arg.value.name]
        return arg.value

    def _fresh_qubit(self) -> VQubit:
        return VQubit(self.rank, next(self.vids))

    def _use(self, vq: VQubit, loc, what: str = "qubit") -> None:
        if vq in self.consumed:
            raise LoweringError(
                "use-after-send",
                f"rank {self.rank} uses a {what} that already departed (reset it first)", loc)

    # -- call dispatch ----------------------------------------------------------

    def _exec_call(self, ins: Call, env: dict, depth: int):
        callee = ins.callee
        args = [self._arg(env, a) for a in ins.args]
        if callee.startswith(RT_PREFIX):
            return self._exec_rt(callee[len(RT_PREFIX):], args, ins.loc)
        if callee.startswith(QIS_PREFIX):
            return self._exec_gate(callee[len(QIS_PREFIX):-len("__body")], args, ins.loc)
        if callee.startswith(NETQIR_PREFIX):
            return self._exec_intrinsic(ins, args)
        target = self.program.function(callee)
        if target is None or target.is_declaration:
            raise LoweringError("undeclared-symbol", f"call to undefined @{callee}", ins.loc)
        inner = {name: value for (_, name), value in zip(target.params, args)}
        self._exec_function(target, inner, depth + 1)
        return None

    def _exec_rt(self, base: str, args: list, loc):
        if base == "qubit_allocate_array":
            count = self._literal_int(args[0], loc)
            qubits = [self._fresh_qubit() for _ in range(count)]
            self.trace.data_vqs.extend(qubits)
            return VArray(self.rank, qubits)
        if base == "array_get":
            arr, idx = args
            idx = self._literal_int(idx, loc)
            if not isinstance(arr, VArray):
                raise LoweringError("bad-operand", "array_get expects an array", loc)
            if not 0 <= idx < len(arr.elements):
                raise LoweringError("index-range",
                                    f"array index {idx} out of range [0, {len(arr.elements)})", loc)
            return _ElemRef(arr, idx)
        if base == "bit_get":
            bits, idx = args
            idx = self._literal_int(idx, loc)
            if not isinstance(bits, VBits) or not 0 <= idx < bits.count:
                raise LoweringError("index-range", "bit_get index out of range", loc)
            return BitSym(self.rank, next(self.vids))
        raise LoweringError("unknown-intrinsic", f"unknown runtime function {base}", loc)

    def _literal_int(self, value, loc) -> int:
        if isinstance(value, bool):
            return int(value)
        if isinstance(value, BitSym):
            raise LoweringError("measurement-branch",
                                "measurement results cannot size allocations", loc)
        if not isinstance(value, int):
            raise LoweringError("non-integer", f"expected integer, got {value!r}", loc)
        return value

    def _exec_gate(self, gate: str, args: list, loc):
        if gate == "cp":
            param, qubits = float(args[0]), args[1:]
        else:
            param, qubits = None, args
        qubits = [self._qubit(q, loc) for q in qubits]
        if gate != "reset":  # reset is the sanctioned way to reclaim a sent qubit
            for q in qubits:
                self._use(q, loc)
        if len(set(qubits)) != len(qubits):
            raise LoweringError("bad-operand", f"gate {gate} applied to duplicate qubits", loc)
        if gate == "mz":
            self.trace.events.append(EvMeasure(qubits[0], loc))
            return BitSym(self.rank, next(self.vids))
        if gate == "reset":
            self.consumed.discard(qubits[0])
            self.trace.events.append(EvReset(qubits[0], loc))
            return None
        self.trace.events.append(EvGate(gate, tuple(qubits), param, loc))
        return None

    # -- intrinsics -----------------------------------------------------------

    def _comm(self, value, loc) -> CommHandle:
        if not isinstance(value, CommHandle):
            raise LoweringError("bad-operand", "expected a communicator", loc)
        return value

    def _abs_rank(self, comm: CommHandle, rel, loc, what: str) -> int:
        rel = self._literal_int(rel, loc)
        if not 0 <= rel < len(comm.members):
            raise LoweringError(
                "rank-range",
                f"{what} {rel} out of range for communicator of size {len(comm.members)}", loc)
        return comm.members[rel]

    def _exec_intrinsic(self, ins: Call, args: list):
        base = netqir_base(ins.callee)
        loc = ins.loc
        if base in ("initialize", "finalize"):
            return None
        if base == "comm_world":
            return self.world
        if base == "comm_rank":
            comm = self._comm(args[0], loc)
            if self.rank not in comm.members:
                raise LoweringError("not-a-member",
                                    f"rank {self.rank} is not in communicator '{comm.id}'", loc)
            return comm.members.index(self.rank)
        if base == "comm_size":
            return len(self._comm(args[0], loc).members)
        if base == "group_from_ranks":
            count = self._literal_int(args[0], loc)
            ranks = [self._literal_int(a, loc) for a in args[1:]]
            if count != len(ranks):
                raise LoweringError("group-count", "rank count does not match arguments", loc)
            try:
                return group_from_ranks(ranks, self.n_ranks, f"g{next(self.groups)}")
            except ValueError as exc:
                raise LoweringError("group-invalid", str(exc), loc) from None
        if base == "comm_from_group":
            if not isinstance(args[0], GroupHandle):
                raise LoweringError("bad-operand", "expected a group", loc)
            return comm_from_group(args[0])

        cls = classify(ins.callee)
        protocol = {"none": Protocol.UNSPECIFIED,
                    "teledata": Protocol.TELEDATA,
                    "telegate": Protocol.TELEGATE}[cls.protocol_modifier]

        if cls.base == "qsend":
            if cls.array_modifier:
                arr, count, dest, comm = args
                qubits = self._chunk(arr, self._literal_int(count, loc), loc)
            else:
                q, dest, comm = args
                qubits = [self._qubit(q, loc)]
            comm = self._comm(comm, loc)
            dest_abs = self._abs_rank(comm, dest, loc, "destination")
            if dest_abs == self.rank:
                raise LoweringError("self-send", "qsend to own rank", loc)
            for q in qubits:
                self._use(q, loc)
                self.consumed.add(q)
            self.trace.events.append(EvSend(True, tuple(qubits), dest_abs, protocol,
                                            cls.array_modifier, loc))
            return None
        if cls.base == "qrecv":
            if cls.array_modifier:
                count, src, comm = args
                count = self._literal_int(count, loc)
            else:
                src, comm = args
                count = 1
            comm = self._comm(comm, loc)
            src_abs = self._abs_rank(comm, src, loc, "source")
            outs = tuple(self._fresh_qubit() for _ in range(count))
            self.trace.events.append(EvRecv(True, count, src_abs, protocol,
                                            outs=outs, array=cls.array_modifier, loc=loc))
            return VArray(self.rank, list(outs)) if cls.array_modifier else outs[0]
        if cls.base == "measure_send":
            if cls.array_modifier:
                arr, count, dest, comm = args
                qubits = self._chunk(arr, self._literal_int(count, loc), loc)
            else:
                q, dest, comm = args
                qubits = [self._qubit(q, loc)]
            comm = self._comm(comm, loc)
            dest_abs = self._abs_rank(comm, dest, loc, "destination")
            if dest_abs == self.rank:
                raise LoweringError("self-send", "measure_send to own rank", loc)
            for q in qubits:
                self._use(q, loc)
            self.trace.events.append(EvSend(False, tuple(qubits), dest_abs,
                                            Protocol.UNSPECIFIED, cls.array_modifier, loc))
            return None
        if cls.base == "measure_recv":
            count, src, comm = args
            count = self._literal_int(count, loc)
            comm = self._comm(comm, loc)
            src_abs = self._abs_rank(comm, src, loc, "source")
            bits = VBits(self.rank, next(self.vids), count)
            self.trace.events.append(EvRecv(False, count, src_abs, Protocol.UNSPECIFIED,
                                            bits=bits, array=cls.array_modifier, loc=loc))
            return bits
        if cls.base in ("scatter", "gather", "reduce"):
            sendbuf, sendcount, recvbuf, recvcount, root, comm = args
            comm = self._comm(comm, loc)
            root_abs = self._abs_rank(comm, root, loc, "root")
            sendcount = self._literal_int(sendcount, loc)
            recvcount = self._literal_int(recvcount, loc)
            return self._exec_buffer_collective(
                cls.base, comm, root_abs, sendbuf, sendcount, recvbuf, recvcount,
                protocol, ins.fold, loc)
        if cls.base == "expose":
            if cls.array_modifier:
                arr, count, root, comm = args
                count = self._literal_int(count, loc)
            else:
                q, root, comm = args
                count = 1
            comm = self._comm(comm, loc)
            root_abs = self._abs_rank(comm, root, loc, "root")
            if self.rank == root_abs:
                if cls.array_modifier:
                    exposed = tuple(self._chunk(arr, count, loc))
                else:
                    exposed = (self._qubit(q, loc),)
                for vq in exposed:
                    self._use(vq, loc, "exposed qubit")
                    self.consumed.add(vq)
                proxies = exposed
            else:
                exposed = ()
                proxies = tuple(self._fresh_qubit() for _ in range(count))
            self.trace.events.append(
                EvExpose(comm.members, root_abs, exposed, proxies, loc))
            if cls.array_modifier:
                return VArray(self.rank, list(proxies))
            return proxies[0]
        raise LoweringError("unknown-intrinsic", f"cannot lower @{ins.callee}", loc)

    def _exec_buffer_collective(self, base, comm, root_abs, sendbuf, sendcount,
                                recvbuf, recvcount, protocol, fold, loc):
        is_root = self.rank == root_abs
        send_vqs = None
        recv_vqs = None
        if base == "scatter":
            if is_root:
                send_vqs = tuple(self._chunk(sendbuf, sendcount * len(comm.members), loc,
                                             exact=True))
            if not isinstance(recvbuf, VArray):
                raise LoweringError("bad-operand", f"{base} needs a receive buffer", loc)
            recv_vqs = self._rebind(recvbuf, recvcount, loc)
        elif base == "gather":
            send_vqs = tuple(self._chunk(sendbuf, sendcount, loc))
            if is_root:
                if not isinstance(recvbuf, VArray):
                    raise LoweringError("bad-operand", "gather root needs a receive buffer", loc)
                recv_vqs = self._rebind(recvbuf, recvcount * len(comm.members), loc, exact=True)
        else:  # reduce
            send_vqs = tuple(self._chunk(sendbuf, sendcount, loc))
            if is_root:
                if not isinstance(recvbuf, VArray):
                    raise LoweringError("bad-operand", "reduce root needs an accumulator buffer",
                                        loc)
                recv_vqs = tuple(self._chunk(recvbuf, recvcount, loc))
        if send_vqs:
            for vq in send_vqs:
                self._use(vq, loc)
                self.consumed.add(vq)
        self.trace.events.append(
            EvCollective(base, comm.members, root_abs, send_vqs, recv_vqs,
                         sendcount, recvcount, protocol, fold, loc))
        return None

    def _qubit(self, value, loc) -> VQubit:
        if isinstance(value, _ElemRef):
            value = value.arr.elements[value.idx]
        if not isinstance(value, VQubit):
            raise LoweringError("bad-operand", "expected a qubit value", loc)
        return value

    def _chunk(self, arr, count: int, loc, exact: bool = False) -> list[VQubit]:
        if not isinstance(arr, VArray):
            raise LoweringError("bad-operand", "expected a qubit array", loc)
        if count < 0 or count > len(arr.elements) or (exact and count != len(arr.elements)):
            raise LoweringError(
                "indivisible-count",
                f"buffer of {len(arr.elements)} qubit(s) cannot supply {count}", loc)
        return arr.elements[:count]

    def _rebind(self, arr: VArray, count: int, loc, exact: bool = False) -> tuple[VQubit, ...]:
        """Receive buffers are overwritten: rebind their elements to fresh ids."""
        if count < 0 or count > len(arr.elements) or (exact and count != len(arr.elements)):
            raise LoweringError(
                "indivisible-count",
                f"receive buffer of {len(arr.elements)} qubit(s) cannot hold {count}", loc)
        fresh = [self._fresh_qubit() for _ in range(count)]
        for i, vq in enumerate(fresh):
            self.consumed.discard(arr.elements[i])
            arr.elements[i] = vq
        return tuple(fresh)


# --- phase 2: match ------------------------------------------------------------


@dataclass
class _Half:
    rank: int
    idx: int
    ev: "EvSend | EvRecv"


@dataclass
class _P2PMatch:
    quantum: bool
    array: bool
    send: _Half | None
    recv: _Half | None
    protocol: Protocol
    count: int
    last_use: int = -1              # receiver event index of last proxy use (telegate)


@dataclass
class _GroupMatch:
    kind: str                       # scatter | gather | reduce | expose
    members: tuple[int, ...]
    root: int
    events: dict                    # rank -> (idx, event)
    protocol: Protocol
    fold: str | None = None
    count: int = 1
    active_remotes: tuple[int, ...] = ()
    last_use: dict = field(default_factory=dict)   # rank -> event idx


_COMPATIBLE_FOLDS = ("cnot", "cz")


class _Matcher:
    def __init__(self, traces: dict[int, RankTrace], default_protocol: Protocol):
        self.traces = traces
        self.default = default_protocol
        self.matches: list = []
        self.warnings: list[Diagnostic] = []

    def run(self) -> tuple[list, list[Diagnostic]]:
        open_sends: dict[tuple, list[_Half]] = {}
        open_recvs: dict[tuple, list[_Half]] = {}
        slots: dict[tuple[int, ...], list[dict]] = {}
        ordinals: dict[tuple[int, tuple[int, ...]], int] = {}

        for rank in sorted(self.traces):
            for idx, ev in enumerate(self.traces[rank].events):
                if isinstance(ev, EvSend):
                    key = (rank, ev.dest, ev.quantum)
                    rkey = (rank, ev.dest, ev.quantum)
                    queue = open_recvs.get(rkey)
                    if queue:
                        self._pair(_Half(rank, idx, ev), queue.pop(0))
                    else:
                        open_sends.setdefault(key, []).append(_Half(rank, idx, ev))
                elif isinstance(ev, EvRecv):
                    key = (ev.src, rank, ev.quantum)
                    queue = open_sends.get(key)
                    if queue:
                        self._pair(queue.pop(0), _Half(rank, idx, ev))
                    else:
                        open_recvs.setdefault(key, []).append(_Half(rank, idx, ev))
                elif isinstance(ev, (EvCollective, EvExpose)):
                    members = ev.members
                    if rank not in members:
                        raise LoweringError(
                            "not-a-member",
                            f"rank {rank} joined a collective on a communicator "
                            f"it is not a member of", ev.loc)
                    okey = (rank, members)
                    ordinal = ordinals.get(okey, 0)
                    ordinals[okey] = ordinal + 1
                    group_list = slots.setdefault(members, [])
                    while len(group_list) <= ordinal:
                        group_list.append({})
                    group_list[ordinal][rank] = (idx, ev)
                    if len(group_list[ordinal]) == len(members):
                        self._complete_group(members, group_list[ordinal])

        for members, group_list in sorted(slots.items()):
            for slot in group_list:
                if len(slot) != len(members):
                    missing = sorted(set(members) - set(slot))
                    some_rank, (_, ev) = sorted(slot.items())[0]
                    raise LoweringError(
                        "unmatched-collective",
                        f"collective over ranks {list(members)} never reached "
                        f"rank(s) {missing}", ev.loc)
        for queue in open_sends.values():
            for half in queue:
                self.warnings.append(warning(
                    "unmatched-endpoint",
                    f"send from rank {half.rank} to rank {half.ev.dest} has no matching "
                    f"receive on any path", half.ev.loc))
                self.matches.append(self._lenient(half, None))
        for queue in open_recvs.values():
            for half in queue:
                self.warnings.append(warning(
                    "unmatched-endpoint",
                    f"receive at rank {half.rank} from rank {half.ev.src} has no matching "
                    f"send on any path", half.ev.loc))
                self.matches.append(self._lenient(None, half))
        return self.matches, self.warnings

    # -- point-to-point -------------------------------------------------------

    def _pair(self, send: _Half, recv: _Half) -> None:
        sev, rev = send.ev, recv.ev
        if sev.quantum != rev.quantum or sev.array != rev.array:
            raise LoweringError(
                "kind-mismatch",
                f"send from rank {send.rank} and receive at rank {recv.rank} disagree "
                f"on payload kind", rev.loc)
        if len(sev.qubits) != rev.count:
            raise LoweringError(
                "count-mismatch",
                f"send of {len(sev.qubits)} qubit(s) paired with receive of {rev.count}",
                rev.loc)
        if not sev.quantum:
            self.matches.append(_P2PMatch(False, sev.array, send, recv,
                                          Protocol.UNSPECIFIED, rev.count))
            return
        protocol = self._resolve_p2p(sev, rev, recv)
        match = _P2PMatch(True, sev.array, send, recv, protocol, rev.count)
        if protocol is Protocol.TELEGATE:
            used, compatible, last = _proxy_usage(
                self.traces[recv.rank], recv.idx, set(rev.outs))
            explicit = Protocol.TELEGATE in (sev.protocol, rev.protocol)
            if not compatible:
                raise LoweringError(
                    "telegate-incompatible",
                    "telegate shares a control reference: the received qubit may only be "
                    "used as CZ/CP operand or CNOT control", rev.loc)
            match.last_use = last
        self.matches.append(match)

    def _resolve_p2p(self, sev: EvSend, rev: EvRecv, recv: _Half) -> Protocol:
        stated = {p for p in (sev.protocol, rev.protocol) if p is not Protocol.UNSPECIFIED}
        if len(stated) > 1:
            raise LoweringError(
                "protocol-mismatch",
                f"send specifies {sev.protocol.value} but receive specifies "
                f"{rev.protocol.value}; mismatched protocols are rejected", rev.loc)
        if stated:
            return stated.pop()
        if self.default in (Protocol.TELEDATA, Protocol.TELEGATE):
            return self.default
        used, compatible, _ = _proxy_usage(self.traces[recv.rank], recv.idx, set(rev.outs))
        return Protocol.TELEGATE if compatible else Protocol.TELEDATA

    def _lenient(self, send: _Half | None, recv: _Half | None) -> _P2PMatch:
        half = send or recv
        ev = half.ev
        protocol = ev.protocol
        if protocol is Protocol.UNSPECIFIED:
            protocol = self.default if self.default in (Protocol.TELEDATA, Protocol.TELEGATE) \
                else Protocol.TELEDATA
        count = len(ev.qubits) if isinstance(ev, EvSend) else ev.count
        quantum = ev.quantum
        return _P2PMatch(quantum, ev.array, send, recv, protocol, count)

    # -- collectives ------------------------------------------------------------

    def _complete_group(self, members: tuple[int, ...], slot: dict) -> None:
        events = list(slot.values())
        kinds = {type(ev).__name__ for _, ev in events}
        if len(kinds) != 1:
            some = sorted(slot.items())[0][1][1]
            raise LoweringError(
                "collective-mismatch",
                f"ranks call different collectives at the same point on "
                f"communicator {list(members)}", some.loc)
        first = events[0][1]
        if isinstance(first, EvExpose):
            self._complete_expose(members, slot)
            return
        base = {ev.base for _, ev in events}
        roots = {ev.root for _, ev in events}
        if len(base) != 1 or len(roots) != 1:
            raise LoweringError(
                "collective-mismatch",
                f"collective on {list(members)} disagrees on kind or root", first.loc)
        base, root = base.pop(), roots.pop()
        sendcounts = {ev.sendcount for _, ev in events}
        recvcounts = {ev.recvcount for _, ev in events}
        if len(sendcounts) != 1 or len(recvcounts) != 1 or sendcounts != recvcounts:
            raise LoweringError(
                "count-mismatch",
                f"{base} counts disagree across ranks or send/recv counts differ",
                first.loc)
        stated = {ev.protocol for _, ev in events if ev.protocol is not Protocol.UNSPECIFIED}
        if len(stated) > 1:
            raise LoweringError(
                "protocol-mismatch",
                f"{base} members specify conflicting protocols", first.loc)
        if stated:
            protocol = stated.pop()
        elif self.default in (Protocol.TELEDATA, Protocol.TELEGATE):
            protocol = self.default
        else:
            protocol = Protocol.TELEGATE if base == "reduce" else Protocol.TELEDATA
        fold = None
        if base == "reduce":
            folds = {ev.fold for _, ev in events if ev.fold is not None}
            if len(folds) > 1:
                raise LoweringError("fold-mismatch",
                                    "reduce members specify different fold gates", first.loc)
            fold = folds.pop() if folds else "cnot"
            if fold not in _COMPATIBLE_FOLDS:
                raise LoweringError(
                    "fold-invalid",
                    f"reduce fold gate must be one of {_COMPATIBLE_FOLDS}, got {fold!r}",
                    first.loc)
        match = _GroupMatch(base, members, root, dict(slot), protocol, fold,
                            count=sendcounts.pop())
        if protocol is Protocol.TELEGATE:
            self._telegate_group_usage(match)
        self.matches.append(match)

    def _telegate_group_usage(self, match: _GroupMatch) -> None:
        """Receive-side buffers under telegate are shared references; record
        last uses and enforce controlled-use only."""
        watch: dict[int, set[VQubit]] = {}
        if match.kind == "scatter":
            for rank, (idx, ev) in match.events.items():
                watch[rank] = set(ev.recv or ())
        elif match.kind == "gather":
            root_idx, root_ev = match.events[match.root]
            watch[match.root] = set(root_ev.recv or ())
        else:  # reduce folds at root are generated ops; nothing user-visible
            return
        for rank, proxies in watch.items():
            if not proxies:
                continue
            idx = match.events[rank][0]
            used, compatible, last = _proxy_usage(self.traces[rank], idx, proxies)
            if not compatible:
                raise LoweringError(
                    "telegate-incompatible",
                    f"{match.kind}_telegate delivers control references: they may only be "
                    f"used as CZ/CP operand or CNOT control", match.events[rank][1].loc)
            match.last_use[rank] = last

    def _complete_expose(self, members: tuple[int, ...], slot: dict) -> None:
        events = list(slot.values())
        roots = {ev.root for _, ev in events}
        counts = {len(ev.proxies) for _, ev in events}
        if len(roots) != 1 or len(counts) != 1:
            first = events[0][1]
            raise LoweringError(
                "collective-mismatch",
                f"expose on {list(members)} disagrees on root or width", first.loc)
        root = roots.pop()
        match = _GroupMatch("expose", members, root, dict(slot),
                            self.default if self.default in
                            (Protocol.TELEDATA, Protocol.TELEGATE) else Protocol.EXPOSE,
                            count=counts.pop())
        active = []
        for rank in members:
            if rank == root:
                continue
            idx, ev = match.events[rank]
            used, compatible, last = _proxy_usage(self.traces[rank], idx, set(ev.proxies))
            if used and not compatible:
                raise LoweringError(
                    "expose-incompatible",
                    "an exposed qubit is a shared reference: remote ranks may only use it "
                    "as CZ/CP operand or CNOT control", ev.loc)
            if used:
                active.append(rank)
                match.last_use[rank] = last
        match.active_remotes = tuple(active)
        self.matches.append(match)


def _proxy_usage(trace: RankTrace, start_idx: int, proxies: set) -> tuple[bool, bool, int]:
    """(used, controlled-use-only, last use index) for proxies after start_idx."""
    used = False
    compatible = True
    last = start_idx
    for idx in range(start_idx + 1, len(trace.events)):
        ev = trace.events[idx]
        refs = _event_qubits(ev) & proxies
        if not refs:
            continue
        used = True
        last = idx
        ok = (isinstance(ev, EvGate)
              and (ev.gate in ("cz", "cp")
                   or (ev.gate == "cnot" and ev.qubits[0] in proxies
                       and ev.qubits[1] not in proxies)))
        if not ok:
            compatible = False
    return used, compatible, last


def _event_qubits(ev) -> set:
    if isinstance(ev, EvGate):
        return set(ev.qubits)
    if isinstance(ev, (EvMeasure, EvReset)):
        return {ev.qubit}
    if isinstance(ev, EvSend):
        return set(ev.qubits)
    if isinstance(ev, EvCollective):
        return set(ev.send or ()) | set(ev.recv or ())
    if isinstance(ev, EvExpose):
        return set(ev.exposed)
    return set()


# --- phase 3: expand -----------------------------------------------------------


class _Expander:
    def __init__(self, traces: dict[int, RankTrace], matches: list, topology: Topology):
        self.traces = traces
        self.matches = matches
        self.topology = topology
        self.star = topology.kind is TopologyKind.COMMUNICATOR
        self.n_ranks = topology.qpus
        self.streams: dict = {r: [] for r in range(self.n_ranks)}
        if self.star:
            self.streams[RELAY] = []
        self.at: dict[tuple[int, int], list] = {}
        self.after: dict[tuple[int, int], list] = {}
        self.end: dict[int, list] = {r: [] for r in range(self.n_ranks)}
        self.next_slot: dict = {r: len(traces[r].data_vqs) for r in traces}
        self.next_slot[RELAY] = 0
        self.bit_counts: dict = {}
        self.epr_ids = itertools.count()
        self.ghz_ids = itertools.count()
        self.sync_ids = itertools.count()
        self.vq_phys: dict[VQubit, Qubit] = {}
        self.logical_of: dict[VQubit, Qubit] = {}
        self.layout: dict[Qubit, Qubit] = {}
        for rank, trace in traces.items():
            for i, vq in enumerate(trace.data_vqs):
                slot = Qubit(rank, i)
                self.vq_phys[vq] = slot
                self.logical_of[vq] = slot
                self.layout[slot] = slot

    # -- small helpers ---------------------------------------------------------

    def _comm_slot(self, rank) -> Qubit:
        slot = Qubit(rank, self.next_slot[rank])
        self.next_slot[rank] += 1
        return slot

    def _bit(self, rank) -> str:
        n = self.bit_counts.get(rank, 0)
        self.bit_counts[rank] = n + 1
        return f"m{n}"

    def _sync(self) -> int:
        return next(self.sync_ids)

    def _resolve(self, vq: VQubit, loc=None) -> Qubit:
        slot = self.vq_phys.get(vq)
        if slot is None:
            raise LoweringError("unbound-qubit",
                                "qubit value was never delivered (unmatched receive?)", loc)
        return slot

    def _bind(self, vq: VQubit, slot: Qubit) -> None:
        self.vq_phys[vq] = slot

    def _move_logical(self, src_vq: VQubit, land_vq: VQubit | None, land_slot: Qubit) -> None:
        logical = self.logical_of.pop(src_vq, None)
        if logical is None:
            return
        self.layout[logical] = land_slot
        if land_vq is not None:
            self.logical_of[land_vq] = logical

    def _anchor(self, rank: int, idx: int) -> list:
        return self.at.setdefault((rank, idx), [])

    def _after(self, rank: int, idx: int) -> list:
        return self.after.setdefault((rank, idx), [])

    def _path(self, src, dst) -> list:
        return [src, RELAY, dst] if self.star else [src, dst]

    # -- protocol building blocks ------------------------------------------------

    def _teleport_hop(self, src_rank, dst_rank, src_slots: list[Qubit],
                      src_ops: list, dst_ops: list) -> list[Qubit]:
        """One teleportation hop for a batch of qubits; one classical round."""
        e1s, e2s = [], []
        for _ in src_slots:
            e1, e2 = self._comm_slot(src_rank), self._comm_slot(dst_rank)
            e1s.append(e1)
            e2s.append(e2)
            alloc = AllocEpr(next(self.epr_ids), e1, e2)
            src_ops.append(alloc)
            dst_ops.append(alloc)
        sent_bits: list[str] = []
        for q, e1 in zip(src_slots, e1s):
            src_ops.append(LocalGate("cnot", (q, e1)))
            src_ops.append(LocalGate("h", (q,)))
            m_a, m_e = self._bit(src_rank), self._bit(src_rank)
            src_ops.append(Measure(q, m_a))
            src_ops.append(Measure(e1, m_e))
            sent_bits += [m_e, m_a]
        sync = self._sync()
        src_ops.append(CSend(tuple(sent_bits), dst_rank, sync))
        src_ops.append(SyncPoint(sync))
        for q in src_slots:
            src_ops.append(Reset(q))
        rbits = tuple(self._bit(dst_rank) for _ in range(2 * len(src_slots)))
        dst_ops.append(CRecv(len(rbits), src_rank, rbits, sync))
        dst_ops.append(SyncPoint(sync))
        for i, e2 in enumerate(e2s):
            dst_ops.append(CondCorrection("x", e2, rbits[2 * i]))
            dst_ops.append(CondCorrection("z", e2, rbits[2 * i + 1]))
        return e2s

    def _route_teledata(self, src_rank, dst_rank, src_slots: list[Qubit],
                        sinks: dict) -> list[Qubit]:
        """Teleport along the topology path; `sinks` maps rank -> op list."""
        path = self._path(src_rank, dst_rank)
        slots = src_slots
        for a, b in zip(path, path[1:]):
            slots = self._teleport_hop(a, b, slots, sinks[a], sinks[b])
        return slots

    def _cat_open(self, src_rank, dst_rank, ctrl_slots: list[Qubit],
                  src_ops: list, dst_ops: list) -> list[Qubit]:
        """Cat-entangler for a batch of control qubits; returns shares at dst."""
        e1s, e2s = [], []
        for _ in ctrl_slots:
            e1, e2 = self._comm_slot(src_rank), self._comm_slot(dst_rank)
            e1s.append(e1)
            e2s.append(e2)
            alloc = AllocEpr(next(self.epr_ids), e1, e2)
            src_ops.append(alloc)
            dst_ops.append(alloc)
        sent = []
        for q, e1 in zip(ctrl_slots, e1s):
            src_ops.append(LocalGate("cnot", (q, e1)))
            m1 = self._bit(src_rank)
            src_ops.append(Measure(e1, m1))
            sent.append(m1)
        sync = self._sync()
        src_ops.append(CSend(tuple(sent), dst_rank, sync))
        src_ops.append(SyncPoint(sync))
        rbits = tuple(self._bit(dst_rank) for _ in ctrl_slots)
        dst_ops.append(CRecv(len(rbits), src_rank, rbits, sync))
        dst_ops.append(SyncPoint(sync))
        for e2, b in zip(e2s, rbits):
            dst_ops.append(CondCorrection("x", e2, b))
        return e2s

    def _cat_close(self, holder_rank, back_rank, shares: list[Qubit],
                   targets: list[Qubit], holder_ops: list, back_ops: list) -> None:
        """Cat-disentangler: measure shares in X basis, Z-correct upstream."""
        sent = []
        for share in shares:
            holder_ops.append(LocalGate("h", (share,)))
            m2 = self._bit(holder_rank)
            holder_ops.append(Measure(share, m2))
            sent.append(m2)
        sync = self._sync()
        holder_ops.append(CSend(tuple(sent), back_rank, sync))
        holder_ops.append(SyncPoint(sync))
        rbits = tuple(self._bit(back_rank) for _ in shares)
        back_ops.append(CRecv(len(rbits), holder_rank, rbits, sync))
        back_ops.append(SyncPoint(sync))
        for target, b in zip(targets, rbits):
            back_ops.append(CondCorrection("z", target, b))

    def _cat_chain_open(self, src_rank, dst_rank, ctrl_slots: list[Qubit],
                        sinks: dict) -> tuple[list[Qubit], list]:
        path = self._path(src_rank, dst_rank)
        record = []
        slots = ctrl_slots
        for a, b in zip(path, path[1:]):
            shares = self._cat_open(a, b, slots, sinks[a], sinks[b])
            record.append((a, b, slots, shares))
            slots = shares
        return slots, record

    def _cat_chain_close(self, record: list, close_sinks: dict) -> None:
        for a, b, upstream, shares in reversed(record):
            self._cat_close(b, a, shares, upstream, close_sinks[b], close_sinks[a])

    # -- match planning -------------------------------------------------------------

    def plan(self) -> None:
        for match in self.matches:
            if isinstance(match, _P2PMatch):
                if match.send is None or match.recv is None:
                    self._plan_lenient(match)
                elif not match.quantum:
                    self._plan_measure_send(match)
                elif match.protocol is Protocol.TELEGATE:
                    self._plan_p2p_telegate(match)
                else:
                    self._plan_p2p_teledata(match)
            elif match.kind == "expose":
                self._plan_expose(match)
            elif match.kind == "scatter":
                self._plan_scatter(match)
            elif match.kind == "gather":
                self._plan_gather(match)
            else:
                self._plan_reduce(match)

    def _plan_measure_send(self, match: _P2PMatch) -> None:
        send, recv = match.send, match.recv
        src_ops = self._anchor(send.rank, send.idx)
        dst_ops = self._anchor(recv.rank, recv.idx)
        bits = []
        for vq in send.ev.qubits:
            b = self._bit(send.rank)
            src_ops.append(Measure(self._resolve(vq, send.ev.loc), b))
            bits.append(b)
        sync = self._sync()
        src_ops.append(CSend(tuple(bits), recv.rank, sync))
        src_ops.append(SyncPoint(sync))
        rbits = tuple(self._bit(recv.rank) for _ in bits)
        dst_ops.append(CRecv(len(rbits), send.rank, rbits, sync))
        dst_ops.append(SyncPoint(sync))

    def _plan_p2p_teledata(self, match: _P2PMatch) -> None:
        send, recv = match.send, match.recv
        src_slots = [self._resolve(vq, send.ev.loc) for vq in send.ev.qubits]
        sinks = {send.rank: self._anchor(send.rank, send.idx),
                 recv.rank: self._anchor(recv.rank, recv.idx)}
        if self.star:
            sinks[RELAY] = self.streams[RELAY]
        landing = self._route_teledata(send.rank, recv.rank, src_slots, sinks)
        for src_vq, out_vq, slot in zip(send.ev.qubits, recv.ev.outs, landing):
            self._bind(out_vq, slot)
            self._move_logical(src_vq, out_vq, slot)

    def _plan_p2p_telegate(self, match: _P2PMatch) -> None:
        send, recv = match.send, match.recv
        ctrls = [self._resolve(vq, send.ev.loc) for vq in send.ev.qubits]
        open_sinks = {send.rank: self._anchor(send.rank, send.idx),
                      recv.rank: self._anchor(recv.rank, recv.idx)}
        if self.star:
            open_sinks[RELAY] = self.streams[RELAY]
        shares, record = self._cat_chain_open(send.rank, recv.rank, ctrls, open_sinks)
        for out_vq, slot in zip(recv.ev.outs, shares):
            self._bind(out_vq, slot)
        close_sinks = {send.rank: self.end[send.rank],
                       recv.rank: self._after(recv.rank, match.last_use)}
        if self.star:
            close_sinks[RELAY] = self.streams[RELAY]
        self._cat_chain_close(record, close_sinks)

    def _plan_lenient(self, match: _P2PMatch) -> None:
        """Unmatched endpoint: emit the present half so simulation can exhibit
        the blocking behaviour (deadlock detection)."""
        if match.send is not None:
            send = match.send
            ops = self._anchor(send.rank, send.idx)
            if not match.quantum:
                bits = []
                for vq in send.ev.qubits:
                    b = self._bit(send.rank)
                    ops.append(Measure(self._resolve(vq, send.ev.loc), b))
                    bits.append(b)
                sync = self._sync()
                ops.append(CSend(tuple(bits), send.ev.dest, sync))
                ops.append(SyncPoint(sync))
            elif match.protocol is Protocol.TELEGATE:
                slots = [self._resolve(vq, send.ev.loc) for vq in send.ev.qubits]
                self._cat_open(send.rank, send.ev.dest, slots, ops, [])
            else:
                slots = [self._resolve(vq, send.ev.loc) for vq in send.ev.qubits]
                self._teleport_hop(send.rank, send.ev.dest, slots, ops, [])
        else:
            recv = match.recv
            ops = self._anchor(recv.rank, recv.idx)
            per_qubit = 1 if match.protocol is Protocol.TELEGATE else 2
            count = match.count * per_qubit if match.quantum else match.count
            sync = self._sync()
            rbits = tuple(self._bit(recv.rank) for _ in range(count))
            ops.append(CRecv(count, recv.ev.src, rbits, sync))
            ops.append(SyncPoint(sync))
            for vq in recv.ev.outs:
                self._bind(vq, self._comm_slot(recv.rank))

    # -- collectives ---------------------------------------------------------------

    def _plan_scatter(self, match: _GroupMatch) -> None:
        root = match.root
        count = match.count
        root_idx, root_ev = match.events[root]
        send_vqs = root_ev.send
        for mi, member in enumerate(match.members):
            chunk_vqs = send_vqs[mi * count:(mi + 1) * count]
            chunk_slots = [self._resolve(vq, root_ev.loc) for vq in chunk_vqs]
            _, member_ev = match.events[member]
            out_vqs = member_ev.recv
            if member == root:
                for src_vq, out_vq, slot in zip(chunk_vqs, out_vqs, chunk_slots):
                    self._bind(out_vq, slot)
                    self._move_logical(src_vq, out_vq, slot)
                continue
            midx = match.events[member][0]
            if match.protocol is Protocol.TELEGATE:
                sinks = {root: self._anchor(root, root_idx),
                         member: self._anchor(member, midx)}
                if self.star:
                    sinks[RELAY] = self.streams[RELAY]
                shares, record = self._cat_chain_open(root, member, chunk_slots, sinks)
                for out_vq, slot in zip(out_vqs, shares):
                    self._bind(out_vq, slot)
                close_sinks = {root: self.end[root],
                               member: self._after(member,
                                                   match.last_use.get(member, midx))}
                if self.star:
                    close_sinks[RELAY] = self.streams[RELAY]
                self._cat_chain_close(record, close_sinks)
            else:
                sinks = {root: self._anchor(root, root_idx),
                         member: self._anchor(member, midx)}
                if self.star:
                    sinks[RELAY] = self.streams[RELAY]
                landing = self._route_teledata(root, member, chunk_slots, sinks)
                for src_vq, out_vq, slot in zip(chunk_vqs, out_vqs, landing):
                    self._bind(out_vq, slot)
                    self._move_logical(src_vq, out_vq, slot)

    def _plan_gather(self, match: _GroupMatch) -> None:
        root = match.root
        count = match.count
        root_idx, root_ev = match.events[root]
        recv_vqs = root_ev.recv
        for mi, member in enumerate(match.members):
            out_vqs = recv_vqs[mi * count:(mi + 1) * count]
            midx, member_ev = match.events[member]
            chunk_vqs = member_ev.send
            chunk_slots = [self._resolve(vq, member_ev.loc) for vq in chunk_vqs]
            if member == root:
                for src_vq, out_vq, slot in zip(chunk_vqs, out_vqs, chunk_slots):
                    self._bind(out_vq, slot)
                    self._move_logical(src_vq, out_vq, slot)
                continue
            if match.protocol is Protocol.TELEGATE:
                sinks = {member: self._anchor(member, midx),
                         root: self._anchor(root, root_idx)}
                if self.star:
                    sinks[RELAY] = self.streams[RELAY]
                shares, record = self._cat_chain_open(member, root, chunk_slots, sinks)
                for out_vq, slot in zip(out_vqs, shares):
                    self._bind(out_vq, slot)
                close_sinks = {member: self.end[member],
                               root: self._after(root, match.last_use.get(root, root_idx))}
                if self.star:
                    close_sinks[RELAY] = self.streams[RELAY]
                self._cat_chain_close(record, close_sinks)
            else:
                sinks = {member: self._anchor(member, midx),
                         root: self._anchor(root, root_idx)}
                if self.star:
                    sinks[RELAY] = self.streams[RELAY]
                landing = self._route_teledata(member, root, chunk_slots, sinks)
                for src_vq, out_vq, slot in zip(chunk_vqs, out_vqs, landing):
                    self._bind(out_vq, slot)
                    self._move_logical(src_vq, out_vq, slot)

    def _plan_reduce(self, match: _GroupMatch) -> None:
        root = match.root
        root_idx, root_ev = match.events[root]
        acc_slots = [self._resolve(vq, root_ev.loc) for vq in root_ev.recv]
        root_ops = self._anchor(root, root_idx)
        for member in match.members:
            midx, member_ev = match.events[member]
            src_slots = [self._resolve(vq, member_ev.loc) for vq in member_ev.send]
            if member == root:
                for src, acc in zip(src_slots, acc_slots):
                    root_ops.append(LocalGate(match.fold, (src, acc)))
                continue
            if match.protocol is Protocol.TELEGATE:
                sinks = {member: self._anchor(member, midx), root: root_ops}
                if self.star:
                    sinks[RELAY] = self.streams[RELAY]
                shares, record = self._cat_chain_open(member, root, src_slots, sinks)
                for share, acc in zip(shares, acc_slots):
                    root_ops.append(LocalGate(match.fold, (share, acc)))
                close_sinks = {member: self._anchor(member, midx), root: root_ops}
                if self.star:
                    close_sinks[RELAY] = self.streams[RELAY]
                self._cat_chain_close(record, close_sinks)
            else:
                sinks = {member: self._anchor(member, midx), root: root_ops}
                if self.star:
                    sinks[RELAY] = self.streams[RELAY]
                landing = self._route_teledata(member, root, src_slots, sinks)
                for vq, slot in zip(member_ev.send, landing):
                    self._move_logical(vq, None, slot)
                for land, acc in zip(landing, acc_slots):
                    root_ops.append(LocalGate(match.fold, (land, acc)))

    # -- expose ---------------------------------------------------------------------

    def _plan_expose(self, match: _GroupMatch) -> None:
        if not match.active_remotes:
            return  # no remote uses the reference: a no-op
        root_idx, root_ev = match.events[match.root]
        if match.protocol is Protocol.TELEDATA:
            self._plan_expose_teledata(match)
        elif match.protocol is Protocol.TELEGATE:
            self._plan_expose_telegate(match)
        else:
            self._plan_expose_ghz(match)

    def _plan_expose_ghz(self, match: _GroupMatch) -> None:
        root = match.root
        remotes = list(match.active_remotes)
        k = len(remotes)
        root_idx, root_ev = match.events[root]
        root_ops = self._anchor(root, root_idx)
        psi_slots = [self._resolve(vq, root_ev.loc) for vq in root_ev.exposed]

        # one GHZ per exposed qubit; under the star topology the relay
        # distributes the shares, charged per the published cost model
        share_of: dict[int, list[Qubit]] = {j: [] for j in remotes}
        root_bits = []
        ghz_allocs = []
        for psi in psi_slots:
            g_root = self._comm_slot(root)
            g_remote = [self._comm_slot(j) for j in remotes]
            for j, g in zip(remotes, g_remote):
                share_of[j].append(g)
            if self.star:
                charges = (0,) * (k + 1) if k == 1 else (0,) + (2,) * k
            else:
                charges = (1,) * (k + 1)
            alloc = AllocGhz(next(self.ghz_ids), (g_root, *g_remote), charges)
            ghz_allocs.append(alloc)
            root_ops.append(alloc)
            root_ops.append(LocalGate("cnot", (psi, g_root)))
            m = self._bit(root)
            root_ops.append(Measure(g_root, m))
            root_bits.append(m)
        broadcast = self._sync()
        for j in remotes:
            root_ops.append(CSend(tuple(root_bits), j, broadcast))
        root_ops.append(SyncPoint(broadcast))

        collect = self._sync()
        for j in remotes:
            jdx, jev = match.events[j]
            j_ops = self._anchor(j, jdx)
            j_ops.extend(ghz_allocs)
            rbits = tuple(self._bit(j) for _ in psi_slots)
            j_ops.append(CRecv(len(rbits), root, rbits, broadcast))
            j_ops.append(SyncPoint(broadcast))
            for share, b in zip(share_of[j], rbits):
                j_ops.append(CondCorrection("x", share, b))
            for proxy_vq, share in zip(jev.proxies, share_of[j]):
                self._bind(proxy_vq, share)
            close_ops = self._after(j, match.last_use[j])
            sent = []
            for share in share_of[j]:
                close_ops.append(LocalGate("h", (share,)))
                mj = self._bit(j)
                close_ops.append(Measure(share, mj))
                sent.append(mj)
            close_ops.append(CSend(tuple(sent), root, collect))
            close_ops.append(SyncPoint(collect))

        for j in remotes:
            rbits = tuple(self._bit(root) for _ in psi_slots)
            root_ops.append(CRecv(len(rbits), j, rbits, collect))
            for psi, b in zip(psi_slots, rbits):
                root_ops.append(CondCorrection("z", psi, b))
        root_ops.append(SyncPoint(collect))

    def _plan_expose_teledata(self, match: _GroupMatch) -> None:
        root = match.root
        remotes = list(match.active_remotes)
        root_idx, root_ev = match.events[root]
        root_ops = self._anchor(root, root_idx)
        slots = [self._resolve(vq, root_ev.loc) for vq in root_ev.exposed]

        hub, hub_ops = root, root_ops
        if self.star:
            slots = self._teleport_hop(root, RELAY, slots, root_ops, self.streams[RELAY])
            hub, hub_ops = RELAY, self.streams[RELAY]
        for j in remotes:
            jdx, jev = match.events[j]
            j_ops = self._anchor(j, jdx)
            landing = self._teleport_hop(hub, j, slots, hub_ops, j_ops)
            for proxy_vq, slot in zip(jev.proxies, landing):
                self._bind(proxy_vq, slot)
            back_ops = self._after(j, match.last_use[j])
            slots = self._teleport_hop(j, hub, landing, back_ops, hub_ops)
        if self.star:
            slots = self._teleport_hop(RELAY, root, slots, self.streams[RELAY], root_ops)
        for vq, slot in zip(root_ev.exposed, slots):
            self._move_logical(vq, None, slot)

    def _plan_expose_telegate(self, match: _GroupMatch) -> None:
        root = match.root
        remotes = list(match.active_remotes)
        root_idx, root_ev = match.events[root]
        root_ops = self._anchor(root, root_idx)
        psi_slots = [self._resolve(vq, root_ev.loc) for vq in root_ev.exposed]

        if self.star:
            relay_ops = self.streams[RELAY]
            hub_shares = self._cat_open(root, RELAY, psi_slots, root_ops, relay_ops)
            for j in remotes:
                jdx, jev = match.events[j]
                j_ops = self._anchor(j, jdx)
                shares = self._cat_open(RELAY, j, hub_shares, relay_ops, j_ops)
                for proxy_vq, slot in zip(jev.proxies, shares):
                    self._bind(proxy_vq, slot)
                close_ops = self._after(j, match.last_use[j])
                self._cat_close(j, RELAY, shares, hub_shares, close_ops, relay_ops)
            self._cat_close(RELAY, root, hub_shares, psi_slots, relay_ops, root_ops)
        else:
            for j in remotes:
                jdx, jev = match.events[j]
                j_ops = self._anchor(j, jdx)
                shares = self._cat_open(root, j, psi_slots, root_ops, j_ops)
                for proxy_vq, slot in zip(jev.proxies, shares):
                    self._bind(proxy_vq, slot)
                close_ops = self._after(j, match.last_use[j])
                self._cat_close(j, root, shares, psi_slots, close_ops, root_ops)

    # -- emission ----------------------------------------------------------------

    def emit(self) -> dict:
        for rank in sorted(self.traces):
            stream = self.streams[rank]
            for idx, ev in enumerate(self.traces[rank].events):
                key = (rank, idx)
                if key in self.at:
                    stream.extend(self.at[key])
                elif isinstance(ev, EvGate):
                    qubits = tuple(self._resolve(q, ev.loc) for q in ev.qubits)
                    stream.append(LocalGate(ev.gate, qubits, ev.param))
                elif isinstance(ev, EvMeasure):
                    stream.append(Measure(self._resolve(ev.qubit, ev.loc), self._bit(rank)))
                elif isinstance(ev, EvReset):
                    stream.append(Reset(self._resolve(ev.qubit, ev.loc)))
                elif isinstance(ev, (EvSend, EvRecv, EvCollective, EvExpose)):
                    pass  # fully handled by a plan (or an inactive expose)
                if key in self.after:
                    stream.extend(self.after[key])
            stream.extend(self.end[rank])
        return self.streams


# --- top level ----------------------------------------------------------------


def lower(program: Program, topology: Topology,
          default_protocol: Protocol = Protocol.UNSPECIFIED) -> LoweredProgram:
    """Compile a validated program into per-rank primitive programs.

    `default_protocol` applies where the program itself does not choose:
    explicit intrinsic suffixes always win; unsuffixed point-to-point pairs
    fall back to it, then to usage analysis; expose directives use it to pick
    the teledata/telegate realization instead of the GHZ one.
    """
    from .ir import validate

    diags = validate(program)
    if any(d.severity.value == "error" for d in diags):
        from .diagnostics import ValidationError

        raise ValidationError(diags)

    traces = {r: _Tracer(program, r, topology.qpus).run() for r in range(topology.qpus)}
    matches, warnings_ = _Matcher(traces, default_protocol).run()
    expander = _Expander(traces, matches, topology)
    expander.plan()
    streams = expander.emit()
    return LoweredProgram(
        n_ranks=topology.qpus,
        topology=topology.kind.value,
        ops=streams,
        data_qubits={r: len(traces[r].data_vqs) for r in sorted(traces)},
        layout=dict(expander.layout),
        warnings=warnings_,
    )
