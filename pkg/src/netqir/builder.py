"""Programmatic construction of programs: operations grouped in scopes,
consumed by executors.

Typical flow::

    main, world = new_program()
    q = main.alloc_qubits(1)
    with main.rank_conditional(world, 0) as s:
        s.h(q[0])
        s.qsend(q[0], dest=1, comm=world)
    with main.rank_conditional(world, 1) as s:
        s.qrecv(src=0, comm=world)
    main.finalize()
    text = emit(main, PrinterExecutor())

Emission inserts `__netqir__initialize` first, declares every referenced
symbol, and renders rank conditionals as `icmp eq` + `br` on a value produced
by `__netqir__comm_rank`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .diagnostics import BuildError
from .intrinsics import gate_symbol, intrinsic_symbol, signature_of
from .ir import Block, Br, Call, Function, ICmp, Program, Ref, Ret, TypedArg
from .printer import print_program

# --- value handles -----------------------------------------------------------


class Handle:
    """A to-be-SSA value produced by one operation."""

    __slots__ = ("hint",)

    def __init__(self, hint: str):
        self.hint = hint


class CommValue(Handle):
    pass


class GroupValue(Handle):
    pass


class IntValue(Handle):
    pass


class BitValue(Handle):
    pass


class BitsValue(Handle):
    pass


class QubitValue(Handle):
    pass


class ArrayValue(Handle):
    def __init__(self, hint: str, count: int):
        super().__init__(hint)
        self.count = count
        self.elements = [QubitValue(f"{hint}{i}") for i in range(count)]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> QubitValue:
        return self.elements[i]


# --- operations ----------------------------------------------------------------


@dataclass
class GateOp:
    gate: str
    qubits: tuple[QubitValue, ...]
    param: float | None = None
    result: BitValue | None = None   # mz only
    kind = "quantum"


@dataclass
class AllocOp:
    array: ArrayValue
    kind = "quantum"


@dataclass
class IntrinsicOp:
    """Any `__netqir__` call; `args` are already in surface order."""

    symbol: str
    args: tuple
    result: Handle | None = None
    fold: str | None = None
    kind = "intrinsic"


@dataclass
class RankCondOp:
    rank_value_of: "CommValue"
    value: int
    then_scope: "Scope"
    else_scope: "Scope | None" = None
    kind = "rank-conditional"


@dataclass
class Scope:
    """Ordered operation list; scopes form a tree rooted at the main scope."""

    parent: "Scope | None" = None
    operations: list = field(default_factory=list)
    _root: "ProgramUnderConstruction | None" = None

    @property
    def root(self) -> "ProgramUnderConstruction":
        scope = self
        while scope.parent is not None:
            scope = scope.parent
        assert scope._root is not None
        return scope._root

    # -- structured control flow -------------------------------------------

    def rank_conditional(self, comm: CommValue, rank_value: int,
                         with_else: bool = False) -> "Scope":
        if rank_value < 0:
            raise BuildError("rank value must be >= 0")
        rank = self.root.rank_value(self, comm)
        child = Scope(parent=self)
        other = Scope(parent=self) if with_else else None
        self.operations.append(RankCondOp(rank, rank_value, child, other))
        return child

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    # -- quantum instructions ------------------------------------------------

    def alloc_qubits(self, count: int, hint: str = "q") -> ArrayValue:
        if count < 0:
            raise BuildError("qubit count must be >= 0")
        arr = ArrayValue(self.root.fresh_hint(hint), count)
        self.operations.append(AllocOp(arr))
        return arr

    def _gate(self, gate: str, *qubits: QubitValue, param: float | None = None):
        self.operations.append(GateOp(gate, qubits, param))

    def h(self, q: QubitValue) -> None:
        self._gate("h", q)

    def x(self, q: QubitValue) -> None:
        self._gate("x", q)

    def z(self, q: QubitValue) -> None:
        self._gate("z", q)

    def cnot(self, control: QubitValue, target: QubitValue) -> None:
        self._gate("cnot", control, target)

    def cz(self, a: QubitValue, b: QubitValue) -> None:
        self._gate("cz", a, b)

    def cp(self, theta: float, a: QubitValue, b: QubitValue) -> None:
        self._gate("cp", a, b, param=float(theta))

    def measure(self, q: QubitValue) -> BitValue:
        out = BitValue(self.root.fresh_hint("m"))
        self.operations.append(GateOp("mz", (q,), result=out))
        return out

    def reset(self, q: QubitValue) -> None:
        self._gate("reset", q)

    # -- communication intrinsics ---------------------------------------------

    @staticmethod
    def _suffix(base: str, protocol: str | None) -> str:
        if protocol in (None, "none", "unspecified"):
            return base
        if protocol not in ("teledata", "telegate"):
            raise BuildError(f"unknown protocol suffix {protocol!r}")
        return f"{base}_{protocol}"

    def qsend(self, q: QubitValue, dest: int, comm: CommValue,
              protocol: str | None = None) -> None:
        sym = intrinsic_symbol(self._suffix("qsend", protocol))
        self.operations.append(IntrinsicOp(sym, (q, dest, comm)))

    def qrecv(self, src: int, comm: CommValue, protocol: str | None = None) -> QubitValue:
        out = QubitValue(self.root.fresh_hint("r"))
        sym = intrinsic_symbol(self._suffix("qrecv", protocol))
        self.operations.append(IntrinsicOp(sym, (src, comm), result=out))
        return out

    def qsend_array(self, arr: ArrayValue, count: int, dest: int, comm: CommValue,
                    protocol: str | None = None) -> None:
        sym = intrinsic_symbol(self._suffix("qsend_array", protocol))
        self.operations.append(IntrinsicOp(sym, (arr, count, dest, comm)))

    def qrecv_array(self, count: int, src: int, comm: CommValue,
                    protocol: str | None = None) -> ArrayValue:
        out = ArrayValue(self.root.fresh_hint("ra"), count)
        sym = intrinsic_symbol(self._suffix("qrecv_array", protocol))
        self.operations.append(IntrinsicOp(sym, (count, src, comm), result=out))
        return out

    def measure_send(self, q: QubitValue, dest: int, comm: CommValue) -> None:
        self.operations.append(IntrinsicOp(intrinsic_symbol("measure_send"), (q, dest, comm)))

    def measure_send_array(self, arr: ArrayValue, count: int, dest: int, comm: CommValue) -> None:
        self.operations.append(
            IntrinsicOp(intrinsic_symbol("measure_send_array"), (arr, count, dest, comm)))

    def measure_recv(self, count: int, src: int, comm: CommValue) -> BitsValue:
        out = BitsValue(self.root.fresh_hint("bits"))
        self.operations.append(
            IntrinsicOp(intrinsic_symbol("measure_recv"), (count, src, comm), result=out))
        return out

    def measure_recv_array(self, count: int, src: int, comm: CommValue) -> BitsValue:
        out = BitsValue(self.root.fresh_hint("bits"))
        self.operations.append(
            IntrinsicOp(intrinsic_symbol("measure_recv_array"), (count, src, comm), result=out))
        return out

    def scatter(self, sendbuf: ArrayValue | None, sendcount: int,
                recvbuf: ArrayValue | None, recvcount: int, root: int, comm: CommValue,
                protocol: str | None = None) -> None:
        sym = intrinsic_symbol(self._suffix("scatter", protocol))
        self.operations.append(
            IntrinsicOp(sym, (sendbuf, sendcount, recvbuf, recvcount, root, comm)))

    def gather(self, sendbuf: ArrayValue | None, sendcount: int,
               recvbuf: ArrayValue | None, recvcount: int, root: int, comm: CommValue,
               protocol: str | None = None) -> None:
        sym = intrinsic_symbol(self._suffix("gather", protocol))
        self.operations.append(
            IntrinsicOp(sym, (sendbuf, sendcount, recvbuf, recvcount, root, comm)))

    def reduce(self, sendbuf: ArrayValue | None, sendcount: int,
               recvbuf: ArrayValue | None, recvcount: int, root: int, comm: CommValue,
               protocol: str | None = None, fold: str | None = None) -> None:
        sym = intrinsic_symbol(self._suffix("reduce", protocol))
        self.operations.append(
            IntrinsicOp(sym, (sendbuf, sendcount, recvbuf, recvcount, root, comm), fold=fold))

    def expose(self, q: QubitValue, root: int, comm: CommValue) -> QubitValue:
        out = QubitValue(self.root.fresh_hint("p"))
        self.operations.append(IntrinsicOp(intrinsic_symbol("expose"), (q, root, comm), result=out))
        return out

    def expose_array(self, arr: ArrayValue, count: int, root: int, comm: CommValue) -> ArrayValue:
        out = ArrayValue(self.root.fresh_hint("pa"), count)
        self.operations.append(
            IntrinsicOp(intrinsic_symbol("expose_array"), (arr, count, root, comm), result=out))
        return out

    # -- datatype / state intrinsics -------------------------------------------

    def comm_rank(self, comm: CommValue) -> IntValue:
        return self.root.rank_value(self, comm)

    def comm_size(self, comm: CommValue) -> IntValue:
        out = IntValue(self.root.fresh_hint("size"))
        self.operations.append(IntrinsicOp(intrinsic_symbol("comm_size"), (comm,), result=out))
        return out

    def group_from_ranks(self, ranks: list[int]) -> GroupValue:
        out = GroupValue(self.root.fresh_hint("g"))
        self.operations.append(
            IntrinsicOp(intrinsic_symbol("group_from_ranks"),
                        (len(ranks), *ranks), result=out))
        return out

    def comm_from_group(self, group: GroupValue) -> CommValue:
        out = CommValue(self.root.fresh_hint("comm"))
        self.operations.append(
            IntrinsicOp(intrinsic_symbol("comm_from_group"), (group,), result=out))
        return out

    def finalize(self) -> None:
        self.operations.append(IntrinsicOp(intrinsic_symbol("finalize"), ()))


class ProgramUnderConstruction:
    """Book-keeping shared across one scope tree."""

    def __init__(self):
        self.main = Scope()
        self.main._root = self
        self.world = CommValue("world")
        self._hints: dict[str, itertools.count] = {}
        self._rank_values: dict[int, IntValue] = {}
        self.main.operations.append(IntrinsicOp(intrinsic_symbol("initialize"), ()))
        self.main.operations.append(
            IntrinsicOp(intrinsic_symbol("comm_world"), (), result=self.world))

    def fresh_hint(self, hint: str) -> str:
        counter = self._hints.setdefault(hint, itertools.count())
        n = next(counter)
        return hint if n == 0 else f"{hint}{n}"

    def rank_value(self, scope: Scope, comm: CommValue) -> IntValue:
        """Rank conditionals must branch on a comm_rank result; reuse one per comm."""
        existing = self._rank_values.get(id(comm))
        if existing is not None:
            return existing
        out = IntValue(self.fresh_hint("rank"))
        scope.operations.append(IntrinsicOp(intrinsic_symbol("comm_rank"), (comm,), result=out))
        self._rank_values[id(comm)] = out
        return out


def new_program() -> tuple[Scope, CommValue]:
    """Fresh scope tree: main scope (already initialized) and the world communicator."""
    pc = ProgramUnderConstruction()
    return pc.main, pc.world


# --- executors -------------------------------------------------------------------


class ProgramExecutor:
    """Compiles a scope tree to an `ir.Program`."""

    def run(self, main: Scope) -> Program:
        return _Emitter().emit(main)


class PrinterExecutor:
    """Emits the canonical text for a scope tree."""

    def run(self, main: Scope) -> str:
        return print_program(_Emitter().emit(main))


def emit(main: Scope, executor: "ProgramExecutor | PrinterExecutor"):
    """Run an executor over a finished scope tree (must end in finalize)."""
    if main.parent is not None:
        raise BuildError("emit expects the root (main) scope")
    ops = main.operations
    if not ops or not (isinstance(ops[-1], IntrinsicOp)
                       and ops[-1].symbol == intrinsic_symbol("finalize")):
        raise BuildError("unterminated-program: main scope must end with finalize()")
    return executor.run(main)


class _Emitter:
    def __init__(self):
        self.names: set[str] = set()
        self.handle_refs: dict[int, Ref] = {}
        self.declared: set[str] = set()
        self.blocks: list[tuple[str, list]] = []
        self.label_counter = itertools.count()
        self.cmp_counter = itertools.count()

    # -- naming ------------------------------------------------------------

    def _unique(self, hint: str) -> str:
        name = hint
        n = 1
        while name in self.names:
            name = f"{hint}.{n}"
            n += 1
        self.names.add(name)
        return name

    def _define(self, handle: Handle) -> str:
        name = self._unique(handle.hint)
        self.handle_refs[id(handle)] = Ref(name)
        return name

    def _ref(self, handle: Handle) -> Ref:
        ref = self.handle_refs.get(id(handle))
        if ref is None:
            raise BuildError(f"value '{handle.hint}' used before it is produced")
        return ref

    def _value(self, arg, ty: str):
        if isinstance(arg, Handle):
            return TypedArg(ty, self._ref(arg))
        if arg is None:
            return TypedArg(ty, None)
        if ty == "double":
            return TypedArg(ty, float(arg))
        return TypedArg(ty, int(arg))

    # -- emission ------------------------------------------------------------

    def emit(self, main: Scope) -> Program:
        self.blocks.append(("entry", []))
        self._emit_scope(main)
        self._current().append(Ret())
        blocks = tuple(Block(label, tuple(ins)) for label, ins in self.blocks)
        functions = tuple(
            self._declaration(sym) for sym in sorted(self.declared)
        ) + (Function("main", "void", (), blocks),)
        return Program(functions=functions)

    def _declaration(self, symbol: str) -> Function:
        sig = signature_of(symbol)
        params = tuple((ty, "") for ty in sig.surface_params)
        return Function(symbol, sig.surface_ret, params, is_declaration=True)

    def _current(self) -> list:
        return self.blocks[-1][1]

    def _call(self, symbol: str, args: tuple, result: Handle | None,
              fold: str | None = None) -> None:
        self.declared.add(symbol)
        sig = signature_of(symbol)
        types = list(sig.surface_params)
        if sig.variadic_tail is not None:
            from .intrinsics import surface_type
            types += [surface_type(sig.variadic_tail)] * (len(args) - len(types))
        typed = tuple(self._value(a, ty) for a, ty in zip(args, types))
        name = self._define(result) if result is not None else None
        self._current().append(Call(name, sig.surface_ret, symbol, typed, fold=fold))

    def _emit_scope(self, scope: Scope) -> None:
        for op in scope.operations:
            if isinstance(op, AllocOp):
                self._emit_alloc(op)
            elif isinstance(op, GateOp):
                self._emit_gate(op)
            elif isinstance(op, IntrinsicOp):
                self._call(op.symbol, op.args, op.result, op.fold)
                if isinstance(op.result, ArrayValue):
                    self._emit_element_gets(op.result)
            elif isinstance(op, RankCondOp):
                self._emit_rank_cond(op)
            else:
                raise BuildError(f"unknown operation {op!r}")

    def _emit_alloc(self, op: AllocOp) -> None:
        self._call("__quantum__rt__qubit_allocate_array", (op.array.count,), op.array)
        self._emit_element_gets(op.array)

    def _emit_element_gets(self, arr: ArrayValue) -> None:
        for i, q in enumerate(arr.elements):
            self._call("__quantum__rt__array_get", (arr, i), q)

    def _emit_gate(self, op: GateOp) -> None:
        args: tuple = tuple(op.qubits)
        if op.gate == "cp":
            args = (op.param, *op.qubits)
        self._call(gate_symbol(op.gate), args, op.result)

    def _emit_rank_cond(self, op: RankCondOp) -> None:
        n = next(self.label_counter)
        cond = self._unique(f"is{op.value}")
        then_label = f"then{n}"
        merge_label = f"merge{n}"
        else_label = f"else{n}" if op.else_scope is not None else merge_label
        self._current().append(
            ICmp(cond, "eq", "i32", self._ref(op.rank_value_of), op.value))
        self._current().append(Br(Ref(cond), then_label, else_label))
        self.blocks.append((then_label, []))
        self._emit_scope(op.then_scope)
        self._current().append(Br(None, merge_label))
        if op.else_scope is not None:
            self.blocks.append((else_label, []))
            self._emit_scope(op.else_scope)
            self._current().append(Br(None, merge_label))
        self.blocks.append((merge_label, []))
