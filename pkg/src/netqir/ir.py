"""In-memory program representation and validation.

A Program is an SSA-style module: opaque pointer types, function declarations,
and function definitions made of labelled basic blocks.  Instructions are the
LLVM-flavoured subset {call, br, icmp, add, sub, ret}; quantum gates and
communication directives are calls to `__quantum__qis__*` / `__netqir__*`
symbols checked against the signature tables in `intrinsics`.

Structural equality of programs ignores source locations, so
parse(print(p)) == p can be asserted directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .diagnostics import Diagnostic, Severity, SourceLoc, error
from .intrinsics import (
    GATES,
    NETQIR_PREFIX,
    QIS_PREFIX,
    RT_PREFIX,
    SemType,
    Signature,
    classify,
    signature_of,
    surface_type,
)
from .diagnostics import UnknownIntrinsicError


class Protocol(Enum):
    """Communication protocol selector.

    UNSPECIFIED defers the choice to the compiler; EXPOSE selects the
    GHZ-based collective strategy and is only meaningful as a lowering /
    analysis default, never as an intrinsic suffix.
    """

    UNSPECIFIED = "unspecified"
    TELEDATA = "teledata"
    TELEGATE = "telegate"
    EXPOSE = "expose"


# --- values and instructions ------------------------------------------------


@dataclass(frozen=True)
class Ref:
    """Reference to an SSA value `%name`."""

    name: str

    def __str__(self) -> str:
        return "%" + self.name


Value = "Ref | int | float | None"  # None encodes the `null` pointer literal


@dataclass(frozen=True)
class TypedArg:
    """One typed call operand, e.g. ``i32 1`` or ``%Qubit* %q``."""

    ty: str
    value: Ref | int | float | None


@dataclass(frozen=True, eq=True)
class Call:
    result: str | None          # SSA name without '%', None for void calls
    ret_ty: str
    callee: str
    args: tuple[TypedArg, ...]
    fold: str | None = None     # reduce-only combining gate attribute
    loc: SourceLoc | None = field(default=None, compare=False)


@dataclass(frozen=True, eq=True)
class ICmp:
    result: str
    op: str                     # eq | ne | slt
    ty: str
    lhs: Ref | int
    rhs: Ref | int
    loc: SourceLoc | None = field(default=None, compare=False)


@dataclass(frozen=True, eq=True)
class BinOp:
    result: str
    op: str                     # add | sub
    ty: str
    lhs: Ref | int
    rhs: Ref | int
    loc: SourceLoc | None = field(default=None, compare=False)


@dataclass(frozen=True, eq=True)
class Br:
    cond: Ref | None            # None for unconditional jump
    then_label: str
    else_label: str | None = None
    loc: SourceLoc | None = field(default=None, compare=False)


@dataclass(frozen=True, eq=True)
class Ret:
    loc: SourceLoc | None = field(default=None, compare=False)


Instruction = "Call | ICmp | BinOp | Br | Ret"
TERMINATORS = (Br, Ret)


@dataclass(frozen=True)
class Block:
    label: str
    instructions: tuple[Call | ICmp | BinOp | Br | Ret, ...]

    def terminator(self) -> Br | Ret | None:
        if self.instructions and isinstance(self.instructions[-1], TERMINATORS):
            return self.instructions[-1]
        return None


@dataclass(frozen=True)
class Function:
    name: str
    ret_ty: str
    params: tuple[tuple[str, str], ...]   # (type, name)
    blocks: tuple[Block, ...] = ()        # empty for declarations
    is_declaration: bool = False


OPAQUE_TYPES = ("Qubit", "Array", "Comm", "Group")


@dataclass(frozen=True)
class Program:
    """One module: ordered functions plus the fixed opaque type set."""

    functions: tuple[Function, ...]
    entry: str = "main"
    opaque_types: tuple[str, ...] = OPAQUE_TYPES

    def function(self, name: str) -> Function | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    @property
    def entry_function(self) -> Function | None:
        f = self.function(self.entry)
        if f is not None and not f.is_declaration:
            return f
        return None


# --- logical topology structures ---------------------------------------------


@dataclass(frozen=True)
class GroupHandle:
    """Ordered, duplicate-free subset of world ranks."""

    id: str
    members: tuple[int, ...]


@dataclass(frozen=True)
class CommHandle:
    """Communicator: ordered member ranks; index within `members` is the rank
    a process sees through `comm_rank`."""

    id: str
    members: tuple[int, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("communicator must have at least one member")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"duplicate ranks in communicator: {self.members}")


def comm_world(n_ranks: int) -> CommHandle:
    if n_ranks < 1:
        raise ValueError("world size must be >= 1")
    return CommHandle("world", tuple(range(n_ranks)))


def comm_rank(comm: CommHandle, member: int) -> int:
    """Index of `member` inside the communicator's ordered member list."""
    try:
        return comm.members.index(member)
    except ValueError:
        raise ValueError(f"rank {member} is not a member of communicator '{comm.id}'") from None


def comm_size(comm: CommHandle) -> int:
    return len(comm.members)


def group_from_ranks(ranks: list[int] | tuple[int, ...], world_size: int,
                     group_id: str = "group") -> GroupHandle:
    ranks = tuple(ranks)
    if not ranks:
        raise ValueError("group must have at least one rank")
    if len(set(ranks)) != len(ranks):
        raise ValueError(f"duplicate rank in group: {ranks}")
    for r in ranks:
        if not 0 <= r < world_size:
            raise ValueError(f"rank {r} out of range for world of size {world_size}")
    return GroupHandle(group_id, ranks)


def comm_from_group(group: GroupHandle) -> CommHandle:
    return CommHandle(f"comm({group.id})", group.members)


# --- helpers over calls -------------------------------------------------------


def is_netqir_call(instr) -> bool:
    return isinstance(instr, Call) and instr.callee.startswith(NETQIR_PREFIX)


def is_gate_call(instr) -> bool:
    return isinstance(instr, Call) and instr.callee.startswith(QIS_PREFIX)


def netqir_base(callee: str) -> str:
    return callee[len(NETQIR_PREFIX):]


def gate_name(callee: str) -> str:
    return callee[len(QIS_PREFIX):-len("__body")]


COMMUNICATION_BASES = frozenset(
    b for b in (
        "qsend", "qrecv", "measure_send", "measure_recv",
        "scatter", "gather", "reduce", "expose",
    )
)


def is_communication_call(instr) -> bool:
    """True for point-to-point and collective directives (not state/datatype)."""
    if not is_netqir_call(instr):
        return False
    try:
        return classify(instr.callee).base in COMMUNICATION_BASES
    except UnknownIntrinsicError:
        return False


def protocol_suffix(callee: str) -> Protocol:
    try:
        mod = classify(callee).protocol_modifier
    except UnknownIntrinsicError:
        return Protocol.UNSPECIFIED
    return {"none": Protocol.UNSPECIFIED,
            "teledata": Protocol.TELEDATA,
            "telegate": Protocol.TELEGATE}[mod]


# Qubit-consuming send positions: argument index of the departing qubit/array.
_CONSUMING_ARG = {
    "qsend": 0, "qsend_teledata": 0, "qsend_telegate": 0,
    "qsend_array": 0, "qsend_array_teledata": 0, "qsend_array_telegate": 0,
    "scatter": 0, "scatter_teledata": 0, "scatter_telegate": 0,
    "gather": 0, "gather_teledata": 0, "gather_telegate": 0,
    "reduce": 0, "reduce_teledata": 0, "reduce_telegate": 0,
}

# Receive-buffer positions that overwrite (and therefore un-consume) a value.
_WRITTEN_ARG = {
    "scatter": 2, "scatter_teledata": 2, "scatter_telegate": 2,
    "gather": 2, "gather_teledata": 2, "gather_telegate": 2,
    "reduce": 2, "reduce_teledata": 2, "reduce_telegate": 2,
}


# --- validation ---------------------------------------------------------------


class _FuncChecker:
    """Per-function SSA, type and ordering checks."""

    def __init__(self, program: Program, func: Function, diags: list[Diagnostic]):
        self.program = program
        self.func = func
        self.diags = diags
        self.blocks = {b.label: b for b in func.blocks}
        self.value_types: dict[str, str] = {name: ty for ty, name in func.params}

    def run(self) -> None:
        self._check_block_structure()
        self._collect_defs()
        self._check_instructions()
        if not self.diags_have_errors:
            self._check_dominance()
            if self.func.name == self.program.entry:
                self._check_lifecycle()
                self._check_linearity()

    @property
    def diags_have_errors(self) -> bool:
        return any(d.severity is Severity.ERROR for d in self.diags)

    def _check_block_structure(self) -> None:
        if not self.func.blocks:
            self.diags.append(error("func-empty", f"function @{self.func.name} has no blocks"))
            return
        if len(self.blocks) != len(self.func.blocks):
            self.diags.append(error("block-redef", f"duplicate block label in @{self.func.name}"))
        for b in self.func.blocks:
            term = b.terminator()
            if term is None:
                self.diags.append(error(
                    "block-unterminated",
                    f"block %{b.label} in @{self.func.name} does not end in br/ret"))
            for ins in b.instructions[:-1]:
                if isinstance(ins, TERMINATORS):
                    self.diags.append(error(
                        "block-early-terminator",
                        f"terminator before end of block %{b.label}", ins.loc))
            if isinstance(term, Br):
                for lbl in (term.then_label, term.else_label):
                    if lbl is not None and lbl not in self.blocks:
                        self.diags.append(error(
                            "br-unknown-label", f"branch to unknown label %{lbl}", term.loc))

    def _collect_defs(self) -> None:
        for b in self.func.blocks:
            for ins in b.instructions:
                name = getattr(ins, "result", None)
                if name is None:
                    continue
                if name in self.value_types:
                    self.diags.append(error("ssa-redef", f"%{name} defined more than once",
                                            getattr(ins, "loc", None)))
                else:
                    self.value_types[name] = self._result_type(ins)

    def _result_type(self, ins) -> str:
        if isinstance(ins, Call):
            return ins.ret_ty
        if isinstance(ins, ICmp):
            return "i1"
        if isinstance(ins, BinOp):
            return ins.ty
        return "void"

    def _check_operand(self, ty: str, value, loc) -> None:
        if isinstance(value, Ref):
            got = self.value_types.get(value.name)
            if got is None:
                self.diags.append(error("ssa-undef", f"use of undefined value %{value.name}", loc))
            elif got != ty:
                self.diags.append(error(
                    "type-mismatch", f"%{value.name} has type {got}, expected {ty}", loc))
        elif value is None:
            if not ty.endswith("*"):
                self.diags.append(error("type-mismatch", f"null is not a {ty}", loc))
        elif isinstance(value, bool) or isinstance(value, int):
            if ty not in ("i1", "i32", "i64"):
                self.diags.append(error("type-mismatch", f"integer literal is not a {ty}", loc))
        elif isinstance(value, float):
            if ty != "double":
                self.diags.append(error("type-mismatch", f"float literal is not a {ty}", loc))

    def _check_instructions(self) -> None:
        for b in self.func.blocks:
            for ins in b.instructions:
                if isinstance(ins, Call):
                    self._check_call(ins)
                elif isinstance(ins, (ICmp, BinOp)):
                    self._check_operand(ins.ty, ins.lhs, ins.loc)
                    self._check_operand(ins.ty, ins.rhs, ins.loc)
                elif isinstance(ins, Br) and ins.cond is not None:
                    self._check_operand("i1", ins.cond, ins.loc)

    def _check_call(self, ins: Call) -> None:
        callee = ins.callee
        if callee.startswith((NETQIR_PREFIX, QIS_PREFIX, RT_PREFIX)):
            try:
                sig = signature_of(callee)
            except UnknownIntrinsicError as exc:
                rule = "unknown-gate" if callee.startswith(QIS_PREFIX) else "unknown-intrinsic"
                self.diags.append(error(rule, str(exc), ins.loc))
                return
            self._check_against_signature(ins, sig)
            if ins.fold is not None and netqir_base(callee).split("_")[0] != "reduce":
                self.diags.append(error("fold-misplaced",
                                        "!fold attribute is only valid on reduce", ins.loc))
        else:
            target = self.program.function(callee)
            if target is None:
                self.diags.append(error("undeclared-symbol", f"call to undeclared @{callee}", ins.loc))
                return
            expect = tuple(ty for ty, _ in target.params)
            if len(ins.args) != len(expect):
                self.diags.append(error(
                    "sig-arity",
                    f"@{callee} expects {len(expect)} argument(s), got {len(ins.args)}", ins.loc))
            else:
                for arg, ty in zip(ins.args, expect):
                    if arg.ty != ty:
                        self.diags.append(error(
                            "sig-type", f"@{callee} argument of type {arg.ty}, expected {ty}",
                            ins.loc))
                    self._check_operand(arg.ty, arg.value, ins.loc)
            if ins.ret_ty != target.ret_ty:
                self.diags.append(error(
                    "sig-type", f"@{callee} returns {target.ret_ty}, call typed {ins.ret_ty}",
                    ins.loc))

    def _check_against_signature(self, ins: Call, sig: Signature) -> None:
        expect = list(sig.surface_params)
        n_fixed = len(expect)
        if sig.variadic_tail is not None:
            if len(ins.args) < n_fixed:
                self.diags.append(error(
                    "sig-arity",
                    f"@{ins.callee} expects at least {n_fixed} argument(s), got {len(ins.args)}",
                    ins.loc))
                return
            expect += [surface_type(sig.variadic_tail)] * (len(ins.args) - n_fixed)
        elif len(ins.args) != n_fixed:
            self.diags.append(error(
                "sig-arity",
                f"@{ins.callee} expects {n_fixed} argument(s) {sig.declared}, got {len(ins.args)}",
                ins.loc))
            return
        for i, (arg, ty) in enumerate(zip(ins.args, expect)):
            if arg.ty != ty:
                self.diags.append(error(
                    "sig-type",
                    f"@{ins.callee} argument {i + 1} has type {arg.ty}, expected {ty} "
                    f"(declared {sig.declared})",
                    ins.loc))
            self._check_operand(arg.ty, arg.value, ins.loc)
        if ins.ret_ty != sig.surface_ret:
            self.diags.append(error(
                "sig-type", f"@{ins.callee} returns {sig.surface_ret}, call typed {ins.ret_ty}",
                ins.loc))
        if ins.callee == NETQIR_PREFIX + "group_from_ranks" and ins.args:
            count = ins.args[0].value
            if isinstance(count, int) and count != len(ins.args) - 1:
                self.diags.append(error(
                    "group-count", f"group_from_ranks count {count} does not match "
                                   f"{len(ins.args) - 1} trailing rank(s)", ins.loc))

    # -- control-flow analyses ------------------------------------------------

    def _successors(self, b: Block) -> list[str]:
        term = b.terminator()
        if isinstance(term, Br):
            return [l for l in (term.then_label, term.else_label) if l is not None]
        return []

    def _check_dominance(self) -> None:
        """Every use must be reachable only after its def (forward must-analysis)."""
        labels = [b.label for b in self.func.blocks]
        param_names = {name for _, name in self.func.params}
        universe = set(self.value_types)
        avail_in: dict[str, set[str]] = {l: set(universe) for l in labels}
        avail_in[labels[0]] = set(param_names)
        preds: dict[str, list[str]] = {l: [] for l in labels}
        for b in self.func.blocks:
            for s in self._successors(b):
                preds.setdefault(s, []).append(b.label)

        def block_out(label: str, avail: set[str]) -> set[str]:
            out = set(avail)
            for ins in self.blocks[label].instructions:
                name = getattr(ins, "result", None)
                if name is not None:
                    out.add(name)
            return out

        changed = True
        while changed:
            changed = False
            for label in labels:
                if preds[label]:
                    new_in = set.intersection(*(block_out(p, avail_in[p]) for p in preds[label]))
                    if label == labels[0]:
                        new_in &= avail_in[label]
                    if new_in != avail_in[label]:
                        avail_in[label] = new_in
                        changed = True

        for b in self.func.blocks:
            avail = set(avail_in[b.label])
            for ins in b.instructions:
                for ref in self._refs_of(ins):
                    if ref.name in self.value_types and ref.name not in avail:
                        self.diags.append(error(
                            "ssa-use-before-def",
                            f"%{ref.name} may be used before definition",
                            getattr(ins, "loc", None)))
                name = getattr(ins, "result", None)
                if name is not None:
                    avail.add(name)

    def _refs_of(self, ins) -> list[Ref]:
        refs: list[Ref] = []
        if isinstance(ins, Call):
            refs += [a.value for a in ins.args if isinstance(a.value, Ref)]
        elif isinstance(ins, (ICmp, BinOp)):
            refs += [v for v in (ins.lhs, ins.rhs) if isinstance(v, Ref)]
        elif isinstance(ins, Br) and ins.cond is not None:
            refs.append(ins.cond)
        return refs

    def _check_lifecycle(self) -> None:
        """initialize must precede every communication directive on every path,
        and finalize must precede every return; nothing communicates after
        finalize."""
        labels = [b.label for b in self.func.blocks]
        # state sets: 'uninit', 'init', 'fin'
        state_in: dict[str, set[str]] = {l: set() for l in labels}
        state_in[labels[0]] = {"uninit"}
        worklist = [labels[0]]
        seen_order: list[tuple[str, set[str]]] = []
        while worklist:
            label = worklist.pop()
            states = set(state_in[label])
            b = self.blocks[label]
            for ins in b.instructions:
                if is_netqir_call(ins):
                    base = netqir_base(ins.callee)
                    if base == "initialize":
                        states = {"init"}
                    elif base == "finalize":
                        states = {"fin"}
            for s in self._successors(b):
                if not states <= state_in[s]:
                    state_in[s] |= states
                    worklist.append(s)

        for b in self.func.blocks:
            states = set(state_in[b.label])
            for ins in b.instructions:
                if is_netqir_call(ins):
                    base = netqir_base(ins.callee)
                    if base == "initialize":
                        states = {"init"}
                        continue
                    if base == "finalize":
                        states = {"fin"}
                        continue
                    if is_communication_call(ins):
                        if "uninit" in states:
                            self.diags.append(error(
                                "init-order",
                                f"@{ins.callee} reachable before __netqir__initialize", ins.loc))
                        if "fin" in states:
                            self.diags.append(error(
                                "init-order",
                                f"@{ins.callee} reachable after __netqir__finalize", ins.loc))
                if isinstance(ins, Ret):
                    if "uninit" in states or "init" in states:
                        self.diags.append(error(
                            "finalize-missing",
                            "return reachable without __netqir__finalize", ins.loc))

    def _check_linearity(self) -> None:
        """No use of a qubit value after a send that departs it, until reset.

        May-analysis (union join): a value consumed on any path to a use is
        flagged.  The expose qubit argument is exempt here because only the
        root rank's copy departs, which is rank-dependent; lowering enforces
        the root-side rule on concrete per-rank traces.
        """
        labels = [b.label for b in self.func.blocks]
        consumed_in: dict[str, set[str]] = {l: set() for l in labels}
        worklist = [labels[0]]
        while worklist:
            label = worklist.pop()
            out = self._linearity_transfer(label, consumed_in[label], report=False)
            for s in self._successors(self.blocks[label]):
                if not out <= consumed_in[s]:
                    consumed_in[s] |= out
                    worklist.append(s)
        for label in labels:
            self._linearity_transfer(label, consumed_in[label], report=True)

    def _linearity_transfer(self, label: str, consumed: set[str], report: bool) -> set[str]:
        out = set(consumed)
        for ins in self.blocks[label].instructions:
            if not isinstance(ins, Call):
                continue
            written = self._write_arg_names(ins)
            is_reset = is_gate_call(ins) and gate_name(ins.callee) == "reset"
            if report and not is_reset:
                for ref in (a.value for a in ins.args if isinstance(a.value, Ref)):
                    if ref.name in out and self._is_qubit_like(ref.name) and ref.name not in written:
                        self.diags.append(error(
                            "linear-use-after-send",
                            f"%{ref.name} used after being sent (reset it first)", ins.loc))
            if is_gate_call(ins) and gate_name(ins.callee) == "reset":
                arg = ins.args[0].value
                if isinstance(arg, Ref):
                    out.discard(arg.name)
            if is_netqir_call(ins):
                base = netqir_base(ins.callee)
                idx = _CONSUMING_ARG.get(base)
                if idx is not None and idx < len(ins.args):
                    v = ins.args[idx].value
                    if isinstance(v, Ref):
                        out.add(v.name)
                out -= written
        return out

    def _write_arg_names(self, ins: Call) -> set[str]:
        if not is_netqir_call(ins):
            return set()
        idx = _WRITTEN_ARG.get(netqir_base(ins.callee))
        if idx is None or idx >= len(ins.args):
            return set()
        v = ins.args[idx].value
        return {v.name} if isinstance(v, Ref) else set()

    def _is_qubit_like(self, name: str) -> bool:
        return self.value_types.get(name) in ("%Qubit*", "%Array*")


def validate(program: Program) -> list[Diagnostic]:
    """All rule checks; an empty list means the program can be lowered."""
    diags: list[Diagnostic] = []

    seen: set[str] = set()
    for f in program.functions:
        if f.name in seen and not f.is_declaration:
            diags.append(error("func-redef", f"function @{f.name} defined more than once"))
        seen.add(f.name)

    entry = program.function(program.entry)
    if entry is None or entry.is_declaration:
        diags.append(error("entry-missing", f"no entry function @{program.entry} defined"))

    for f in program.functions:
        if f.is_declaration:
            # declarations of known symbols must match the table
            if f.name.startswith((NETQIR_PREFIX, QIS_PREFIX, RT_PREFIX)):
                try:
                    sig = signature_of(f.name)
                except UnknownIntrinsicError as exc:
                    rule = "unknown-gate" if f.name.startswith(QIS_PREFIX) else "unknown-intrinsic"
                    diags.append(error(rule, str(exc)))
                    continue
                declared = tuple(ty for ty, _ in f.params)
                expect = sig.surface_params
                ok = declared == expect or (
                    sig.variadic_tail is not None
                    and declared[: len(expect)] == expect
                    and all(t == surface_type(sig.variadic_tail) for t in declared[len(expect):]))
                if not ok or f.ret_ty != sig.surface_ret:
                    diags.append(error(
                        "sig-type",
                        f"declaration of @{f.name} does not match {sig.declared} -> "
                        f"{sig.surface_ret}"))
            continue
        _FuncChecker(program, f, diags).run()

    return diags
