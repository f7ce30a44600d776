"""Primitive-op program produced by lowering: one op list per rank.

Primitive ops act on physical qubit slots `q<rank>.<index>` and rank-local
classical bits.  EPR/GHZ allocations carry the communication-qubit charge
recorded in the ledger; classical send/receive are rendezvous (both sides
block), and sync points mark classical rounds (one id per round, mirrored
into every participating rank's stream).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .diagnostics import Diagnostic

RELAY = "relay"          # rank id of the star-topology relay node
RankId = "int | str"     # compute ranks are ints; the relay is RELAY


@dataclass(frozen=True, order=True)
class Qubit:
    """Physical slot `index` on `rank` (data slots first, comm slots appended)."""

    rank: int | str
    index: int

    def __str__(self) -> str:
        return f"q{self.rank}.{self.index}"


@dataclass(frozen=True)
class AllocEpr:
    """Bell pair (|00>+|11>)/sqrt(2) split across two distinct ranks."""

    id: int
    a: Qubit
    b: Qubit

    def __post_init__(self):
        if self.a.rank == self.b.rank:
            raise ValueError("EPR endpoints must be distinct ranks")

    @property
    def charge(self) -> int:
        return 2


@dataclass(frozen=True)
class AllocGhz:
    """GHZ state (|0...0>+|1...1>)/sqrt(2), one share per listed slot.

    `charges` gives the communication-qubit cost attributed per share; the
    default is one per share, relay-distributed allocations override it.
    """

    id: int
    shares: tuple[Qubit, ...]
    charges: tuple[int, ...]

    @property
    def charge(self) -> int:
        return sum(self.charges)


@dataclass(frozen=True)
class LocalGate:
    gate: str                      # h | x | z | cnot | cz | cp
    qubits: tuple[Qubit, ...]
    param: float | None = None


@dataclass(frozen=True)
class Measure:
    qubit: Qubit
    bit: str


@dataclass(frozen=True)
class Reset:
    qubit: Qubit


@dataclass(frozen=True)
class CSend:
    bits: tuple[str, ...]
    dest: int | str
    seq: int                       # classical-round sequence id (the round's sync id)


@dataclass(frozen=True)
class CRecv:
    count: int
    src: int | str
    bits: tuple[str, ...]          # receiver-local names for the incoming bits
    seq: int


@dataclass(frozen=True)
class CondCorrection:
    gate: str                      # x | z
    qubit: Qubit
    bit: str


@dataclass(frozen=True)
class SyncPoint:
    id: int


PrimOp = "AllocEpr | AllocGhz | LocalGate | Measure | Reset | CSend | CRecv | CondCorrection | SyncPoint"


def format_op(op) -> str:
    if isinstance(op, AllocEpr):
        return f"alloc_epr e{op.id} {op.a} {op.b}"
    if isinstance(op, AllocGhz):
        shares = " ".join(str(q) for q in op.shares)
        charge = "" if op.charges == (1,) * len(op.shares) else f" charge={op.charge}"
        return f"alloc_ghz g{op.id} {shares}{charge}"
    if isinstance(op, LocalGate):
        qs = " ".join(str(q) for q in op.qubits)
        if op.param is not None:
            return f"gate {op.gate}({op.param!r}) {qs}"
        return f"gate {op.gate} {qs}"
    if isinstance(op, Measure):
        return f"measure {op.qubit} -> {op.bit}"
    if isinstance(op, Reset):
        return f"reset {op.qubit}"
    if isinstance(op, CSend):
        return f"csend [{', '.join(op.bits)}] -> {op.dest} seq s{op.seq}"
    if isinstance(op, CRecv):
        return f"crecv {op.count} <- {op.src} seq s{op.seq} -> [{', '.join(op.bits)}]"
    if isinstance(op, CondCorrection):
        return f"cond {op.gate} {op.qubit} if {op.bit}"
    if isinstance(op, SyncPoint):
        return f"sync s{op.id}"
    raise TypeError(f"unknown primitive op {op!r}")


@dataclass
class LoweredProgram:
    """Per-rank primitive programs plus the communication-resource ledger."""

    n_ranks: int
    topology: str                                  # "direct" | "communicator"
    ops: dict[int | str, list]                     # rank id -> ordered primitive ops
    data_qubits: dict[int, int]                    # initial data slots per compute rank
    layout: dict[Qubit, Qubit]                     # logical data qubit -> final physical slot
    warnings: list[Diagnostic] = field(default_factory=list)

    @property
    def has_relay(self) -> bool:
        return RELAY in self.ops and bool(self.ops[RELAY])

    def rank_ids(self) -> list:
        ids: list = sorted(r for r in self.ops if isinstance(r, int))
        if RELAY in self.ops:
            ids.append(RELAY)
        return ids

    # -- ledger ---------------------------------------------------------------

    def ledger_by_rank(self) -> dict:
        """Charged communication qubits attributed per rank.

        Allocation ops are mirrored into every participant's stream (they are
        joint rendezvous points), so the ledger deduplicates by allocation id.
        """
        counts: dict = {r: 0 for r in self.ops}
        seen: set[tuple[str, int]] = set()
        for rank_ops in self.ops.values():
            for op in rank_ops:
                if isinstance(op, AllocEpr):
                    if ("epr", op.id) in seen:
                        continue
                    seen.add(("epr", op.id))
                    counts[op.a.rank] = counts.get(op.a.rank, 0) + 1
                    counts[op.b.rank] = counts.get(op.b.rank, 0) + 1
                elif isinstance(op, AllocGhz):
                    if ("ghz", op.id) in seen:
                        continue
                    seen.add(("ghz", op.id))
                    for share, charge in zip(op.shares, op.charges):
                        counts[share.rank] = counts.get(share.rank, 0) + charge
        return counts

    @property
    def comm_qubits_consumed(self) -> int:
        return sum(self.ledger_by_rank().values())

    @property
    def sync_ids(self) -> set[int]:
        return {op.id for rank_ops in self.ops.values() for op in rank_ops
                if isinstance(op, SyncPoint)}

    @property
    def sync_count(self) -> int:
        return len(self.sync_ids)

    # -- serialization ----------------------------------------------------------

    def serialize(self) -> str:
        lines = [f"qpus {self.n_ranks}", f"topology {self.topology}"]
        for rank in sorted(self.data_qubits):
            lines.append(f"data rank {rank}: {self.data_qubits[rank]}")
        ledger = self.ledger_by_rank()
        for rank in self.rank_ids():
            lines.append(f"ledger rank {rank}: {ledger.get(rank, 0)}")
        lines.append(f"ledger total: {self.comm_qubits_consumed}")
        lines.append(f"syncs: {self.sync_count}")
        for logical in sorted(self.layout):
            lines.append(f"layout {logical} -> {self.layout[logical]}")
        for rank in self.rank_ids():
            lines.append(f"rank {rank}:")
            for op in self.ops[rank]:
                lines.append("  " + format_op(op))
        return "\n".join(lines) + "\n"
