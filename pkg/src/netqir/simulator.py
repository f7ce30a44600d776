"""Deterministic multi-QPU interpreter over a single global state vector.

All ranks share one state vector because EPR/GHZ resources entangle QPUs;
per-QPU factorization is impossible mid-protocol.  Measured or reset qubits
leave the live vector immediately (they are exact computational-basis
factors) and stay в the registry as released classical outcomes, so protocol
transients never blow up the live qubit count.

The scheduler is a fixed round-robin over ranks, advancing each until it
blocks on a classical rendezvous: a send completes only when the matching
receive executes.  When no rank can make progress and work remains, a
deadlock is reported naming the blocked ranks.  Identical (program, seed)
pairs produce bit-identical transcripts and states.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .diagnostics import CapacityError, DeadlockError, SimulationError
from .ir import Program, Protocol
from .lowering import (
    EvCollective,
    EvExpose,
    EvGate,
    EvMeasure,
    EvRecv,
    EvReset,
    EvSend,
    _Matcher,
    _P2PMatch,
    _Tracer,
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
    format_op,
)

DEFAULT_QUBIT_CAP = 20
_NORM_TOL = 1e-9

_H = np.array([[1, 1], [1, -1]], dtype=complex) / sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_GATES_1Q = {"h": _H, "x": _X, "z": _Z}


def qubit_cap() -> int:
    """Simulator qubit cap; NETQIR_QUBIT_CAP overrides the default of 20."""
    value = os.environ.get("NETQIR_QUBIT_CAP")
    if value is None:
        return DEFAULT_QUBIT_CAP
    try:
        cap = int(value)
    except ValueError:
        raise SimulationError(f"NETQIR_QUBIT_CAP must be an integer, got {value!r}") from None
    if cap < 1:
        raise SimulationError("NETQIR_QUBIT_CAP must be >= 1")
    return cap


class GlobalState:
    """State vector over every live qubit, plus released measurement results."""

    def __init__(self, cap: int | None = None):
        self.cap = cap if cap is not None else qubit_cap()
        self.slots: list[Qubit] = []
        self.amps = np.ones(1, dtype=complex)
        self.released: dict[Qubit, int] = {}

    @property
    def n_live(self) -> int:
        return len(self.slots)

    def axis_of(self, slot: Qubit) -> int:
        try:
            return self.slots.index(slot)
        except ValueError:
            if slot in self.released:
                raise SimulationError(
                    f"{slot} was already measured or reset (released as "
                    f"|{self.released[slot]}>)") from None
            raise SimulationError(f"{slot} is not an allocated qubit") from None

    def add_qubits(self, slots: list[Qubit], init: np.ndarray) -> None:
        if len(init) != 2 ** len(slots):
            raise SimulationError("initial amplitude block has the wrong size")
        for slot in slots:
            if slot in self.slots:
                raise SimulationError(f"{slot} allocated twice")
            self.released.pop(slot, None)
        if self.n_live + len(slots) > self.cap:
            raise CapacityError(
                f"simulation needs {self.n_live + len(slots)} live qubits, cap is {self.cap} "
                f"(set NETQIR_QUBIT_CAP to raise it)")
        self.amps = np.kron(self.amps, np.asarray(init, dtype=complex))
        self.slots.extend(slots)
        self._norm_check()

    def apply_gate(self, gate: str, slots: tuple[Qubit, ...], param: float | None = None) -> None:
        n = self.n_live
        if gate in _GATES_1Q:
            axis = self.axis_of(slots[0])
            state = self.amps.reshape([2] * n)
            state = np.moveaxis(state, axis, -1)
            state = state @ _GATES_1Q[gate].T
            self.amps = np.moveaxis(state, -1, axis).reshape(-1)
        elif gate in ("cnot", "cz", "cp"):
            a0, a1 = self.axis_of(slots[0]), self.axis_of(slots[1])
            state = self.amps.reshape([2] * n).copy()

            def sl(v0, v1):
                idx = [slice(None)] * n
                idx[a0], idx[a1] = v0, v1
                return tuple(idx)

            if gate == "cnot":
                state[sl(1, 0)], state[sl(1, 1)] = state[sl(1, 1)].copy(), state[sl(1, 0)].copy()
            elif gate == "cz":
                state[sl(1, 1)] *= -1.0
            else:
                state[sl(1, 1)] *= np.exp(1j * float(param))
            self.amps = state.reshape(-1)
        else:
            raise SimulationError(f"unknown gate {gate!r}")
        self._norm_check()

    def probability_one(self, slot: Qubit) -> float:
        axis = self.axis_of(slot)
        probs = np.abs(self.amps.reshape([2] * self.n_live)) ** 2
        return float(probs.sum(axis=tuple(i for i in range(self.n_live) if i != axis))[1])

    def measure(self, slot: Qubit, rng: np.random.Generator) -> int:
        p1 = self.probability_one(slot)
        outcome = 1 if rng.random() < p1 else 0
        self._project_out(slot, outcome, sqrt(p1 if outcome else 1.0 - p1))
        self.released[slot] = outcome
        return outcome

    def reset(self, slot: Qubit, rng: np.random.Generator) -> None:
        """Collapse to |0> and release; a no-op rewrite for already-released slots."""
        if slot in self.released:
            self.released[slot] = 0
            return
        self.measure(slot, rng)
        self.released[slot] = 0

    def _project_out(self, slot: Qubit, outcome: int, norm: float) -> None:
        if norm < 1e-12:
            raise SimulationError(f"projecting {slot} onto |{outcome}> has zero probability")
        axis = self.axis_of(slot)
        state = self.amps.reshape([2] * self.n_live)
        self.amps = (np.take(state, outcome, axis=axis) / norm).reshape(-1)
        self.slots.pop(axis)
        self._norm_check()

    def _norm_check(self) -> None:
        norm = float(np.linalg.norm(self.amps))
        if abs(norm - 1.0) > _NORM_TOL:
            raise SimulationError(f"state norm drifted to {norm}")

    def vector_over(self, order: list[Qubit]) -> np.ndarray:
        """Amplitudes with qubits permuted to `order`; must cover all live qubits."""
        if sorted(map(str, order)) != sorted(map(str, self.slots)):
            raise SimulationError(
                f"qubit subsets differ: requested {sorted(map(str, order))}, "
                f"live {sorted(map(str, self.slots))}")
        perm = [self.axis_of(slot) for slot in order]
        return np.transpose(self.amps.reshape([2] * self.n_live), perm).reshape(-1)


# --- state comparison helpers ---------------------------------------------------


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """|<a|b>|^2 for two pure state vectors of equal dimension."""
    if a.shape != b.shape:
        raise SimulationError("mismatched-subset: states span different qubit sets")
    return float(abs(np.vdot(a, b)) ** 2)


def phase_aligned(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return b multiplied by the global phase that best aligns it with a."""
    k = int(np.argmax(np.abs(a)))
    if abs(b[k]) < 1e-12:
        return b
    phase = (a[k] / b[k])
    return b * (phase / abs(phase))

def max_diff_up_to_phase(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - phase_aligned(a, b))))


def reduced_density(vec: np.ndarray, n_qubits: int, keep: list[int]) -> np.ndarray:
    """Density matrix over `keep` axes of an n-qubit pure state."""
    psi = vec.reshape([2] * n_qubits)
    keep = list(keep)
    rest = [i for i in range(n_qubits) if i not in keep]
    psi = np.transpose(psi, keep + rest).reshape(2 ** len(keep), -1)
    return psi @ psi.conj().T


# --- the SPMD engine ---------------------------------------------------------------


@dataclass
class RankContext:
    rank: int | str
    ops: list
    pc: int = 0
    bits: dict[str, int] = field(default_factory=dict)
    blocked_on: str | None = None

    @property
    def done(self) -> bool:
        return self.pc >= len(self.ops)


@dataclass
class SimResult:
    state: GlobalState
    transcript: list[str]
    bits: dict
    layout: dict[Qubit, Qubit]

    def logical_order(self) -> list[Qubit]:
        return sorted(self.layout)

    def logical_vector(self) -> np.ndarray:
        """Live state permuted to logical-qubit order (released slots traced out)."""
        return self.state.vector_over([self.layout[lq] for lq in self.logical_order()])


class _Engine:
    def __init__(self, lowered: LoweredProgram, seed: int,
                 initial: dict | None, cap: int | None):
        self.lowered = lowered
        self.rng = np.random.default_rng(seed)
        self.state = GlobalState(cap)
        self.contexts = {r: RankContext(r, lowered.ops[r]) for r in lowered.rank_ids()}
        self.offers: dict[tuple, list[tuple[int, tuple[int, ...]]]] = {}
        self.alloc_arrivals: dict[int, set] = {}
        self.transcript: list[str] = []
        self.step = 0
        data_slots = [Qubit(rank, i)
                      for rank in sorted(lowered.data_qubits)
                      for i in range(lowered.data_qubits[rank])]
        for slot in data_slots:
            init = (initial or {}).get((slot.rank, slot.index))
            vec = np.array([1, 0], dtype=complex) if init is None \
                else np.asarray(init, dtype=complex)
            norm = np.linalg.norm(vec)
            if vec.shape != (2,) or norm < 1e-12:
                raise SimulationError(f"bad initial state for {slot}")
            self.state.add_qubits([slot], vec / norm)

    def run(self) -> SimResult:
        order = self.lowered.rank_ids()
        while True:
            progressed = False
            for rank in order:
                progressed |= self._advance(self.contexts[rank])
            if all(ctx.done for ctx in self.contexts.values()):
                break
            if not progressed:
                blocked = {ctx.rank: ctx.blocked_on or "nothing (starved)"
                           for ctx in self.contexts.values() if not ctx.done}
                raise DeadlockError(blocked)
        stale = [f"{src}->{dst} seq s{seq}"
                 for (src, dst), queue in self.offers.items() for (seq, _) in queue]
        if stale:
            raise SimulationError(
                "classical message(s) never received: " + ", ".join(sorted(stale)))
        return SimResult(self.state, self.transcript,
                         {r: dict(ctx.bits) for r, ctx in self.contexts.items()},
                         dict(self.lowered.layout))

    def _log(self, ctx: RankContext, op, extra: str = "") -> None:
        self.transcript.append(f"step {self.step} rank {ctx.rank} {format_op(op)}{extra}")
        self.step += 1

    def _advance(self, ctx: RankContext) -> bool:
        progressed = False
        while not ctx.done:
            op = ctx.ops[ctx.pc]
            if isinstance(op, CRecv):
                queue = self.offers.get((op.src, ctx.rank), [])
                hit = next((i for i, (seq, _) in enumerate(queue) if seq == op.seq), None)
                if hit is None:
                    ctx.blocked_on = f"crecv from rank {op.src}"
                    return progressed
                _, values = queue.pop(hit)
                if len(values) != op.count:
                    raise SimulationError(
                        f"rank {ctx.rank} expected {op.count} bit(s) from rank {op.src}, "
                        f"got {len(values)}")
                for name, value in zip(op.bits, values):
                    ctx.bits[name] = value
                self._log(ctx, op, f" = {list(values)}")
                ctx.pc += 1
                ctx.blocked_on = None
                progressed = True
                continue
            if isinstance(op, (AllocEpr, AllocGhz)):
                if not self._try_alloc(ctx, op):
                    return progressed
                progressed = True
                continue
            self._execute(ctx, op)
            ctx.pc += 1
            progressed = True
        return progressed

    def _try_alloc(self, ctx: RankContext, op) -> bool:
        """EPR/GHZ allocation is a joint rendezvous of every endpoint rank:
        entanglement cannot be distributed to a party that never shows up."""
        expected = ({op.a.rank, op.b.rank} if isinstance(op, AllocEpr)
                    else {share.rank for share in op.shares})
        arrived = self.alloc_arrivals.setdefault(id(op), set())
        arrived.add(ctx.rank)
        if arrived != expected:
            waiting = sorted(str(r) for r in expected - arrived)
            kind = "epr" if isinstance(op, AllocEpr) else "ghz"
            ctx.blocked_on = f"{kind} allocation with rank(s) {', '.join(waiting)}"
            return False
        self._execute(ctx, op)
        for rank in expected:
            peer = self.contexts[rank]
            if not peer.done and peer.ops[peer.pc] is op:
                peer.pc += 1
                peer.blocked_on = None
        return True

    def _bit_value(self, ctx: RankContext, name: str) -> int:
        if name not in ctx.bits:
            raise SimulationError(f"rank {ctx.rank} sends undefined bit {name!r}")
        return ctx.bits[name]

    def _execute(self, ctx: RankContext, op) -> None:
        if isinstance(op, AllocEpr):
            bell = np.array([1, 0, 0, 1], dtype=complex) / sqrt(2)
            self.state.add_qubits([op.a, op.b], bell)
            self._log(ctx, op)
        elif isinstance(op, AllocGhz):
            n = len(op.shares)
            ghz = np.zeros(2 ** n, dtype=complex)
            ghz[0] = ghz[-1] = 1 / sqrt(2)
            self.state.add_qubits(list(op.shares), ghz)
            self._log(ctx, op)
        elif isinstance(op, LocalGate):
            self.state.apply_gate(op.gate, op.qubits, op.param)
            self._log(ctx, op)
        elif isinstance(op, Measure):
            outcome = self.state.measure(op.qubit, self.rng)
            ctx.bits[op.bit] = outcome
            self._log(ctx, op, f" = {outcome}")
        elif isinstance(op, Reset):
            self.state.reset(op.qubit, self.rng)
            self._log(ctx, op)
        elif isinstance(op, CondCorrection):
            if op.bit not in ctx.bits:
                raise SimulationError(f"rank {ctx.rank} conditions on undefined bit {op.bit!r}")
            if ctx.bits[op.bit]:
                self.state.apply_gate(op.gate, (op.qubit,))
            self._log(ctx, op, f" ({'applied' if ctx.bits[op.bit] else 'skipped'})")
        elif isinstance(op, CSend):
            values = tuple(self._bit_value(ctx, b) for b in op.bits)
            self.offers.setdefault((ctx.rank, op.dest), []).append((op.seq, values))
            self._log(ctx, op)
        elif isinstance(op, SyncPoint):
            self._log(ctx, op)
        else:
            raise SimulationError(f"unknown primitive op {op!r}")


def simulate(lowered: LoweredProgram, seed: int = 0, initial: dict | None = None,
             cap: int | None = None) -> SimResult:
    """Run a lowered program to completion; deterministic for a given seed."""
    return _Engine(lowered, seed, initial, cap).run()


# --- monolithic oracle ---------------------------------------------------------------


class _MonoRank:
    __slots__ = ("rank", "events", "pc")

    def __init__(self, rank: int, events: list):
        self.rank = rank
        self.events = events
        self.pc = 0

    @property
    def done(self) -> bool:
        return self.pc >= len(self.events)


def simulate_monolithic(program: Program, n_ranks: int, seed: int = 0,
                        initial: dict | None = None, cap: int | None = None) -> SimResult:
    """Reference semantics on one machine: communication directives become
    identity rebindings (the receiver's handle aliases the sender's qubit),
    expose bodies act directly on the exposed qubit, reduce folds directly.
    Communication consumes zero resources."""
    traces = {r: _Tracer(program, r, n_ranks).run() for r in range(n_ranks)}
    matcher = _Matcher(traces, Protocol.UNSPECIFIED)
    matches, warns = matcher.run()
    if warns:
        raise SimulationError(
            "monolithic interpretation undefined for unmatched endpoints: "
            + "; ".join(w.message for w in warns))

    # map each comm event to its match for rendezvous bookkeeping
    by_event: dict[tuple[int, int], object] = {}
    arrivals: dict[int, set[int]] = {}
    for m in matches:
        if isinstance(m, _P2PMatch):
            by_event[(m.send.rank, m.send.idx)] = m
            by_event[(m.recv.rank, m.recv.idx)] = m
            arrivals[id(m)] = set()
        else:
            for rank, (idx, _) in m.events.items():
                by_event[(rank, idx)] = m
            arrivals[id(m)] = set()

    rng = np.random.default_rng(seed)
    state = GlobalState(cap)
    slot_of: dict = {}
    layout: dict[Qubit, Qubit] = {}
    for rank in sorted(traces):
        for i, vq in enumerate(traces[rank].data_vqs):
            slot = Qubit(rank, i)
            init = (initial or {}).get((rank, i))
            vec = np.array([1, 0], dtype=complex) if init is None \
                else np.asarray(init, dtype=complex)
            state.add_qubits([slot], vec / np.linalg.norm(vec))
            slot_of[vq] = slot
            layout[slot] = slot

    contexts = {r: _MonoRank(r, traces[r].events) for r in sorted(traces)}

    def resolve(vq) -> Qubit:
        if vq not in slot_of:
            raise SimulationError("qubit handle was never delivered")
        return slot_of[vq]

    def complete_match(m) -> None:
        """All parties arrived: apply the directive's monolithic effect."""
        if isinstance(m, _P2PMatch):
            sev, rev = m.send.ev, m.recv.ev
            if m.quantum:
                for src_vq, out_vq in zip(sev.qubits, rev.outs):
                    slot_of[out_vq] = resolve(src_vq)
            else:
                for vq in sev.qubits:
                    state.measure(resolve(vq), rng)
            return
        if m.kind == "expose":
            _, root_ev = m.events[m.root]
            for rank in m.members:
                if rank == m.root:
                    continue
                _, ev = m.events[rank]
                for proxy, exposed in zip(ev.proxies, root_ev.exposed):
                    slot_of[proxy] = resolve(exposed)
            return
        count = m.count
        if m.kind == "scatter":
            _, root_ev = m.events[m.root]
            for mi, member in enumerate(m.members):
                _, ev = m.events[member]
                for src_vq, out_vq in zip(root_ev.send[mi * count:(mi + 1) * count], ev.recv):
                    slot_of[out_vq] = resolve(src_vq)
        elif m.kind == "gather":
            _, root_ev = m.events[m.root]
            for mi, member in enumerate(m.members):
                _, ev = m.events[member]
                for src_vq, out_vq in zip(ev.send, root_ev.recv[mi * count:(mi + 1) * count]):
                    slot_of[out_vq] = resolve(src_vq)
        else:  # reduce
            _, root_ev = m.events[m.root]
            acc = [resolve(vq) for vq in root_ev.recv]
            for member in m.members:
                _, ev = m.events[member]
                for src_vq, acc_slot in zip(ev.send, acc):
                    state.apply_gate(m.fold, (resolve(src_vq), acc_slot))

    while True:
        progressed = False
        for rank in sorted(contexts):
            ctx = contexts[rank]
            while not ctx.done:
                ev = ctx.events[ctx.pc]
                key = (rank, ctx.pc)
                if key in by_event:
                    m = by_event[key]
                    group = arrivals[id(m)]
                    group.add(rank)
                    expected = 2 if isinstance(m, _P2PMatch) else len(m.members)
                    if len(group) < expected:
                        break  # wait for the other parties
                    complete_match(m)
                    for other in list(contexts.values()):
                        okey = (other.rank, other.pc)
                        if okey in by_event and by_event[okey] is m:
                            other.pc += 1
                    progressed = True
                    continue
                if isinstance(ev, EvGate):
                    state.apply_gate(ev.gate, tuple(resolve(q) for q in ev.qubits), ev.param)
                elif isinstance(ev, EvMeasure):
                    state.measure(resolve(ev.qubit), rng)
                elif isinstance(ev, EvReset):
                    state.reset(resolve(ev.qubit), rng)
                ctx.pc += 1
                progressed = True
        if all(ctx.done for ctx in contexts.values()):
            break
        if not progressed:
            blocked = {r: "collective rendezvous" for r, c in contexts.items() if not c.done}
            raise DeadlockError(blocked)

    return SimResult(state, [], {}, layout)
