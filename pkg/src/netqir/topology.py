"""Physical topology models and the communication-cost analyzer.

The analyzer reproduces the distributed-QFT resource study: a QFT over N
QPUs (one data qubit each) runs as N-1 epochs, epoch i sharing qubit i-1
with the k = N-i following QPUs.  Per-epoch costs are closed forms fitted to
the published coordinate series; the coordinates themselves are the oracle
the test suite pins.

Cost intuition per remote operation: teledata sends the qubit out and back
(two EPR pairs), telegate uses a single cat-link EPR pair, expose shares one
GHZ state per epoch.  Under the star ("via one communicator") topology the
relay adds one round trip per epoch; the expose series under the star is
reproduced exactly as published, including its anomalous zero at k = 1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from math import pi

from .ir import Program, Protocol


class TopologyKind(Enum):
    DIRECT = "direct"                # complete graph over QPUs
    COMMUNICATOR = "communicator"    # star through one relay node


@dataclass(frozen=True)
class Topology:
    kind: TopologyKind
    qpus: int

    def __post_init__(self):
        if self.qpus < 2:
            raise ValueError("a distributed topology needs at least 2 QPUs")


def direct(qpus: int) -> Topology:
    return Topology(TopologyKind.DIRECT, qpus)


def via_communicator(qpus: int) -> Topology:
    return Topology(TopologyKind.COMMUNICATOR, qpus)


@dataclass(frozen=True)
class Epoch:
    """Stage i of the distributed QFT: H on qubit i-1 plus controlled
    rotations from the k = N-i following qubits."""

    index: int
    remote_participants: int

    def __post_init__(self):
        if self.index < 1 or self.remote_participants < 1:
            raise ValueError("epoch index and remote count must be >= 1")


@dataclass(frozen=True)
class CostReport:
    consumed: int           # total communication qubits consumed
    needed_per_qpu: int     # communication qubits one QPU must reserve
    syncs: int              # total synchronization rounds


_ANALYZER_PROTOCOLS = (Protocol.TELEDATA, Protocol.TELEGATE, Protocol.EXPOSE)


def per_epoch_cost(protocol: Protocol, topology: Topology, k: int) -> int:
    """Communication qubits consumed by one epoch with k remote participants."""
    if k < 1:
        raise ValueError("k must be >= 1")
    star = topology.kind is TopologyKind.COMMUNICATOR
    if protocol is Protocol.TELEDATA:
        return 4 * (k + 1) if star else 4 * k
    if protocol is Protocol.TELEGATE:
        return 2 * (k + 1) if star else 2 * k
    if protocol is Protocol.EXPOSE:
        if star:
            return 0 if k == 1 else 2 * k
        return k + 1
    raise ValueError(f"analyzer protocol must be one of {_ANALYZER_PROTOCOLS}")


def per_epoch_syncs(protocol: Protocol, topology: Topology, k: int) -> int:
    """Synchronization rounds one epoch costs (cross-checked against lowering)."""
    star = topology.kind is TopologyKind.COMMUNICATOR
    if protocol in (Protocol.TELEDATA, Protocol.TELEGATE):
        return 2 * k + (2 if star else 0)
    if protocol is Protocol.EXPOSE:
        return 2
    raise ValueError(f"analyzer protocol must be one of {_ANALYZER_PROTOCOLS}")


def needed_per_qpu(protocol: Protocol, topology: Topology) -> int:
    """Communication qubits a single QPU must reserve."""
    n = topology.qpus
    star = topology.kind is TopologyKind.COMMUNICATOR
    if protocol is Protocol.TELEDATA:
        return 2 if star else 2 * n
    if protocol is Protocol.TELEGATE:
        return 1 if star else n
    if protocol is Protocol.EXPOSE:
        return 1
    raise ValueError(f"analyzer protocol must be one of {_ANALYZER_PROTOCOLS}")


def analyze_qft(n_qpus: int, protocol: Protocol, topology_kind: TopologyKind) -> CostReport:
    """Resource totals for the distributed QFT over `n_qpus` QPUs."""
    if n_qpus < 2:
        raise ValueError("analyze_qft needs at least 2 QPUs")
    topo = Topology(topology_kind, n_qpus)
    ks = range(1, n_qpus)
    return CostReport(
        consumed=sum(per_epoch_cost(protocol, topo, k) for k in ks),
        needed_per_qpu=needed_per_qpu(protocol, topo),
        syncs=sum(per_epoch_syncs(protocol, topo, k) for k in ks),
    )


# --- dataset emission -----------------------------------------------------------


CURVE_COLUMNS = ("protocol", "topology", "n_qpus", "consumed", "needed_per_qpu", "syncs")


def emit_curves(protocols=_ANALYZER_PROTOCOLS,
                topologies=(TopologyKind.DIRECT, TopologyKind.COMMUNICATOR),
                n_range: tuple[int, int] = (2, 11)) -> list[dict]:
    """Full sweep as rows ordered by (protocol, topology, N)."""
    lo, hi = n_range
    if lo < 2 or hi < lo:
        raise ValueError(f"invalid QPU range {n_range}")
    rows = []
    for protocol in protocols:
        for kind in topologies:
            for n in range(lo, hi + 1):
                report = analyze_qft(n, protocol, kind)
                rows.append({
                    "protocol": protocol.value,
                    "topology": kind.value,
                    "n_qpus": n,
                    "consumed": report.consumed,
                    "needed_per_qpu": report.needed_per_qpu,
                    "syncs": report.syncs,
                })
    return rows


def curves_to_csv(rows: list[dict]) -> str:
    lines = [",".join(CURVE_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in CURVE_COLUMNS))
    return "\n".join(lines) + "\n"


def curves_to_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=2) + "\n"


# --- QFT circuit construction -------------------------------------------------


def rotation_angle(m: int) -> float:
    """Controlled-phase angle of the m-th QFT rotation, 2*pi / 2^(m+1)."""
    return 2.0 * pi / float(2 ** (m + 1))


def qft_program(n: int) -> Program:
    """Distributed QFT program over N = n+1 ranks, one data qubit per rank.

    Epoch i (1-based) puts H on rank i-1's qubit, then exposes it so ranks
    i..n apply their controlled rotations; the bit-reversing swap network of
    the textbook circuit is intentionally absent, matching the epoch
    decomposition.
    """
    if n < 1:
        raise ValueError("qft_program needs n >= 1")
    from .builder import ProgramExecutor, emit, new_program

    main, world = new_program()
    q = main.alloc_qubits(1)
    for i in range(1, n + 1):
        root = i - 1
        with main.rank_conditional(world, root) as s:
            s.h(q[0])
        proxy = main.expose(q[0], root, world)
        for j in range(i, n + 1):
            with main.rank_conditional(world, j) as s:
                s.cp(rotation_angle(j - root), proxy, q[0])
    # the last qubit's lone H closes the transform; it is local, so it costs
    # no communication and belongs to no epoch
    with main.rank_conditional(world, n) as s:
        s.h(q[0])
    main.finalize()
    return emit(main, ProgramExecutor())


def qft_text(n: int) -> str:
    from .printer import print_program

    return print_program(qft_program(n))
