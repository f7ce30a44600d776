"""NetQIR toolchain: IR model, textual syntax, builder, protocol lowering,
topology-aware cost analysis, and a multi-QPU state-vector simulator."""

from .builder import PrinterExecutor, ProgramExecutor, emit, new_program
from .intrinsics import IntrinsicClassification, Signature, classify, signature_of
from .ir import (
    CommHandle,
    GroupHandle,
    Program,
    Protocol,
    comm_from_group,
    comm_rank,
    comm_size,
    comm_world,
    group_from_ranks,
    validate,
)
from .lowering import lower
from .parser import parse_module, parse_or_raise
from .primitives import LoweredProgram
from .printer import print_program
from .simulator import GlobalState, fidelity, simulate, simulate_monolithic
from .topology import (
    CostReport,
    Topology,
    TopologyKind,
    analyze_qft,
    direct,
    emit_curves,
    per_epoch_cost,
    qft_program,
    via_communicator,
)

__all__ = [
    "CommHandle", "CostReport", "GlobalState", "GroupHandle",
    "IntrinsicClassification", "LoweredProgram", "PrinterExecutor", "Program",
    "ProgramExecutor", "Protocol", "Signature", "Topology", "TopologyKind",
    "analyze_qft", "classify", "comm_from_group", "comm_rank", "comm_size",
    "comm_world", "direct", "emit", "emit_curves", "fidelity",
    "group_from_ranks", "lower", "new_program", "parse_module",
    "parse_or_raise", "per_epoch_cost", "print_program", "qft_program",
    "signature_of", "simulate", "simulate_monolithic", "validate",
    "via_communicator",
]
