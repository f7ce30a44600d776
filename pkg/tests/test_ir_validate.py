"""Communicator/group structures and program validation rules."""
from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from netqir.diagnostics import Severity
from netqir.ir import (
    CommHandle,
    comm_from_group,
    comm_rank,
    comm_size,
    comm_world,
    group_from_ranks,
    validate,
)
from netqir.parser import parse_or_raise

MODULE_HEADER = """
declare void @__netqir__initialize()
declare void @__netqir__finalize()
declare %Comm* @__netqir__comm_world()
declare void @__netqir__qsend(%Qubit*, i32, %Comm*)
declare %Array* @__quantum__rt__qubit_allocate_array(i32)
declare %Qubit* @__quantum__rt__array_get(%Array*, i32)
declare void @__quantum__qis__h__body(%Qubit*)
declare void @__quantum__qis__reset__body(%Qubit*)
"""


def errors_of(text: str) -> list:
    program = parse_or_raise(MODULE_HEADER + text)
    return [d for d in validate(program) if d.severity is Severity.ERROR]


def rules_of(text: str) -> set[str]:
    return {d.rule for d in errors_of(text)}


GOOD_MAIN = """
define void @main() {
entry:
  call void @__netqir__initialize()
  %world = call %Comm* @__netqir__comm_world()
  %q = call %Array* @__quantum__rt__qubit_allocate_array(i32 1)
  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)
  call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world)
  call void @__netqir__finalize()
  ret void
}
"""


# --- communicator / group operations -----------------------------------------


def test_comm_rank_identity_on_world():
    world = comm_world(4)
    assert comm_rank(world, 2) == 2
    assert comm_size(world) == 4


def test_comm_rank_is_position_in_member_list():
    comm = CommHandle("c", (3, 1))
    # oracle: the index within the ordered member list
    assert comm_rank(comm, 1) == list(comm.members).index(1) == 1
    assert comm_rank(comm, 3) == 0


def test_comm_rank_not_a_member():
    with pytest.raises(ValueError, match="not a member"):
        comm_rank(CommHandle("c", (3, 1)), 0)


def test_comm_size_cases():
    assert comm_size(comm_world(1)) == 1
    assert comm_size(comm_from_group(group_from_ranks([0, 2], 4))) == 2


def test_group_from_ranks():
    g = group_from_ranks([0, 2], 4)
    assert g.members == (0, 2)
    with pytest.raises(ValueError):
        group_from_ranks([], 4)
    with pytest.raises(ValueError, match="duplicate"):
        group_from_ranks([0, 0], 4)
    with pytest.raises(ValueError, match="out of range"):
        group_from_ranks([0, 9], 4)


def test_duplicate_comm_members_rejected():
    with pytest.raises(ValueError):
        CommHandle("c", (1, 1))


@given(st.lists(st.integers(min_value=0, max_value=63), min_size=1, max_size=16,
                unique=True))
def test_rank_size_bijection(members):
    comm = CommHandle("c", tuple(members))
    ranks = [comm_rank(comm, m) for m in members]
    assert sorted(ranks) == list(range(comm_size(comm)))


# --- validation rules ------------------------------------------------------------


def test_valid_program_has_no_diagnostics():
    assert errors_of(GOOD_MAIN) == []


def test_arity_mismatch_has_location():
    bad = GOOD_MAIN.replace("call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world)",
                            "call void @__netqir__qsend(%Qubit* %q0, %Comm* %world)")
    diags = errors_of(bad)
    assert any(d.rule == "sig-arity" and d.loc is not None for d in diags)


def test_wrong_argument_type_names_declared_signature():
    bad = GOOD_MAIN.replace("call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world)",
                            "call void @__netqir__qsend(%Array* %q, i32 1, %Comm* %world)")
    diags = errors_of(bad)
    assert any(d.rule == "sig-type" and "(Qubit*, i32, Comm*)" in d.message for d in diags)


def test_unknown_intrinsic_located():
    bad = GOOD_MAIN.replace("@__netqir__qsend(%Qubit* %q0", "@__netqir__qsend_quantum(%Qubit* %q0")
    diags = errors_of(bad + "\ndeclare void @__netqir__qsend_quantum(%Qubit*, i32, %Comm*)\n")
    assert any(d.rule == "unknown-intrinsic" and d.loc is not None for d in diags)


def test_unknown_gate_rejected():
    bad = GOOD_MAIN.replace("call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world)",
                            "call void @__quantum__qis__t__body(%Qubit* %q0)")
    assert "unknown-gate" in rules_of(bad)


def test_communication_before_initialize():
    text = """
define void @main() {
entry:
  %world = call %Comm* @__netqir__comm_world()
  %q = call %Array* @__quantum__rt__qubit_allocate_array(i32 1)
  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)
  call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world)
  call void @__netqir__initialize()
  call void @__netqir__finalize()
  ret void
}
"""
    assert "init-order" in rules_of(text)


def test_initialize_on_one_path_only_is_flagged():
    # control-flow reachability oracle: a path through %skip reaches the send
    # without passing initialize
    text = """
declare i32 @__netqir__comm_rank(%Comm*)
define void @main() {
entry:
  %world = call %Comm* @__netqir__comm_world()
  %r = call i32 @__netqir__comm_rank(%Comm* %world)
  %c = icmp eq i32 %r, 0
  br i1 %c, label %init, label %skip
init:
  call void @__netqir__initialize()
  br label %join
skip:
  br label %join
join:
  %q = call %Array* @__quantum__rt__qubit_allocate_array(i32 1)
  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)
  call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world)
  call void @__netqir__finalize()
  ret void
}
"""
    assert "init-order" in rules_of(text)


def test_missing_finalize():
    text = GOOD_MAIN.replace("  call void @__netqir__finalize()\n", "")
    assert "finalize-missing" in rules_of(text)


def test_entry_missing():
    program = parse_or_raise("declare void @__netqir__qsend(%Qubit*, i32, %Comm*)\n")
    assert any(d.rule == "entry-missing" for d in validate(program))


def test_use_after_send_flagged_and_reset_clears():
    bad = GOOD_MAIN.replace(
        "  call void @__netqir__finalize()",
        "  call void @__quantum__qis__h__body(%Qubit* %q0)\n"
        "  call void @__netqir__finalize()")
    assert "linear-use-after-send" in rules_of(bad)
    ok = GOOD_MAIN.replace(
        "  call void @__netqir__finalize()",
        "  call void @__quantum__qis__reset__body(%Qubit* %q0)\n"
        "  call void @__quantum__qis__h__body(%Qubit* %q0)\n"
        "  call void @__netqir__finalize()")
    assert "linear-use-after-send" not in rules_of(ok)


def test_ssa_redefinition():
    bad = GOOD_MAIN.replace(
        "  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)",
        "  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)\n"
        "  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)")
    assert "ssa-redef" in rules_of(bad)


def test_use_of_undefined_value():
    bad = GOOD_MAIN.replace("%Qubit* %q0", "%Qubit* %nope")
    bad = bad.replace("  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)\n", "")
    assert "ssa-undef" in rules_of(bad)


def test_use_before_definition_across_blocks():
    text = """
declare i32 @__netqir__comm_rank(%Comm*)
define void @main() {
entry:
  call void @__netqir__initialize()
  %world = call %Comm* @__netqir__comm_world()
  %r = call i32 @__netqir__comm_rank(%Comm* %world)
  %c = icmp eq i32 %r, 0
  br i1 %c, label %a, label %b
a:
  %q = call %Array* @__quantum__rt__qubit_allocate_array(i32 1)
  br label %b
b:
  %q0 = call %Qubit* @__quantum__rt__array_get(%Array* %q, i32 0)
  call void @__netqir__finalize()
  ret void
}
"""
    assert "ssa-use-before-def" in rules_of(text)


def test_branch_to_unknown_label():
    text = """
define void @main() {
entry:
  call void @__netqir__initialize()
  call void @__netqir__finalize()
  br label %nowhere
}
"""
    assert "br-unknown-label" in rules_of(text)


def test_group_count_mismatch():
    text = """
declare %Group* @__netqir__group_from_ranks(i32, i32, i32)
define void @main() {
entry:
  call void @__netqir__initialize()
  %g = call %Group* @__netqir__group_from_ranks(i32 3, i32 0, i32 1)
  call void @__netqir__finalize()
  ret void
}
"""
    assert "group-count" in rules_of(text)


def test_fold_only_on_reduce():
    text = GOOD_MAIN.replace(
        "call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world)",
        "call void @__netqir__qsend(%Qubit* %q0, i32 1, %Comm* %world) !fold cz")
    assert "fold-misplaced" in rules_of(text)
