"""Signature table and function-name grammar.

The declared-signature strings below are the published interface of the
communication functions and are the oracle for signature_of.
"""
from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from netqir.diagnostics import UnknownIntrinsicError
from netqir.intrinsics import (
    COMM_INTRINSICS,
    IntrinsicClassification,
    classify,
    intrinsic_symbol,
    signature_of,
)

DECLARED = {
    # point-to-point sends
    "__netqir__qsend_array": "(Array*, i32, i32, Comm*)",
    "__netqir__qsend_array_teledata": "(Array*, i32, i32, Comm*)",
    "__netqir__qsend_array_telegate": "(Array*, i32, i32, Comm*)",
    "__netqir__qsend": "(Qubit*, i32, Comm*)",
    "__netqir__qsend_teledata": "(Qubit*, i32, Comm*)",
    "__netqir__qsend_telegate": "(Qubit*, i32, Comm*)",
    "__netqir__measure_send_array": "(Array*, i32, i32, Comm*)",
    "__netqir__measure_send": "(Qubit*, i32, Comm*)",
    # point-to-point receives
    "__netqir__qrecv_array": "(Array**, i32, i32, Comm*)",
    "__netqir__qrecv_array_teledata": "(Array**, i32, i32, Comm*)",
    "__netqir__qrecv_array_telegate": "(Array**, i32, i32, Comm*)",
    "__netqir__qrecv": "(Qubit**, i32, Comm*)",
    "__netqir__qrecv_teledata": "(Qubit**, i32, Comm*)",
    "__netqir__qrecv_telegate": "(Qubit**, i32, Comm*)",
    "__netqir__measure_recv_array": "(i1*, i32, i32, Comm*)",
    "__netqir__measure_recv": "(i1*, i32, i32, Comm*)",
    # collectives
    "__netqir__scatter": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__scatter_teledata": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__scatter_telegate": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__gather": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__gather_teledata": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__gather_telegate": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__reduce": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__reduce_teledata": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__reduce_telegate": "(Array*, i32, Array*, i32, i32, Comm*)",
    "__netqir__expose": "(Qubit*, i32, Comm*)",
    "__netqir__expose_array": "(Array*, i32, i32, Comm*)",
}

COMM_NAMES = sorted(DECLARED)


def test_declared_signatures_exact():
    for name, expected in DECLARED.items():
        assert signature_of(name).declared == expected, name


def test_signature_closure_is_total():
    # every communication intrinsic in the table has exactly one signature
    assert {intrinsic_symbol(b) for b in COMM_INTRINSICS} == set(DECLARED)


def test_state_and_datatype_functions():
    assert signature_of("__netqir__initialize").declared == "()"
    assert signature_of("__netqir__finalize").declared == "()"
    assert signature_of("__netqir__comm_rank").declared == "(Comm*)"
    assert signature_of("__netqir__comm_rank").surface_ret == "i32"
    assert signature_of("__netqir__comm_size").surface_ret == "i32"
    assert signature_of("__netqir__comm_world").surface_ret == "%Comm*"
    assert signature_of("__netqir__comm_from_group").declared == "(Group*)"
    assert signature_of("__netqir__group_from_ranks").variadic_tail is not None


def test_qrecv_out_slot_surfaces_as_return():
    sig = signature_of("__netqir__qrecv")
    assert sig.declared == "(Qubit**, i32, Comm*)"
    assert sig.surface_params == ("i32", "%Comm*")
    assert sig.surface_ret == "%Qubit*"


def test_scatter_has_six_declared_params():
    sig = signature_of("__netqir__scatter")
    assert len(sig.params) == 6
    assert sig.surface_ret == "void"


def test_unknown_intrinsic():
    with pytest.raises(UnknownIntrinsicError):
        signature_of("__netqir__bogus")
    with pytest.raises(UnknownIntrinsicError):
        signature_of("__quantum__qis__t__body")
    with pytest.raises(UnknownIntrinsicError):
        signature_of("not_a_symbol")


@pytest.mark.parametrize("name,base,array,protocol", [
    ("__netqir__qsend_array_teledata", "qsend", True, "teledata"),
    ("__netqir__expose", "expose", False, "none"),
    ("__netqir__scatter_telegate", "scatter", False, "telegate"),
    ("__netqir__measure_send_array", "measure_send", True, "none"),
    ("__netqir__qrecv_telegate", "qrecv", False, "telegate"),
    ("__netqir__expose_array", "expose", True, "none"),
    ("__netqir__comm_rank", "comm_rank", False, "none"),
])
def test_classify_examples(name, base, array, protocol):
    cls = classify(name)
    assert cls == IntrinsicClassification(base, array, protocol)
    assert cls.name == name


def test_classify_bijection_over_comm_names():
    seen = {}
    for name in COMM_NAMES:
        cls = classify(name)
        assert cls.name == name
        assert cls not in seen, f"{name} and {seen.get(cls)} classify identically"
        seen[cls] = name
    assert len(seen) == len(COMM_NAMES)


@pytest.mark.parametrize("name", [
    "__netqir__qsend_quantum",      # suffix outside the grammar
    "__netqir__expose_teledata",    # expose has no protocol variants
    "__netqir__teledata",           # modifier without a base
    "__netqir__qsend_array_array",
    "qsend",                        # missing prefix
])
def test_classify_rejects(name):
    with pytest.raises(UnknownIntrinsicError):
        classify(name)


@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=30))
def test_classify_total_over_arbitrary_suffixes(suffix):
    name = "__netqir__" + suffix
    try:
        cls = classify(name)
    except UnknownIntrinsicError:
        return
    assert cls.name == name
