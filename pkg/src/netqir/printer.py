"""Canonical textual form for programs (`.nqir`).

Output is byte-stable for structurally identical programs: fixed opaque-type
header, declarations in stored order, two-space indented instructions, float
literals via shortest round-trip repr.
"""
from __future__ import annotations

from .ir import BinOp, Block, Br, Call, Function, ICmp, Program, Ref, Ret, TypedArg


def format_value(value: Ref | int | float | None, ty: str) -> str:
    if isinstance(value, Ref):
        return str(value)
    if value is None:
        return "null"
    if isinstance(value, float):
        return repr(value)
    return str(int(value))


def format_arg(arg: TypedArg) -> str:
    return f"{arg.ty} {format_value(arg.value, arg.ty)}"


def format_instruction(ins) -> str:
    if isinstance(ins, Call):
        args = ", ".join(format_arg(a) for a in ins.args)
        text = f"call {ins.ret_ty} @{ins.callee}({args})"
        if ins.result is not None:
            text = f"%{ins.result} = " + text
        if ins.fold is not None:
            text += f" !fold {ins.fold}"
        return text
    if isinstance(ins, ICmp):
        return (f"%{ins.result} = icmp {ins.op} {ins.ty} "
                f"{format_value(ins.lhs, ins.ty)}, {format_value(ins.rhs, ins.ty)}")
    if isinstance(ins, BinOp):
        return (f"%{ins.result} = {ins.op} {ins.ty} "
                f"{format_value(ins.lhs, ins.ty)}, {format_value(ins.rhs, ins.ty)}")
    if isinstance(ins, Br):
        if ins.cond is None:
            return f"br label %{ins.then_label}"
        return f"br i1 {ins.cond}, label %{ins.then_label}, label %{ins.else_label}"
    if isinstance(ins, Ret):
        return "ret void"
    raise TypeError(f"unprintable instruction {ins!r}")


def format_function(func: Function) -> str:
    if func.is_declaration:
        params = ", ".join(ty for ty, _ in func.params)
        return f"declare {func.ret_ty} @{func.name}({params})"
    params = ", ".join(f"{ty} %{name}" for ty, name in func.params)
    lines = [f"define {func.ret_ty} @{func.name}({params}) {{"]
    for block in func.blocks:
        lines.append(f"{block.label}:")
        for ins in block.instructions:
            lines.append("  " + format_instruction(ins))
    lines.append("}")
    return "\n".join(lines)


def print_program(program: Program) -> str:
    parts = [f"%{name} = type opaque" for name in program.opaque_types]
    decls = [f for f in program.functions if f.is_declaration]
    defs = [f for f in program.functions if not f.is_declaration]
    if decls:
        parts.append("")
        parts.extend(format_function(f) for f in decls)
    for f in defs:
        parts.append("")
        parts.append(format_function(f))
    return "\n".join(parts) + "\n"
