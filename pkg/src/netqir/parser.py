"""Lexer and recursive-descent parser for the `.nqir` textual form.

The lexer is total: every input either tokenizes or yields a lex diagnostic
with a location.  Comments run from `;` to end of line.  The parser builds an
`ir.Program`; signature-level checks (unknown intrinsics, arity) are left to
`ir.validate` so they carry the same rule ids everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

from .diagnostics import Diagnostic, ParseError, SourceLoc, error
from .ir import (
    OPAQUE_TYPES,
    BinOp,
    Block,
    Br,
    Call,
    Function,
    ICmp,
    Program,
    Ref,
    Ret,
    TypedArg,
)

_PUNCT = "(){},=*:!"
_KEYWORDS = frozenset({
    "declare", "define", "call", "br", "ret", "type", "opaque", "label",
    "icmp", "add", "sub", "eq", "ne", "slt", "void", "null", "to",
    "i1", "i32", "i64", "double", "true", "false",
})
_SCALAR_TYPES = frozenset({"void", "i1", "i32", "i64", "double"})


@dataclass(frozen=True)
class Token:
    kind: str          # keyword | ident | local | global | int | float | punct | label | eof
    text: str
    loc: SourceLoc


class Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1
        self.diagnostics: list[Diagnostic] = []

    def _loc(self) -> SourceLoc:
        return SourceLoc(self.line, self.col)

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.pos < len(self.text) and self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _peek(self, offset: int = 0) -> str:
        i = self.pos + offset
        return self.text[i] if i < len(self.text) else ""

    def tokens(self) -> list[Token]:
        out: list[Token] = []
        while self.pos < len(self.text):
            c = self._peek()
            if c in " \t\r\n":
                self._advance()
                continue
            if c == ";":
                while self.pos < len(self.text) and self._peek() != "\n":
                    self._advance()
                continue
            loc = self._loc()
            if c in _PUNCT:
                out.append(Token("punct", c, loc))
                self._advance()
                continue
            if c in "%@":
                self._advance()
                name = self._ident_text()
                if not name:
                    self.diagnostics.append(error("lex", f"dangling '{c}'", loc))
                    continue
                out.append(Token("local" if c == "%" else "global", name, loc))
                continue
            if c.isdigit() or (c == "-" and (self._peek(1).isdigit() or self._peek(1) == ".")):
                out.append(self._number(loc))
                continue
            if c.isalpha() or c == "_":
                name = self._ident_text()
                kind = "keyword" if name in _KEYWORDS else "ident"
                out.append(Token(kind, name, loc))
                continue
            self.diagnostics.append(error("lex", f"unexpected character {c!r}", loc))
            self._advance()
        out.append(Token("eof", "", self._loc()))
        return out

    def _ident_text(self) -> str:
        start = self.pos
        while self.pos < len(self.text) and (self._peek().isalnum() or self._peek() in "_."):
            self._advance()
        return self.text[start:self.pos]

    def _number(self, loc: SourceLoc) -> Token:
        start = self.pos
        if self._peek() == "-":
            self._advance()
        while self._peek().isdigit():
            self._advance()
        is_float = False
        if self._peek() == ".":
            is_float = True
            self._advance()
            while self._peek().isdigit():
                self._advance()
        if self._peek() in "eE":
            is_float = True
            self._advance()
            if self._peek() in "+-":
                self._advance()
            while self._peek().isdigit():
                self._advance()
        text = self.text[start:self.pos]
        return Token("float" if is_float else "int", text, loc)


class _Syntax(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


class Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    # -- token helpers ------------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "eof":
            self.i += 1
        return tok

    def _fail(self, message: str, tok: Token | None = None) -> _Syntax:
        tok = tok or self.peek()
        return _Syntax(error("syntax", message, tok.loc))

    def expect_punct(self, ch: str) -> Token:
        tok = self.next()
        if tok.kind != "punct" or tok.text != ch:
            raise self._fail(f"expected '{ch}', found {tok.text!r}", tok)
        return tok

    def expect_keyword(self, word: str) -> Token:
        tok = self.next()
        if tok.text != word:
            raise self._fail(f"expected '{word}', found {tok.text!r}", tok)
        return tok

    def at_punct(self, ch: str) -> bool:
        t = self.peek()
        return t.kind == "punct" and t.text == ch

    # -- grammar ------------------------------------------------------------

    def parse_module(self) -> Program:
        functions: list[Function] = []
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind == "local":
                self._parse_type_decl()
            elif tok.text == "declare":
                functions.append(self._parse_declare())
            elif tok.text == "define":
                functions.append(self._parse_define())
            else:
                raise self._fail(f"expected declaration or definition, found {tok.text!r}", tok)
        return Program(functions=tuple(functions))

    def _parse_type_decl(self) -> None:
        tok = self.next()
        self.expect_punct("=")
        self.expect_keyword("type")
        self.expect_keyword("opaque")
        if tok.text not in OPAQUE_TYPES:
            raise self._fail(f"unknown opaque type %{tok.text}", tok)

    def _parse_type(self) -> str:
        tok = self.next()
        if tok.kind == "local":
            self.expect_punct("*")
            ty = f"%{tok.text}*"
            if tok.text not in OPAQUE_TYPES:
                raise self._fail(f"unknown pointer type {ty}", tok)
            return ty
        if tok.text in _SCALAR_TYPES:
            if self.at_punct("*"):
                self.next()
                return tok.text + "*"
            return tok.text
        raise self._fail(f"expected a type, found {tok.text!r}", tok)

    def _parse_declare(self) -> Function:
        self.expect_keyword("declare")
        ret_ty = self._parse_type()
        name = self._expect_global()
        self.expect_punct("(")
        params: list[tuple[str, str]] = []
        while not self.at_punct(")"):
            params.append((self._parse_type(), ""))
            if self.at_punct(","):
                self.next()
        self.expect_punct(")")
        return Function(name, ret_ty, tuple(params), is_declaration=True)

    def _parse_define(self) -> Function:
        self.expect_keyword("define")
        ret_ty = self._parse_type()
        name = self._expect_global()
        self.expect_punct("(")
        params: list[tuple[str, str]] = []
        while not self.at_punct(")"):
            ty = self._parse_type()
            ptok = self.next()
            if ptok.kind != "local":
                raise self._fail("expected parameter name", ptok)
            params.append((ty, ptok.text))
            if self.at_punct(","):
                self.next()
        self.expect_punct(")")
        self.expect_punct("{")
        blocks: list[Block] = []
        while not self.at_punct("}"):
            blocks.append(self._parse_block())
        self.expect_punct("}")
        return Function(name, ret_ty, tuple(params), tuple(blocks))

    def _expect_global(self) -> str:
        tok = self.next()
        if tok.kind != "global":
            raise self._fail("expected @function name", tok)
        return tok.text

    def _parse_block(self) -> Block:
        tok = self.next()
        if tok.kind not in ("ident", "keyword"):
            raise self._fail("expected block label", tok)
        self.expect_punct(":")
        instructions = []
        while True:
            nxt = self.peek()
            if self.at_punct("}"):
                break
            if nxt.kind in ("ident", "keyword") and self.peek(1).kind == "punct" \
                    and self.peek(1).text == ":":
                break
            instructions.append(self._parse_instruction())
        return Block(tok.text, tuple(instructions))

    def _parse_instruction(self):
        tok = self.peek()
        if tok.kind == "local":
            self.next()
            self.expect_punct("=")
            op = self.peek()
            if op.text == "call":
                return self._parse_call(result=tok.text, loc=tok.loc)
            if op.text == "icmp":
                self.next()
                cmp_op = self.next()
                if cmp_op.text not in ("eq", "ne", "slt"):
                    raise self._fail(f"unknown icmp predicate {cmp_op.text!r}", cmp_op)
                ty = self._parse_type()
                lhs = self._parse_value(ty)
                self.expect_punct(",")
                rhs = self._parse_value(ty)
                return ICmp(tok.text, cmp_op.text, ty, lhs, rhs, loc=tok.loc)
            if op.text in ("add", "sub"):
                self.next()
                ty = self._parse_type()
                lhs = self._parse_value(ty)
                self.expect_punct(",")
                rhs = self._parse_value(ty)
                return BinOp(tok.text, op.text, ty, lhs, rhs, loc=tok.loc)
            raise self._fail(f"expected call/icmp/add/sub after '=', found {op.text!r}", op)
        if tok.text == "call":
            return self._parse_call(result=None, loc=tok.loc)
        if tok.text == "br":
            return self._parse_br()
        if tok.text == "ret":
            self.next()
            self.expect_keyword("void")
            return Ret(loc=tok.loc)
        raise self._fail(f"expected an instruction, found {tok.text!r}", tok)

    def _parse_call(self, result: str | None, loc: SourceLoc) -> Call:
        self.expect_keyword("call")
        ret_ty = self._parse_type()
        callee = self._expect_global()
        self.expect_punct("(")
        args: list[TypedArg] = []
        while not self.at_punct(")"):
            ty = self._parse_type()
            args.append(TypedArg(ty, self._parse_value(ty)))
            if self.at_punct(","):
                self.next()
        self.expect_punct(")")
        fold = None
        if self.at_punct("!"):
            self.next()
            attr = self.next()
            if attr.text != "fold":
                raise self._fail(f"unknown call attribute !{attr.text}", attr)
            gate = self.next()
            if gate.kind not in ("ident", "keyword"):
                raise self._fail("expected gate name after !fold", gate)
            fold = gate.text
        if result is not None and ret_ty == "void":
            raise _Syntax(error("syntax", "void call cannot define a value", loc))
        return Call(result, ret_ty, callee, tuple(args), fold=fold, loc=loc)

    def _parse_value(self, ty: str):
        tok = self.next()
        if tok.kind == "local":
            return Ref(tok.text)
        if tok.text == "null":
            return None
        if tok.kind == "int":
            value = int(tok.text)
            if ty == "double":
                return float(value)
            return value
        if tok.kind == "float":
            return float(tok.text)
        if tok.text in ("true", "false"):
            return 1 if tok.text == "true" else 0
        raise self._fail(f"expected a value, found {tok.text!r}", tok)

    def _parse_br(self) -> Br:
        tok = self.expect_keyword("br")
        nxt = self.peek()
        if nxt.text == "label":
            self.next()
            target = self.next()
            if target.kind != "local":
                raise self._fail("expected %label", target)
            return Br(None, target.text, loc=tok.loc)
        self.expect_keyword("i1")
        cond = self._parse_value("i1")
        if not isinstance(cond, Ref):
            raise self._fail("branch condition must be an SSA value", nxt)
        self.expect_punct(",")
        self.expect_keyword("label")
        then_tok = self.next()
        self.expect_punct(",")
        self.expect_keyword("label")
        else_tok = self.next()
        if then_tok.kind != "local" or else_tok.kind != "local":
            raise self._fail("expected %label targets", then_tok)
        return Br(cond, then_tok.text, else_tok.text, loc=tok.loc)


def parse_module(text: str) -> tuple[Program | None, list[Diagnostic]]:
    """Parse text into a Program; (None, diagnostics) on lex/syntax errors."""
    lexer = Lexer(text)
    tokens = lexer.tokens()
    if lexer.diagnostics:
        return None, lexer.diagnostics
    parser = Parser(tokens)
    try:
        return parser.parse_module(), []
    except _Syntax as exc:
        return None, [exc.diag]


def parse_or_raise(text: str) -> Program:
    program, diags = parse_module(text)
    if program is None:
        raise ParseError(diags)
    return program
