"""Diagnostics and error types shared across the toolchain."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class SourceLoc:
    """1-based line/column position in a source file."""

    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Diagnostic:
    """One finding from the lexer, parser, validator or lowering.

    `rule` is a stable machine-readable id; `loc` is None for programs built
    programmatically (no source text to point into).
    """

    severity: Severity
    rule: str
    message: str
    loc: SourceLoc | None = field(default=None)

    def __str__(self) -> str:
        where = f"{self.loc}: " if self.loc else ""
        return f"{where}{self.severity.value}: [{self.rule}] {self.message}"


def error(rule: str, message: str, loc: SourceLoc | None = None) -> Diagnostic:
    return Diagnostic(Severity.ERROR, rule, message, loc)


def warning(rule: str, message: str, loc: SourceLoc | None = None) -> Diagnostic:
    return Diagnostic(Severity.WARNING, rule, message, loc)


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity is Severity.ERROR for d in diags)


class NetQIRError(Exception):
    """Base for all raised toolchain errors."""


class UnknownIntrinsicError(NetQIRError):
    pass


class ParseError(NetQIRError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class ValidationError(NetQIRError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class BuildError(NetQIRError):
    pass


class LoweringError(NetQIRError):
    def __init__(self, rule: str, message: str, loc: SourceLoc | None = None):
        self.rule = rule
        self.loc = loc
        super().__init__(message)


class SimulationError(NetQIRError):
    pass


class DeadlockError(SimulationError):
    def __init__(self, blocked: dict[object, str]):
        self.blocked = blocked
        detail = ", ".join(f"rank {r} on {what}" for r, what in sorted(blocked.items(), key=lambda kv: str(kv[0])))
        super().__init__(f"deadlock detected: {detail}" if blocked else "deadlock detected: no runnable rank")


class CapacityError(SimulationError):
    pass
