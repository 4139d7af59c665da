"""A miniature stateful command language exercising read/eval/print end to end.

Commands bind integer definitions, check integer equations as cheap stand-ins
for proofs, delay interruptibly, print, and fail on demand.  Reading is total
(malformed input becomes a diagnosed-error command whose evaluation raises the
recorded error), evaluation is pure over immutable state values, and printing
never changes state.

Equation checks carrying a ``slow`` weight are returned as proof obligations
rather than checked inline: their outcome is irrelevant to subsequent
commands, so the caller may fork them and join later.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Union

from .evaluation import Interrupt, ProgramError, interruptible_sleep
from .syntax import CommandSpan, KeywordTable, Token, TokenKind, scan_spans

BASE_COMMAND_KEYWORDS = frozenset(
    {"theory", "def", "thm", "slow", "print", "fail", "end", "keyword"}
)
BASE_MINOR_KEYWORDS = frozenset({"=", ":", "+", "*", "imports", "begin", "sorry"})


def base_keyword_table() -> KeywordTable:
    return KeywordTable(BASE_COMMAND_KEYWORDS, BASE_MINOR_KEYWORDS)


# -- toplevel state ------------------------------------------------------------


@dataclass(frozen=True)
class Theorem:
    lhs: str
    rhs: str
    proved: bool


@dataclass(frozen=True)
class ToplevelState:
    """Immutable per-position state; every transaction produces a new value."""

    defs: tuple[tuple[str, int], ...] = ()
    thms: tuple[tuple[str, Theorem], ...] = ()
    keywords: frozenset[str] = frozenset()
    node_open: bool = False
    node_name: str = ""

    def lookup(self, name: str) -> int | None:
        for key, value in self.defs:
            if key == name:
                return value
        return None

    def bind(self, name: str, value: int) -> "ToplevelState":
        kept = tuple((k, v) for k, v in self.defs if k != name)
        return replace(self, defs=kept + ((name, value),))

    def add_theorem(self, name: str, thm: Theorem) -> "ToplevelState":
        kept = tuple((k, t) for k, t in self.thms if k != name)
        return replace(self, thms=kept + ((name, thm),))

    def add_keyword(self, name: str) -> "ToplevelState":
        return replace(self, keywords=self.keywords | {name})


EMPTY_STATE = ToplevelState()


def state_hash(state: ToplevelState) -> str:
    canonical = repr((
        sorted(state.defs),
        sorted(state.thms),
        sorted(state.keywords),
        state.node_open,
        state.node_name,
    ))
    return hashlib.sha256(canonical.encode()).hexdigest()


def merge_states(states: list[ToplevelState]) -> ToplevelState:
    """Union of environments; a later import wins on clashes."""
    merged = EMPTY_STATE
    for state in states:
        for name, value in state.defs:
            merged = merged.bind(name, value)
        for name, thm in state.thms:
            merged = merged.add_theorem(name, thm)
        merged = replace(merged, keywords=merged.keywords | state.keywords)
    return merged


# -- expressions -----------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Name:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Name, BinOp]


def eval_expr(expr: Expr, state: ToplevelState) -> int:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Name):
        value = state.lookup(expr.name)
        if value is None:
            raise ProgramError(f"unbound name {expr.name!r}")
        return value
    left = eval_expr(expr.left, state)
    right = eval_expr(expr.right, state)
    return left + right if expr.op == "+" else left * right


def expr_src(expr: Expr) -> str:
    if isinstance(expr, Num):
        return str(expr.value)
    if isinstance(expr, Name):
        return expr.name
    return f"{expr_src(expr.left)} {expr.op} {expr_src(expr.right)}"


# -- internal command forms ---------------------------------------------------------


@dataclass(frozen=True)
class NoOp:
    pass


@dataclass(frozen=True)
class TheoryCmd:
    name: str
    imports: tuple[str, ...] = ()


@dataclass(frozen=True)
class DefCmd:
    name: str
    expr: Expr


@dataclass(frozen=True)
class ThmCmd:
    name: str
    lhs: Expr
    rhs: Expr
    sorry: bool = False
    slow_ms: int = 0


@dataclass(frozen=True)
class SlowCmd:
    ms: int


@dataclass(frozen=True)
class PrintCmd:
    expr: Expr


@dataclass(frozen=True)
class FailCmd:
    message: str


@dataclass(frozen=True)
class EndCmd:
    pass


@dataclass(frozen=True)
class KeywordCmd:
    name: str


@dataclass(frozen=True)
class DynamicCmd:
    name: str


@dataclass(frozen=True)
class DiagnosedError:
    """Total read encodes a syntax failure; eval raises the recorded error."""

    reason: str
    pos: int = 0


Command = Union[
    NoOp, TheoryCmd, DefCmd, ThmCmd, SlowCmd, PrintCmd, FailCmd,
    EndCmd, KeywordCmd, DynamicCmd, DiagnosedError,
]


# -- read ---------------------------------------------------------------------------


class _TokenCursor:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Token | None:
        tok = self.peek()
        if tok is not None:
            self.i += 1
        return tok

    def at_end(self) -> bool:
        return self.i >= len(self.tokens)

    def pos(self) -> int:
        tok = self.peek()
        if tok is not None:
            return tok.start
        return self.tokens[-1].end if self.tokens else 0


class _ReadError(Exception):
    def __init__(self, reason: str, pos: int):
        super().__init__(reason)
        self.reason = reason
        self.pos = pos


def read_command(table: KeywordTable, src: str, name: str = "") -> Command:
    """Total read: source text to an internal command, never raising.

    ``name`` is the command name the front-end discovered when it split the
    span; it lets spans led by dynamically declared keywords parse as
    dynamic commands even though the base table does not know them.
    """
    spans = scan_spans(table, src)
    significant = [t for s in spans for t in s.significant_tokens()]
    if not significant:
        return NoOp()
    for tok in significant:
        if tok.kind is TokenKind.ERROR:
            return DiagnosedError(tok.reason or "lexical error", tok.start)
    head = significant[0]
    if head.kind is not TokenKind.COMMAND_KEYWORD:
        if name and head.content == name:
            return DynamicCmd(name)
        return DiagnosedError("text before first command keyword", head.start)
    cursor = _TokenCursor(significant[1:])
    try:
        command = _parse_body(head.content, cursor)
        if not cursor.at_end():
            raise _ReadError("unexpected trailing input", cursor.pos())
        return command
    except _ReadError as exc:
        return DiagnosedError(exc.reason, exc.pos)


def _expect(cursor: _TokenCursor, kind: TokenKind, what: str) -> Token:
    tok = cursor.next()
    if tok is None or tok.kind is not kind:
        raise _ReadError(f"expected {what}", cursor.pos() if tok is None else tok.start)
    return tok


def _expect_minor(cursor: _TokenCursor, content: str) -> None:
    tok = cursor.next()
    if tok is None or tok.content != content:
        raise _ReadError(f"expected {content!r}",
                         cursor.pos() if tok is None else tok.start)


def _parse_expr(cursor: _TokenCursor) -> Expr:
    expr = _parse_term(cursor)
    while (tok := cursor.peek()) is not None and tok.content == "+":
        cursor.next()
        expr = BinOp("+", expr, _parse_term(cursor))
    return expr


def _parse_term(cursor: _TokenCursor) -> Expr:
    expr = _parse_atom(cursor)
    while (tok := cursor.peek()) is not None and tok.content == "*":
        cursor.next()
        expr = BinOp("*", expr, _parse_atom(cursor))
    return expr


def _parse_atom(cursor: _TokenCursor) -> Expr:
    tok = cursor.next()
    if tok is None:
        raise _ReadError("expected expression", cursor.pos())
    if tok.kind is TokenKind.NUMBER:
        return Num(int(tok.content))
    if tok.kind is TokenKind.IDENTIFIER:
        return Name(tok.content)
    raise _ReadError(f"expected number or name, found {tok.content!r}", tok.start)


def _parse_body(name: str, cursor: _TokenCursor) -> Command:
    if name == "theory":
        theory = _expect(cursor, TokenKind.IDENTIFIER, "theory name")
        imports: list[str] = []
        tok = cursor.peek()
        if tok is not None and tok.content == "imports":
            cursor.next()
            while (tok := cursor.peek()) is not None and tok.kind is TokenKind.IDENTIFIER:
                imports.append(cursor.next().content)
            if not imports:
                raise _ReadError("expected imported node name", cursor.pos())
        _expect_minor(cursor, "begin")
        return TheoryCmd(theory.content, tuple(imports))
    if name == "def":
        ident = _expect(cursor, TokenKind.IDENTIFIER, "identifier")
        _expect_minor(cursor, "=")
        return DefCmd(ident.content, _parse_expr(cursor))
    if name == "thm":
        ident = _expect(cursor, TokenKind.IDENTIFIER, "identifier")
        _expect_minor(cursor, ":")
        lhs = _parse_expr(cursor)
        _expect_minor(cursor, "=")
        rhs = _parse_expr(cursor)
        sorry = False
        slow_ms = 0
        tok = cursor.peek()
        if tok is not None and tok.content == "sorry":
            cursor.next()
            sorry = True
        elif tok is not None and tok.content == "slow":
            cursor.next()
            weight = _expect(cursor, TokenKind.NUMBER, "delay in ms")
            slow_ms = int(weight.content)
        return ThmCmd(ident.content, lhs, rhs, sorry, slow_ms)
    if name == "slow":
        ms = _expect(cursor, TokenKind.NUMBER, "delay in ms")
        return SlowCmd(int(ms.content))
    if name == "print":
        return PrintCmd(_parse_expr(cursor))
    if name == "fail":
        parts = []
        while not cursor.at_end():
            tok = cursor.next()
            if tok.kind is TokenKind.STRING:
                parts.append(tok.content[1:-1])
            else:
                parts.append(tok.content)
        return FailCmd(" ".join(parts) if parts else "failed")
    if name == "end":
        return EndCmd()
    if name == "keyword":
        ident = _expect(cursor, TokenKind.IDENTIFIER, "keyword name")
        return KeywordCmd(ident.content)
    return DynamicCmd(name)


# -- eval ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProofObligation:
    """A deferred equation check; its outcome never feeds later commands."""

    theorem: str
    lhs: Expr
    rhs: Expr
    slow_ms: int


@dataclass
class EvalOutput:
    notes: list[tuple[int, str, str]] = field(default_factory=list)
    print_values: list[int] = field(default_factory=list)
    obligations: list[ProofObligation] = field(default_factory=list)
    summary: Command | None = None


def eval_command(command: Command, state: ToplevelState) -> tuple[EvalOutput, ToplevelState]:
    """Run one internalized command; raises ProgramError on failure."""
    out = EvalOutput(summary=command)
    if isinstance(command, NoOp):
        return out, state
    if isinstance(command, DiagnosedError):
        raise ProgramError(command.reason)
    if isinstance(command, TheoryCmd):
        return out, replace(state, node_open=True, node_name=command.name)
    if isinstance(command, DefCmd):
        value = eval_expr(command.expr, state)
        return out, state.bind(command.name, value)
    if isinstance(command, ThmCmd):
        thm = Theorem(expr_src(command.lhs), expr_src(command.rhs), not command.sorry)
        if command.sorry:
            out.notes.append((0, "warning", f"theorem {command.name}: unproven"))
        elif command.slow_ms > 0:
            out.obligations.append(
                ProofObligation(command.name, command.lhs, command.rhs, command.slow_ms))
        else:
            _check_equation(command.lhs, command.rhs, state)
        return out, state.add_theorem(command.name, thm)
    if isinstance(command, SlowCmd):
        interruptible_sleep(command.ms / 1000.0)
        return out, state
    if isinstance(command, PrintCmd):
        out.print_values.append(eval_expr(command.expr, state))
        return out, state
    if isinstance(command, FailCmd):
        raise ProgramError(command.message)
    if isinstance(command, EndCmd):
        return out, replace(state, node_open=False)
    if isinstance(command, KeywordCmd):
        out.notes.append((0, "writeln", f"keyword {command.name} declared"))
        return out, state.add_keyword(command.name)
    if isinstance(command, DynamicCmd):
        if command.name in state.keywords:
            out.notes.append((0, "writeln", f"custom command {command.name}"))
            return out, state
        raise ProgramError(f"undefined command {command.name!r}")
    raise ProgramError(f"unknown command form {command!r}")


def _check_equation(lhs: Expr, rhs: Expr, state: ToplevelState) -> None:
    left = eval_expr(lhs, state)
    right = eval_expr(rhs, state)
    if left != right:
        raise ProgramError(f"{left} ≠ {right}")


def check_obligation(obligation: ProofObligation, state: ToplevelState) -> None:
    """Deferred proof work: interruptible delay, then the equation check."""
    if obligation.slow_ms > 0:
        interruptible_sleep(obligation.slow_ms / 1000.0)
    _check_equation(obligation.lhs, obligation.rhs, state)


# -- print --------------------------------------------------------------------------


def _plural(n: int, noun: str) -> str:
    return f"{n} {noun}" if n == 1 else f"{n} {noun}s"


def print_output(state: ToplevelState, output: EvalOutput) -> list[tuple[int, str, str]]:
    """Render the post-state summary and deferred print values; pure."""
    messages: list[tuple[int, str, str]] = []
    command = output.summary
    if isinstance(command, DefCmd):
        value = state.lookup(command.name)
        messages.append(
            (0, "writeln", f"{command.name} = {value}; {_plural(len(state.defs), 'definition')}"))
    elif isinstance(command, ThmCmd):
        messages.append(
            (0, "writeln",
             f"theorem {command.name}: {expr_src(command.lhs)} = {expr_src(command.rhs)}; "
             f"{_plural(len(state.thms), 'theorem')}"))
    elif isinstance(command, TheoryCmd):
        messages.append((0, "writeln", f"theory {command.name}"))
    elif isinstance(command, EndCmd):
        messages.append((0, "writeln", "theory closed"))
    for value in output.print_values:
        messages.append((0, "writeln", str(value)))
    return messages


# -- the command transaction ----------------------------------------------------------


@dataclass
class TransactionResult:
    """Outcome of read+eval for one command: messages, post-state, failure."""

    notes: list[tuple[int, str, str]]
    output: EvalOutput
    state: ToplevelState
    failed: bool
    error: ProgramError | None
    obligations: tuple[ProofObligation, ...]


def apply_transaction(command: Command, state: ToplevelState) -> TransactionResult:
    """Atomic command transaction: on failure the input state passes through.

    Never raises a program error (it is reified into the result); an
    interrupt propagates to the caller.
    """
    try:
        output, post = eval_command(command, state)
    except ProgramError as exc:
        notes = [(0, "error", exc.message)]
        return TransactionResult(notes, EvalOutput(), state, True, exc, ())
    return TransactionResult(list(output.notes), output, post, False, None,
                             tuple(output.obligations))
