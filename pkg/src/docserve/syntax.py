"""Total, fast read phase: symbol scanning, tokenization, command-span splitting.

Everything here is a pure function over immutable values and is total by
construction: malformed input becomes error tokens rather than exceptions,
postponing real failures to the evaluation phase.  Concatenating token (or
span) sources always reproduces the input exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

Symbol = str
"""One input character, or a named symbol written ``\\<name>``."""


class TokenKind(enum.Enum):
    COMMAND_KEYWORD = "command-keyword"
    MINOR_KEYWORD = "minor-keyword"
    IDENTIFIER = "identifier"
    NUMBER = "number"
    STRING = "quoted-string"
    COMMENT = "comment"
    WHITESPACE = "whitespace"
    ERROR = "error"


_SKIPPED = (TokenKind.WHITESPACE, TokenKind.COMMENT)


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    symbols: tuple[Symbol, ...]
    start: int
    end: int
    reason: str | None = None

    @property
    def content(self) -> str:
        return "".join(self.symbols)

    def is_significant(self) -> bool:
        return self.kind not in _SKIPPED


@dataclass(frozen=True)
class KeywordTable:
    commands: frozenset[str] = frozenset()
    minors: frozenset[str] = frozenset()

    def __post_init__(self):
        clash = self.commands & self.minors
        if clash:
            raise ValueError(f"keywords both command and minor: {sorted(clash)}")

    def add_command(self, name: str) -> "KeywordTable":
        return KeywordTable(self.commands | {name}, self.minors - {name})

    def add_minor(self, name: str) -> "KeywordTable":
        if name in self.commands:
            return self
        return KeywordTable(self.commands, self.minors | {name})

    def is_command(self, word: str) -> bool:
        return word in self.commands


@dataclass(frozen=True)
class CommandSpan:
    """A contiguous source region led by one command keyword.

    Spans with name "" hold material before the first command keyword.
    """

    name: str
    tokens: tuple[Token, ...]

    @property
    def source(self) -> str:
        return "".join(t.content for t in self.tokens)

    def significant_tokens(self) -> list[Token]:
        return [t for t in self.tokens if t.is_significant()]


def scan_symbols(text: str) -> list[Symbol]:
    """Split text into symbols; ``\\<name>`` collapses to one symbol.

    Total: a malformed ``\\<`` prefix falls back to plain characters.
    """
    symbols: list[Symbol] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\" and i + 1 < n and text[i + 1] == "<":
            j = i + 2
            while j < n and text[j].isalnum():
                j += 1
            if j > i + 2 and j < n and text[j] == ">":
                symbols.append(text[i : j + 1])
                i = j + 1
                continue
        symbols.append(ch)
        i += 1
    return symbols


def is_named_symbol(sym: Symbol) -> bool:
    return len(sym) > 1


def tokenize(table: KeywordTable, symbols: list[Symbol]) -> list[Token]:
    """Total tokenization; unterminated constructs become error tokens."""
    tokens: list[Token] = []
    i = 0
    n = len(symbols)

    def push(kind: TokenKind, start: int, end: int, reason: str | None = None):
        tokens.append(Token(kind, tuple(symbols[start:end]), start, end, reason))

    while i < n:
        sym = symbols[i]
        if len(sym) == 1 and sym.isspace():
            j = i
            while j < n and len(symbols[j]) == 1 and symbols[j].isspace():
                j += 1
            push(TokenKind.WHITESPACE, i, j)
            i = j
        elif sym == "(" and i + 1 < n and symbols[i + 1] == "*":
            j = i + 2
            while j + 1 < n and not (symbols[j] == "*" and symbols[j + 1] == ")"):
                j += 1
            if j + 1 < n:
                push(TokenKind.COMMENT, i, j + 2)
                i = j + 2
            else:
                push(TokenKind.ERROR, i, n, "unterminated comment")
                i = n
        elif sym == '"':
            j = i + 1
            while j < n and symbols[j] != '"':
                if symbols[j] == "\\" and j + 1 < n:
                    j += 2
                else:
                    j += 1
            if j < n:
                push(TokenKind.STRING, i, j + 1)
                i = j + 1
            else:
                push(TokenKind.ERROR, i, n, "unterminated quoted string")
                i = n
        elif len(sym) == 1 and sym.isalpha():
            j = i
            while j < n and len(symbols[j]) == 1 and (symbols[j].isalnum() or symbols[j] == "_"):
                j += 1
            word = "".join(symbols[i:j])
            if word in table.commands:
                push(TokenKind.COMMAND_KEYWORD, i, j)
            elif word in table.minors:
                push(TokenKind.MINOR_KEYWORD, i, j)
            else:
                push(TokenKind.IDENTIFIER, i, j)
            i = j
        elif len(sym) == 1 and sym.isdigit():
            j = i
            while j < n and len(symbols[j]) == 1 and symbols[j].isdigit():
                j += 1
            push(TokenKind.NUMBER, i, j)
            i = j
        elif is_named_symbol(sym):
            push(TokenKind.IDENTIFIER, i, i + 1)
            i += 1
        elif sym in table.commands:
            push(TokenKind.COMMAND_KEYWORD, i, i + 1)
            i += 1
        elif sym in table.minors:
            push(TokenKind.MINOR_KEYWORD, i, i + 1)
            i += 1
        else:
            push(TokenKind.ERROR, i, i + 1, f"unexpected character {sym!r}")
            i += 1
    return tokens


def parse_spans(table: KeywordTable, tokens: Iterable[Token]) -> list[CommandSpan]:
    """Split a token stream into command spans.

    Each command keyword starts a new span; material before the first one
    becomes an ignored span named "".
    """
    spans: list[CommandSpan] = []
    current: list[Token] = []
    name = ""

    def close():
        if current:
            spans.append(CommandSpan(name, tuple(current)))

    for token in tokens:
        if token.kind is TokenKind.COMMAND_KEYWORD:
            close()
            current = [token]
            name = token.content
        else:
            current.append(token)
    close()
    return spans


def scan_spans(table: KeywordTable, text: str) -> list[CommandSpan]:
    return parse_spans(table, tokenize(table, scan_symbols(text)))
