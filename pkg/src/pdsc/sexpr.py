"""Minimal s-expression reader with source positions for error reporting."""

from __future__ import annotations

from dataclasses import dataclass


class SexprError(Exception):
    """Raised on malformed s-expression input; message carries line:column."""


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int


@dataclass(frozen=True)
class SNode:
    """Either an atom (text set, items None) or a list (items set)."""

    items: tuple | None
    text: str | None
    line: int
    col: int

    @property
    def is_atom(self) -> bool:
        return self.items is None

    def pos(self) -> str:
        return f"{self.line}:{self.col}"


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, col = 1, 1
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
        elif c in " \t\r":
            col += 1
            i += 1
        elif c == ";":
            while i < n and source[i] != "\n":
                i += 1
        elif c in "()":
            tokens.append(Token(c, line, col))
            col += 1
            i += 1
        elif c == '"':
            start_line, start_col = line, col
            j = i + 1
            while j < n and source[j] != '"':
                if source[j] == "\n":
                    raise SexprError(f"{line}:{col}: unterminated string literal")
                j += 1
            if j >= n:
                raise SexprError(f"{start_line}:{start_col}: unterminated string literal")
            tokens.append(Token(source[i : j + 1], start_line, start_col))
            col += j + 1 - i
            i = j + 1
        else:
            start_col = col
            j = i
            while j < n and source[j] not in ' \t\r\n();"':
                j += 1
            tokens.append(Token(source[i:j], line, start_col))
            col += j - i
            i = j
    return tokens


def _read(tokens: list[Token], pos: int) -> tuple[SNode, int]:
    tok = tokens[pos]
    if tok.text == "(":
        items = []
        pos += 1
        while True:
            if pos >= len(tokens):
                raise SexprError(f"{tok.line}:{tok.col}: unclosed '('")
            if tokens[pos].text == ")":
                return SNode(tuple(items), None, tok.line, tok.col), pos + 1
            node, pos = _read(tokens, pos)
            items.append(node)
    if tok.text == ")":
        raise SexprError(f"{tok.line}:{tok.col}: unexpected ')'")
    return SNode(None, tok.text, tok.line, tok.col), pos + 1


def parse_all(source: str) -> list[SNode]:
    """Parse a whole document into a list of top-level forms."""
    tokens = tokenize(source)
    forms = []
    pos = 0
    while pos < len(tokens):
        node, pos = _read(tokens, pos)
        forms.append(node)
    return forms


def parse_one(source: str) -> SNode:
    forms = parse_all(source)
    if len(forms) != 1:
        raise SexprError(f"expected exactly one form, found {len(forms)}")
    return forms[0]
