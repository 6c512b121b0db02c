"""Formula expressions: lexer, parser, analyses and renderers.

Grammar (one comparison at most, ``^`` is right-associative)::

    expr  := cmp
    cmp   := add (("<" | ">" | "<=" | ">=" | "=" | "<>") add)?
    add   := mul (("+" | "-") mul)*
    mul   := pow (("*" | "/") pow)*
    pow   := unary ("^" pow)?
    unary := "-" unary | atom
    atom  := number | identifier | NAME "(" expr ("," expr)* ")" | "(" expr ")"
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Union

__all__ = [
    "Number",
    "Ref",
    "BinOp",
    "Neg",
    "Call",
    "Expression",
    "FUNCTIONS",
    "FormulaSyntaxError",
    "Token",
    "tokenize",
    "Parser",
    "parse_expression",
    "collect_refs",
    "operator_kinds",
    "operator_kinds_by_slot",
    "slot_label",
    "kind_symbol",
    "unparse",
    "render_cell_formula",
    "render_display",
    "format_number",
]


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expression", ...]


Expression = Union[Number, Ref, BinOp, Neg, Call]

# name -> (min args, max args); None means unbounded
FUNCTIONS: dict[str, tuple[int, int | None]] = {
    "IF": (3, 3),
    "MIN": (1, None),
    "MAX": (1, None),
    "SUM": (1, None),
    "ROUND": (2, 2),
}

COMPARISONS = ("<", ">", "<=", ">=", "=", "<>")

_KIND_OF_OP = {
    "+": "plus",
    "-": "minus",
    "*": "times",
    "/": "divide",
    "^": "power",
    ">": "gt",
    "<": "lt",
    ">=": "ge",
    "<=": "le",
    "=": "eq",
    "<>": "ne",
}
_SYMBOL_OF_KIND = {kind: op for op, kind in _KIND_OF_OP.items()}

# binding strength of each binary operator, used for parenthesization
_PREC = {op: 1 for op in COMPARISONS}
_PREC.update({"+": 2, "-": 2, "*": 3, "/": 3, "^": 4})
_UNARY_PREC = 5
_ATOM_PREC = 6


class FormulaSyntaxError(ValueError):
    """Raised for malformed formula text.

    ``pos`` is the character index into the source, ``offset`` the UTF-8
    byte offset of the same point.
    """

    def __init__(self, message: str, source: str, pos: int, expected: str | None = None):
        self.source = source
        self.pos = pos
        self.offset = len(source[:pos].encode("utf-8"))
        self.expected = expected
        self.reason = message
        text = f"{message} at offset {self.offset}"
        if expected:
            text += f" (expected {expected})"
        super().__init__(text)


@dataclass(frozen=True)
class Token:
    kind: str  # number, ident, string, op, lparen, rparen, comma, lbrace, rbrace, end
    text: str
    pos: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<string>"[^"\n]*")
  | (?P<op><=|>=|<>|[-+*/^<>=])
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
  | (?P<lbrace>\{)
  | (?P<rbrace>\})
    """,
    re.VERBOSE,
)


def tokenize(source: str, start: int = 0, end: int | None = None) -> list[Token]:
    """Split ``source[start:end]`` into tokens; the list always ends with an ``end`` token."""
    end = len(source) if end is None else end
    pos = start
    tokens = []
    while pos < end:
        m = _TOKEN_RE.match(source, pos, end)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {source[pos]!r}", source, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("end", "", end))
    return tokens


def _describe(tok: Token) -> str:
    return "end of formula" if tok.kind == "end" else repr(tok.text)


class Parser:
    """Recursive-descent parser over a token list.

    ``parse()`` demands the whole input be one expression; ``expression()``
    stops at the first token that cannot continue the expression, which the
    model-file reader uses to pick up trailing clauses.
    """

    def __init__(self, source: str, tokens: list[Token] | None = None):
        self.source = source
        self.tokens = tokenize(source) if tokens is None else tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "end":
            self.i += 1
        return tok

    def error(self, message: str, expected: str | None = None, tok: Token | None = None):
        tok = tok or self.tok
        return FormulaSyntaxError(message, self.source, tok.pos, expected)

    def expect(self, kind: str, expected: str) -> Token:
        if self.tok.kind != kind:
            raise self.error(f"unexpected {_describe(self.tok)}", expected)
        return self.advance()

    def parse(self) -> Expression:
        if self.tok.kind == "end":
            raise self.error("empty formula", "an expression")
        expr = self.expression()
        if self.tok.kind != "end":
            raise self.error(f"unexpected {_describe(self.tok)}", "operator or end of formula")
        return expr

    def expression(self) -> Expression:
        left = self.additive()
        if self.tok.kind == "op" and self.tok.text in COMPARISONS:
            op = self.advance().text
            left = BinOp(op, left, self.additive())
        return left

    def additive(self) -> Expression:
        left = self.multiplicative()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.advance().text
            left = BinOp(op, left, self.multiplicative())
        return left

    def multiplicative(self) -> Expression:
        left = self.power()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.advance().text
            left = BinOp(op, left, self.power())
        return left

    def power(self) -> Expression:
        base = self.unary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.power())
        return base

    def unary(self) -> Expression:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expression:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            value = float(tok.text)
            if math.isinf(value):
                raise self.error("number out of range", tok=tok)
            return Number(value)
        if tok.kind == "ident":
            self.advance()
            if self.tok.kind == "lparen":
                return self.call(tok)
            return Ref(tok.text)
        if tok.kind == "lparen":
            self.advance()
            inner = self.expression()
            self.expect("rparen", "')'")
            return inner
        raise self.error(f"unexpected {_describe(tok)}", "number, name or '('")

    def call(self, name_tok: Token) -> Call:
        name = name_tok.text.upper()
        if name not in FUNCTIONS:
            raise self.error(f"unknown function {name_tok.text}", tok=name_tok)
        self.expect("lparen", "'('")
        args = [self.expression()]
        while self.tok.kind == "comma":
            self.advance()
            args.append(self.expression())
        self.expect("rparen", "',' or ')'")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = str(lo) if lo == hi else f"at least {lo}"
            raise self.error(f"{name} takes {want} argument(s), got {len(args)}", tok=name_tok)
        return Call(name, tuple(args))


def parse_expression(source: str) -> Expression:
    return Parser(source).parse()


def _walk(expr: Expression) -> Iterator[Expression]:
    """Nodes in textual (left-to-right) order."""
    if isinstance(expr, BinOp):
        yield from _walk(expr.left)
        yield expr
        yield from _walk(expr.right)
    elif isinstance(expr, Neg):
        yield expr
        yield from _walk(expr.operand)
    elif isinstance(expr, Call):
        yield expr
        for arg in expr.args:
            yield from _walk(arg)
    else:
        yield expr


def collect_refs(expr: Expression) -> list[str]:
    """Referenced names in order of first occurrence, without duplicates."""
    seen: dict[str, None] = {}
    for node in _walk(expr):
        if isinstance(node, Ref):
            seen.setdefault(node.name)
    return list(seen)


def _kind(node: Expression) -> str | None:
    if isinstance(node, BinOp):
        return _KIND_OF_OP[node.op]
    if isinstance(node, Neg):
        return "minus"
    if isinstance(node, Call):
        return f"function:{node.name}"
    return None


def operator_kinds(expr: Expression) -> set[str]:
    return {k for k in map(_kind, _walk(expr)) if k is not None}


_IF_ROLES = ("condition", "then", "else")


def operator_kinds_by_slot(expr: Expression) -> list[tuple[tuple[str, ...], list[str]]]:
    """Partition operators into slots: the formula top level, plus one slot per IF argument.

    Returns ``(path, kinds)`` pairs in textual order. ``path`` is ``()`` for
    the top level; each nested IF argument appends ``"IF<n>.<role>"`` where
    ``n`` counts IF calls within the enclosing slot. ``kinds`` lists the
    distinct operator kinds of the slot in order of first appearance.
    """
    slots: list[tuple[tuple[str, ...], list[str]]] = []

    def visit_slot(root: Expression, path: tuple[str, ...]) -> None:
        kinds: list[str] = []
        slots.append((path, kinds))
        if_count = 0

        def visit(node: Expression) -> None:
            nonlocal if_count
            if isinstance(node, BinOp):
                visit(node.left)
                _add(kinds, _KIND_OF_OP[node.op])
                visit(node.right)
            elif isinstance(node, Neg):
                _add(kinds, "minus")
                visit(node.operand)
            elif isinstance(node, Call):
                _add(kinds, f"function:{node.name}")
                if node.name == "IF":
                    if_count += 1
                    for role, arg in zip(_IF_ROLES, node.args):
                        visit_slot(arg, path + (f"IF{if_count}.{role}",))
                else:
                    for arg in node.args:
                        visit(arg)

        visit(root)

    visit_slot(expr, ())
    return slots


def _add(kinds: list[str], kind: str) -> None:
    if kind not in kinds:
        kinds.append(kind)


def slot_label(path: tuple[str, ...]) -> str:
    return "/".join(("top",) + path)


def kind_symbol(kind: str) -> str:
    """``times`` -> ``*``, ``function:IF`` -> ``IF``."""
    if kind.startswith("function:"):
        return kind.split(":", 1)[1]
    return _SYMBOL_OF_KIND[kind]


def format_number(value: float, decimal_sep: str = ".") -> str:
    if value.is_integer() and abs(value) < 1e16:
        text = str(int(value))
    else:
        text = repr(value).upper()
    if decimal_sep != ".":
        text = text.replace(".", decimal_sep)
    return text


def _prec(expr: Expression) -> int:
    if isinstance(expr, BinOp):
        return _PREC[expr.op]
    if isinstance(expr, Neg):
        return _UNARY_PREC
    return _ATOM_PREC


def _render(
    expr: Expression,
    name: Callable[[str], str],
    arg_sep: str,
    spaced: bool,
    decimal_sep: str = ".",
) -> str:
    def go(e: Expression) -> str:
        if isinstance(e, Number):
            return format_number(e.value, decimal_sep)
        if isinstance(e, Ref):
            return name(e.name)
        if isinstance(e, Neg):
            inner = go(e.operand)
            if _prec(e.operand) < _UNARY_PREC:
                inner = f"({inner})"
            return "-" + inner
        if isinstance(e, Call):
            return f"{e.name}({arg_sep.join(go(a) for a in e.args)})"
        p = _PREC[e.op]
        left, right = go(e.left), go(e.right)
        if e.op == "^":
            # base must be a unary/atom; exponent may itself be a power
            if _prec(e.left) <= p:
                left = f"({left})"
            if _prec(e.right) < p:
                right = f"({right})"
        elif p == 1:
            # comparisons do not chain
            if _prec(e.left) <= p:
                left = f"({left})"
            if _prec(e.right) <= p:
                right = f"({right})"
        else:
            if _prec(e.left) < p:
                left = f"({left})"
            if _prec(e.right) <= p:
                right = f"({right})"
        op = f" {e.op} " if spaced else e.op
        return left + op + right

    return go(expr)


def unparse(expr: Expression) -> str:
    """Canonical source text using identifiers; ``parse_expression`` inverts it."""
    return _render(expr, lambda n: n, ", ", spaced=True)


def render_cell_formula(expr: Expression, binding: Mapping[str, str]) -> str:
    """Spreadsheet formula text with every reference replaced by its bound address."""

    def address(name: str) -> str:
        try:
            return binding[name]
        except KeyError:
            raise KeyError(f"unbound variable reference {name}") from None

    return "=" + _render(expr, address, ",", spaced=False)


def render_display(expr: Expression, locale: str = "en") -> str:
    """Human-readable form using labels, e.g. ``= Nb Days * Daily Rate``.

    ``locale="fr"`` uses ``;`` between arguments and a decimal comma.
    """
    if locale == "fr":
        arg_sep, decimal_sep = "; ", ","
    elif locale == "en":
        arg_sep, decimal_sep = ", ", "."
    else:
        raise ValueError(f"unknown display locale {locale!r}")
    text = _render(expr, lambda n: n.replace("_", " "), arg_sep, spaced=True, decimal_sep=decimal_sep)
    return "= " + text
