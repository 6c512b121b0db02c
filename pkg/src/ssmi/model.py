"""The Formula List: model file parsing, validation, ordering and lint.

Model files (``.ssmi``) hold one declaration per line::

    param Daily_Rate = 58 format currency(2)
    input Nb_Days = 12
    var Daily_Cost = Nb_Days * Daily_Rate format currency(2)
    output Rental_Cost = Daily_Cost + Surplus_Dist_Cost label "Rental Cost"

    model Distance {
        var Total_Distance = Odometer_End - Odometer_Start
    }

``#`` starts a comment. ``param``/``input`` take a number, ``var``/``output``
take a formula.
"""

from __future__ import annotations

import enum
import heapq
import re
from dataclasses import dataclass, field
from typing import Iterable

from .formula import (
    FUNCTIONS,
    Expression,
    FormulaSyntaxError,
    Parser,
    collect_refs,
    format_number,
    kind_symbol,
    operator_kinds_by_slot,
    slot_label,
    tokenize,
    unparse,
)


class VariableKind(enum.Enum):
    PARAMETER = "param"
    INTERFACE_INPUT = "input"
    INTERMEDIATE = "var"
    INTERFACE_OUTPUT = "output"

    @property
    def has_formula(self) -> bool:
        return self in (VariableKind.INTERMEDIATE, VariableKind.INTERFACE_OUTPUT)

    @property
    def type_column(self) -> str:
        """The Formula List "Type" column wording."""
        return _TYPE_COLUMN[self]


_TYPE_COLUMN = {
    VariableKind.PARAMETER: "Input",
    VariableKind.INTERFACE_INPUT: "Input, Interface",
    VariableKind.INTERMEDIATE: "Intermediate",
    VariableKind.INTERFACE_OUTPUT: "Intermediate, Interface",
}


@dataclass(frozen=True)
class NumberFormat:
    kind: str = "general"  # general, integer, currency, percent
    decimals: int = 0

    def __post_init__(self):
        if self.kind not in ("general", "integer", "currency", "percent"):
            raise ValueError(f"unknown number format {self.kind!r}")
        if not 0 <= self.decimals <= 4:
            raise ValueError(f"decimals must be within 0..4, got {self.decimals}")

    def __str__(self) -> str:
        if self.kind in ("currency", "percent"):
            return f"{self.kind}({self.decimals})"
        return self.kind


GENERAL = NumberFormat()


@dataclass(frozen=True)
class Span:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class VariableDecl:
    name: str
    kind: VariableKind
    formula: Expression | None = None
    initial_value: float | None = None
    format: NumberFormat = GENERAL
    label: str = ""
    submodel: str | None = None
    location: Span | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.name.replace("_", " "))


@dataclass(frozen=True)
class Model:
    declarations: tuple[VariableDecl, ...] = ()
    submodels: tuple[str, ...] = ()

    def __getitem__(self, name: str) -> VariableDecl:
        for decl in self.declarations:
            if decl.name == name:
                return decl
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(d.name == name for d in self.declarations)

    def of_kind(self, *kinds: VariableKind) -> list[VariableDecl]:
        return [d for d in self.declarations if d.kind in kinds]

    @property
    def formula_bearing(self) -> list[VariableDecl]:
        return [d for d in self.declarations if d.kind.has_formula]


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    code: str
    message: str
    variable: str | None = None
    location: Span | None = None

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def __str__(self) -> str:
        where = f"{self.location}: " if self.location else ""
        return f"{where}{self.severity}[{self.code}] {self.message}"

    def as_dict(self) -> dict:
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "variable": self.variable,
            "line": self.location.line if self.location else None,
            "column": self.location.column if self.location else None,
        }


def error(code, message, decl: VariableDecl | None = None, location=None) -> Diagnostic:
    return Diagnostic("error", code, message, decl.name if decl else None, location or (decl and decl.location))


def warning(code, message, decl: VariableDecl | None = None, location=None) -> Diagnostic:
    return Diagnostic("warning", code, message, decl.name if decl else None, location or (decl and decl.location))


# --- naming -----------------------------------------------------------------

NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_CELL_REF_RE = re.compile(r"^[A-Za-z]{1,3}[0-9]{1,7}$")
_R1C1_RE = re.compile(r"^[Rr][0-9]*[Cc][0-9]*$|^[Rr][0-9]+$|^[Cc][0-9]+$")
KEYWORDS = frozenset({"param", "input", "var", "output", "model", "format", "label"})
RESERVED = frozenset(FUNCTIONS) | {"TRUE", "FALSE"}


def name_problem(name: str) -> str | None:
    """Why ``name`` cannot be a variable/defined name, or None if it can."""
    if not NAME_RE.match(name):
        return "contains illegal characters"
    if _CELL_REF_RE.match(name) or name.upper() in ("R", "C") or _R1C1_RE.match(name):
        return "name collides with cell reference"
    if name.upper() in RESERVED:
        return "name is a reserved word"
    if name.lower() in KEYWORDS:
        return "name is a model-file keyword"
    return None


# --- parsing ------------------------------------------------------------------

_DECL_KEYWORDS = {k.value: k for k in VariableKind}


class _LineError(Exception):
    def __init__(self, message: str, pos: int):
        self.message = message
        self.pos = pos


def parse_model(source: str) -> tuple[Model, list[Diagnostic]]:
    """Parse model-file text.

    Returns the model (every declaration that parsed) together with syntax
    diagnostics and everything ``validate`` reports for it.
    """
    decls: list[VariableDecl] = []
    submodels: list[str] = []
    diags: list[Diagnostic] = []
    current: str | None = None
    open_line = 0

    for lineno, raw in enumerate(source.splitlines(), 1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        try:
            toks = tokenize(line)
        except FormulaSyntaxError as exc:
            diags.append(error("syntax", exc.reason, location=Span(lineno, exc.pos + 1)))
            continue
        toks += [toks[-1]] * 3  # pad with end tokens so lookahead never runs off
        head = toks[0]
        if head.kind == "rbrace":
            if current is None:
                diags.append(error("syntax", "'}' without open model block", location=Span(lineno, head.pos + 1)))
            elif toks[1].kind != "end":
                diags.append(error("syntax", "unexpected text after '}'", location=Span(lineno, toks[1].pos + 1)))
            current = None
            continue
        if head.kind == "ident" and head.text == "model":
            if current is not None:
                diags.append(error("syntax", "model blocks cannot nest", location=Span(lineno, head.pos + 1)))
                continue
            name_tok, brace = toks[1], toks[2]
            if name_tok.kind != "ident" or brace.kind != "lbrace" or toks[3].kind != "end":
                diags.append(error("syntax", "expected 'model <Name> {'", location=Span(lineno, head.pos + 1)))
                continue
            if name_tok.text.lower() in (s.lower() for s in submodels):
                diags.append(error("duplicate-submodel", f"sub-model {name_tok.text} declared twice",
                                   location=Span(lineno, name_tok.pos + 1)))
            else:
                submodels.append(name_tok.text)
            current = name_tok.text
            open_line = lineno
            continue
        try:
            decls.append(_parse_declaration(line, toks, lineno, current))
        except _LineError as exc:
            diags.append(error("syntax", exc.message, location=Span(lineno, exc.pos + 1)))
        except FormulaSyntaxError as exc:
            diags.append(error("syntax", str(exc.reason) + (f" (expected {exc.expected})" if exc.expected else ""),
                               location=Span(lineno, exc.pos + 1)))

    if current is not None:
        diags.append(error("syntax", f"model block {current} is never closed", location=Span(open_line, 1)))

    model = Model(tuple(decls), tuple(submodels))
    return model, diags + validate(model)


def _strip_comment(line: str) -> str:
    in_string = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            return line[:i]
    return line


def _parse_declaration(line: str, toks, lineno: int, submodel: str | None) -> VariableDecl:
    head = toks[0]
    if head.kind != "ident" or head.text not in _DECL_KEYWORDS:
        raise _LineError("expected param, input, var, output or model", head.pos)
    kind = _DECL_KEYWORDS[head.text]
    name_tok = toks[1]
    if name_tok.kind != "ident":
        raise _LineError("expected a variable name", name_tok.pos)
    if toks[2].kind != "op" or toks[2].text != "=":
        raise _LineError("expected '='", toks[2].pos)

    parser = Parser(line, toks)
    parser.i = 3
    formula = None
    initial = None
    if kind.has_formula:
        formula = parser.expression()
    else:
        sign = 1.0
        if parser.tok.kind == "op" and parser.tok.text == "-":
            parser.advance()
            sign = -1.0
        num = parser.tok
        if num.kind != "number":
            raise _LineError(f"{kind.value} needs a number, not a formula", num.pos)
        parser.advance()
        initial = sign * float(num.text)

    fmt = GENERAL
    label = ""
    while parser.tok.kind != "end":
        clause = parser.advance()
        if clause.kind == "ident" and clause.text == "format":
            fmt = _parse_format(parser)
        elif clause.kind == "ident" and clause.text == "label":
            s = parser.tok
            if s.kind != "string":
                raise _LineError("expected a quoted label", s.pos)
            parser.advance()
            label = s.text[1:-1]
            if not label.strip():
                raise _LineError("label is empty", s.pos)
        else:
            what = "formula" if kind.has_formula else "value"
            raise _LineError(f"unexpected {clause.text!r} after {what}", clause.pos)

    return VariableDecl(
        name=name_tok.text,
        kind=kind,
        formula=formula,
        initial_value=initial,
        format=fmt,
        label=label,
        submodel=submodel,
        location=Span(lineno, name_tok.pos + 1),
    )


def _parse_format(parser: Parser) -> NumberFormat:
    tok = parser.advance()
    if tok.kind != "ident" or tok.text.lower() not in ("general", "integer", "currency", "percent"):
        raise _LineError("expected general, integer, currency(n) or percent(n)", tok.pos)
    kind = tok.text.lower()
    decimals = 2 if kind == "currency" else 0
    if kind in ("currency", "percent") and parser.tok.kind == "lparen":
        parser.advance()
        num = parser.tok
        if num.kind != "number" or not num.text.isdigit():
            raise _LineError("expected a decimal count", num.pos)
        parser.advance()
        parser.expect("rparen", "')'")
        decimals = int(num.text)
        if decimals > 4:
            raise _LineError("at most 4 decimals", num.pos)
    return NumberFormat(kind, decimals)


def serialize_model(model: Model) -> str:
    """Model-file text that ``parse_model`` reads back into an equal model."""

    def line(d: VariableDecl) -> str:
        body = unparse(d.formula) if d.kind.has_formula else format_number(d.initial_value)
        text = f"{d.kind.value} {d.name} = {body}"
        if d.format != GENERAL:
            text += f" format {d.format}"
        if d.label != d.name.replace("_", " "):
            text += f' label "{d.label}"'
        return text

    out = [line(d) for d in model.declarations if d.submodel is None]
    for sub in model.submodels:
        out.append(f"model {sub} {{")
        out.extend("    " + line(d) for d in model.declarations if d.submodel == sub)
        out.append("}")
    return "\n".join(out) + "\n"


# --- validation ---------------------------------------------------------------

def validate(model: Model) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    decls = model.declarations
    if not decls:
        return [warning("empty-model", "empty model")]

    seen: dict[str, VariableDecl] = {}
    for d in decls:
        problem = name_problem(d.name)
        if problem:
            diags.append(error("bad-name", f"{d.name}: {problem}", d))
        key = d.name.lower()
        if key in seen:
            diags.append(error("duplicate-name", f"{d.name} is already declared as {seen[key].name}", d))
        else:
            seen[key] = d
        derived = d.label.replace(" ", "_")
        if derived != d.name:
            label_problem = name_problem(derived)
            if label_problem:
                diags.append(error("bad-name", f"label {d.label!r} -> {derived}: {label_problem}", d))
            else:
                diags.append(error("label-mismatch", f"label {d.label!r} does not name {d.name}", d))
        if d.kind.has_formula:
            if d.formula is None:
                diags.append(error("missing-formula", f"{d.name} needs a formula", d))
            if d.initial_value is not None:
                diags.append(error("unexpected-value", f"{d.name} is computed and takes no initial value", d))
        else:
            if d.formula is not None:
                diags.append(error("unexpected-formula", f"{d.name} is a constant and takes no formula", d))
            if d.initial_value is None:
                diags.append(error("missing-value", f"{d.name} needs an initial value", d))
        if d.submodel is not None and d.submodel not in model.submodels:
            diags.append(error("unknown-submodel", f"{d.name} belongs to undeclared sub-model {d.submodel}", d))

    for sub in model.submodels:
        if not NAME_RE.match(sub) or len("Model " + sub) > 31:
            diags.append(error("bad-submodel", f"sub-model name {sub!r} cannot name a sheet"))

    names = {d.name for d in decls}
    for d in decls:
        if d.formula is None:
            continue
        for ref in collect_refs(d.formula):
            if ref not in names:
                hint = seen.get(ref.lower())
                extra = f" (did you mean {hint.name}?)" if hint else ""
                diags.append(error("unresolved", f"unresolved reference {ref} in {d.name}{extra}", d))

    for cycle in find_cycles(model):
        first = model[cycle[0]]
        diags.append(error("cycle", "cycle " + " → ".join(cycle), first))

    used = {ref for d in decls if d.formula is not None for ref in collect_refs(d.formula)}
    for d in decls:
        if d.formula is not None and not collect_refs(d.formula):
            diags.append(warning("constant-formula", f"{d.name} has a constant formula; consider a parameter", d))
        if not d.kind.has_formula and d.name not in used:
            diags.append(warning("unused", f"{d.kind.value} {d.name} is never used", d))
    if not model.of_kind(VariableKind.INTERFACE_OUTPUT):
        diags.append(warning("no-output", "no output variable declared"))
    return diags


def _ref_graph(model: Model) -> dict[str, list[str]]:
    """Defined variable -> the declared variables its formula references."""
    names = {d.name for d in model.declarations}
    return {
        d.name: [r for r in collect_refs(d.formula) if r in names] if d.formula is not None else []
        for d in model.declarations
    }


def find_cycles(model: Model) -> list[list[str]]:
    """One closed path (first name repeated at the end) per strongly-looping region found by DFS."""
    graph = _ref_graph(model)
    state: dict[str, int] = {}  # 1 on stack, 2 done
    stack: list[str] = []
    cycles: list[list[str]] = []

    def dfs(node: str) -> None:
        state[node] = 1
        stack.append(node)
        for nxt in graph.get(node, ()):
            if state.get(nxt) == 1:
                cycles.append(stack[stack.index(nxt):] + [nxt])
            elif nxt not in state:
                dfs(nxt)
        stack.pop()
        state[node] = 2

    for d in model.declarations:
        if d.name not in state:
            dfs(d.name)
    return cycles


class CycleError(ValueError):
    pass


def topological_order(model: Model) -> list[VariableDecl]:
    """Formula-bearing variables, each after everything it references.

    Kahn's algorithm; among ready variables the earliest declared goes first.
    """
    index = {d.name: i for i, d in enumerate(model.declarations)}
    bearing = {d.name for d in model.formula_bearing}
    deps = {name: {r for r in refs if r in bearing} for name, refs in _ref_graph(model).items() if name in bearing}
    users: dict[str, list[str]] = {name: [] for name in deps}
    for name, refs in deps.items():
        for r in refs:
            users[r].append(name)
    pending = {name: len(refs) for name, refs in deps.items()}
    ready = [index[n] for n, k in pending.items() if k == 0]
    heapq.heapify(ready)
    out: list[VariableDecl] = []
    while ready:
        decl = model.declarations[heapq.heappop(ready)]
        out.append(decl)
        for user in users[decl.name]:
            pending[user] -= 1
            if pending[user] == 0:
                heapq.heappush(ready, index[user])
    if len(out) != len(deps):
        stuck = sorted((n for n, k in pending.items() if k > 0), key=index.get)
        raise CycleError("cycle among " + ", ".join(stuck))
    return out


# --- golden rule ------------------------------------------------------------

def golden_rule_lint(model: Model, severity: str = "warning") -> list[Diagnostic]:
    """Flag every formula slot that mixes more than one kind of operator or function."""
    diags = []
    for d in model.declarations:
        if d.formula is None:
            continue
        for path, kinds in operator_kinds_by_slot(d.formula):
            if len(kinds) > 1:
                shown = ", ".join(kind_symbol(k) for k in kinds)
                diags.append(Diagnostic(
                    severity,
                    "golden-rule",
                    f"{d.name}: {slot_label(path)} slot mixes {len(kinds)} kinds {{{shown}}}; split it into simpler variables",
                    d.name,
                    d.location,
                ))
    return diags


def has_errors(diags: Iterable[Diagnostic]) -> bool:
    return any(d.is_error for d in diags)


def constant(name: str, value: float, kind: VariableKind = VariableKind.PARAMETER, **kw) -> VariableDecl:
    """Shorthand used by tests and generators."""
    return VariableDecl(name, kind, initial_value=float(value), **kw)


def computed(name: str, formula: Expression | str, kind: VariableKind = VariableKind.INTERMEDIATE, **kw) -> VariableDecl:
    if isinstance(formula, str):
        formula = Parser(formula).parse()
    return VariableDecl(name, kind, formula=formula, **kw)


__all__ = [
    "VariableKind",
    "NumberFormat",
    "GENERAL",
    "Span",
    "VariableDecl",
    "Model",
    "Diagnostic",
    "CycleError",
    "name_problem",
    "parse_model",
    "serialize_model",
    "validate",
    "find_cycles",
    "topological_order",
    "golden_rule_lint",
    "has_errors",
    "constant",
    "computed",
]
