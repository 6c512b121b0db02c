"""Two independent executions of a model, and the check that they agree.

``eval_model`` walks the declarations; ``eval_plan`` runs the planned cell
grid the way a spreadsheet engine would, resolving defined names and A1
addresses. ``verify_equivalence`` compares the two.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from graphlib import CycleError, TopologicalSorter
from typing import Mapping, Union

from .formula import BinOp, Call, Expression, FormulaSyntaxError, Neg, Number, Ref, collect_refs, parse_expression
from .layout import (
    CellAddress,
    FormulaCell,
    NumberCell,
    TextCell,
    WorkbookPlan,
    interface_output_cells,
    split_a1,
)
from .model import Model, VariableKind, topological_order

DIV_ZERO = "DivZero"
BAD_ARG = "BadArg"
UNRESOLVED = "Unresolved"

_DISPLAY = {DIV_ZERO: "#DIV/0!", BAD_ARG: "#NUM!", UNRESOLVED: "#NAME?"}


@dataclass(frozen=True)
class EvalError:
    code: str

    @property
    def display(self) -> str:
        """Spreadsheet error literal, e.g. ``#DIV/0!``."""
        return _DISPLAY[self.code]


Value = Union[float, bool, EvalError]


def _number(v: Value) -> float:
    return float(v) if isinstance(v, bool) else v


def _checked(x: float) -> Value:
    return x if math.isfinite(x) else EvalError(BAD_ARG)


def _arith(op: str, a: float, b: float) -> Value:
    if op == "+":
        return _checked(a + b)
    if op == "-":
        return _checked(a - b)
    if op == "*":
        return _checked(a * b)
    if op == "/":
        return EvalError(DIV_ZERO) if b == 0 else _checked(a / b)
    # "^"
    if a == 0 and b < 0:
        return EvalError(DIV_ZERO)
    if a < 0 and not b.is_integer():
        return EvalError(BAD_ARG)
    try:
        return _checked(math.pow(a, b))
    except (OverflowError, ValueError):
        return EvalError(BAD_ARG)


def _compare(op: str, a: float, b: float) -> bool:
    if op == "<":
        return a < b
    if op == ">":
        return a > b
    if op == "<=":
        return a <= b
    if op == ">=":
        return a >= b
    if op == "=":
        return a == b
    return a != b


def _round(x: float, digits: float) -> Value:
    """Half away from zero on the shortest decimal form of ``x``."""
    d = int(digits)  # truncates toward zero, as spreadsheets do
    if d > 15:
        return x
    if d < -308:
        return 0.0
    q = Decimal(repr(x)).scaleb(d).quantize(Decimal(1), rounding=ROUND_HALF_UP).scaleb(-d)
    return _checked(float(q))


def eval_expression(expr: Expression, env: Mapping[str, Value]) -> Value:
    if isinstance(expr, Number):
        return expr.value
    if isinstance(expr, Ref):
        return env.get(expr.name, EvalError(UNRESOLVED))
    if isinstance(expr, Neg):
        v = eval_expression(expr.operand, env)
        return v if isinstance(v, EvalError) else -_number(v)
    if isinstance(expr, BinOp):
        a = eval_expression(expr.left, env)
        if isinstance(a, EvalError):
            return a
        b = eval_expression(expr.right, env)
        if isinstance(b, EvalError):
            return b
        if expr.op in ("+", "-", "*", "/", "^"):
            return _arith(expr.op, _number(a), _number(b))
        return _compare(expr.op, _number(a), _number(b))
    if isinstance(expr, Call):
        if expr.name == "IF":
            cond = eval_expression(expr.args[0], env)
            if isinstance(cond, EvalError):
                return cond
            branch = expr.args[1] if _number(cond) != 0 else expr.args[2]
            return eval_expression(branch, env)
        args = []
        for arg in expr.args:
            v = eval_expression(arg, env)
            if isinstance(v, EvalError):
                return v
            args.append(_number(v))
        if expr.name == "MIN":
            return min(args)
        if expr.name == "MAX":
            return max(args)
        if expr.name == "SUM":
            return _checked(math.fsum(args)) if all(map(math.isfinite, args)) else EvalError(BAD_ARG)
        if expr.name == "ROUND":
            return _round(args[0], args[1])
        return EvalError(BAD_ARG)
    raise TypeError(f"not an expression: {expr!r}")


def _check_overrides(model: Model, overrides: Mapping[str, float]) -> None:
    for name in overrides:
        if name not in model:
            raise KeyError(f"cannot override unknown variable {name}")
        if model[name].kind.has_formula:
            raise ValueError(f"cannot override {name}: it is computed by a formula")


def eval_model(model: Model, overrides: Mapping[str, float] | None = None) -> dict[str, Value]:
    overrides = overrides or {}
    _check_overrides(model, overrides)
    env: dict[str, Value] = {}
    for d in model.declarations:
        if not d.kind.has_formula:
            env[d.name] = float(overrides.get(d.name, d.initial_value))
    for d in topological_order(model):
        env[d.name] = eval_expression(d.formula, env)
    return {d.name: env[d.name] for d in model.declarations}


class GridError(ValueError):
    """The cell grid cannot be evaluated: unresolved name or address, or a cycle."""


class PlanEvaluator:
    """A plan's formulas parsed and ordered once, ready for repeated evaluation."""

    def __init__(self, plan: WorkbookPlan):
        self.plan = plan
        self.names = {dn.name.lower(): dn.target for dn in plan.defined_names}
        self.constants: dict[CellAddress, float] = {}
        self.formulas: dict[CellAddress, tuple[Expression, dict[str, CellAddress]]] = {}
        for sheet in plan.sheets:
            for ref, cell in sheet.cells.items():
                col, row = split_a1(ref)
                addr = CellAddress(sheet.name, col, row)
                if isinstance(cell, NumberCell):
                    self.constants[addr] = cell.value
                elif isinstance(cell, FormulaCell):
                    self.formulas[addr] = self._compile(addr, cell.text)

        graph = {addr: list(dict.fromkeys(deps.values())) for addr, (_, deps) in self.formulas.items()}
        try:
            self.order = [a for a in TopologicalSorter(graph).static_order() if a in self.formulas]
        except CycleError as exc:
            raise GridError("circular cell references: " + " -> ".join(map(str, exc.args[1]))) from None

    def _compile(self, addr: CellAddress, text: str):
        try:
            expr = parse_expression(text[1:])
        except FormulaSyntaxError as exc:
            raise GridError(f"{addr}: {exc}") from None
        deps = {}
        for node in collect_refs(expr):
            deps[node] = self._resolve(addr, node)
        return expr, deps

    def _resolve(self, addr: CellAddress, token: str) -> CellAddress:
        try:
            col, row = split_a1(token)
        except ValueError:
            target = self.names.get(token.lower())
            if target is None:
                raise GridError(f"{addr}: unresolved name {token}") from None
            return target
        target = CellAddress(addr.sheet, col, row)
        cell = self.plan.cell(target)
        if cell is None or isinstance(cell, TextCell):
            raise GridError(f"{addr}: reference to {target}, which holds no value")
        return target

    def evaluate(self, overrides: Mapping[str, float] | None = None) -> dict[CellAddress, Value]:
        values: dict[CellAddress, Value] = dict(self.constants)
        for name, value in (overrides or {}).items():
            target = self.names.get(name.lower())
            if target is None or target not in self.constants:
                raise KeyError(f"{name} does not name an input or parameter cell")
            values[target] = float(value)
        for addr in self.order:
            expr, deps = self.formulas[addr]
            values[addr] = eval_expression(expr, {tok: values[target] for tok, target in deps.items()})
        return values


def eval_plan(plan: WorkbookPlan, overrides: Mapping[str, float] | None = None) -> dict[CellAddress, Value]:
    """Values of every number and formula cell in the grid."""
    return PlanEvaluator(plan).evaluate(overrides)


def values_match(a: Value, b: Value, rel_tol: float = 1e-12) -> bool:
    if isinstance(a, bool) or isinstance(b, bool) or isinstance(a, EvalError) or isinstance(b, EvalError):
        return type(a) is type(b) and a == b
    return math.isclose(a, b, rel_tol=rel_tol, abs_tol=0.0)


@dataclass(frozen=True)
class Mismatch:
    variable: str
    where: str
    model_value: Value
    grid_value: Value

    def __str__(self) -> str:
        return f"{self.variable} at {self.where}: model {format_value(self.model_value)} != grid {format_value(self.grid_value)}"


@dataclass
class EquivalenceReport:
    total: int = 0
    matched: int = 0
    mismatches: list[Mismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def __str__(self) -> str:
        head = f"{'PASS' if self.passed else 'FAIL'}: {self.matched}/{self.total} variables matched"
        return "\n".join([head, *("  " + str(m) for m in self.mismatches)])


def verify_equivalence(
    model: Model,
    plan: WorkbookPlan | PlanEvaluator,
    overrides: Mapping[str, float] | None = None,
    rel_tol: float = 1e-12,
) -> EquivalenceReport:
    evaluator = plan if isinstance(plan, PlanEvaluator) else PlanEvaluator(plan)
    expected = eval_model(model, overrides)
    grid = evaluator.evaluate(overrides)
    outputs = interface_output_cells(evaluator.plan)
    report = EquivalenceReport()
    for d in model.declarations:
        report.total += 1
        places = [evaluator.plan.target(d.name)]
        if d.kind is VariableKind.INTERFACE_OUTPUT:
            places.append(outputs.get(d.name, None))
        ok = True
        for place in places:
            if place is None:
                got: Value = EvalError(UNRESOLVED)
                where = "Interface (missing)"
            else:
                got = grid.get(place, EvalError(UNRESOLVED))
                where = str(place)
            if not values_match(expected[d.name], got, rel_tol):
                report.mismatches.append(Mismatch(d.name, where, expected[d.name], got))
                ok = False
        report.matched += ok
    return report


def random_overrides(model: Model, rng: random.Random) -> dict[str, float]:
    """One random value per parameter and input, scaled around its initial value."""
    out = {}
    for d in model.declarations:
        if d.kind.has_formula:
            continue
        v = d.initial_value
        span = max(abs(v) * 2, 10.0)
        if float(v).is_integer():
            out[d.name] = float(rng.randint(0, int(span)))
        else:
            out[d.name] = rng.uniform(0, span)
    return out


def format_value(v: Value, decimals: int | None = None) -> str:
    if isinstance(v, EvalError):
        return v.display
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if decimals is not None:
        return f"{v:.{decimals}f}"
    return f"{v:.15g}"


def json_value(v: Value):
    if isinstance(v, EvalError):
        return {"error": v.display}
    return v
