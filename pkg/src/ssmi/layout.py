"""Physical layout: turn a validated model into sheets, blocks, cells and names.

Three tiers: an Interface sheet (user inputs and outputs), one Model sheet
per sub-model holding the definition blocks, and a Parameters sheet.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Union

from .formula import collect_refs, render_cell_formula
from .model import (
    GENERAL,
    Model,
    NumberFormat,
    VariableDecl,
    VariableKind,
    has_errors,
    name_problem,
    topological_order,
    validate,
)

INTERFACE = "Interface"
MODEL = "Model"
PARAMETERS = "Parameters"
VALUE_COLUMN = "B"
LABEL_COLUMN = "A"
COLUMN_WIDTHS = {"A": 24.0, "B": 14.0}
FIRST_BLOCK_ROW = 2


class PlanError(ValueError):
    pass


class InvalidNameError(ValueError):
    pass


def column_index(letters: str) -> int:
    """``A`` -> 1, ``AA`` -> 27."""
    n = 0
    for ch in letters.upper():
        n = n * 26 + ord(ch) - 64
    return n


def column_letters(index: int) -> str:
    out = ""
    while index:
        index, rem = divmod(index - 1, 26)
        out = chr(65 + rem) + out
    return out


_A1_RE = re.compile(r"^([A-Za-z]{1,3})([0-9]{1,7})$")


def split_a1(ref: str) -> tuple[str, int]:
    m = _A1_RE.match(ref)
    if not m:
        raise ValueError(f"not an A1 address: {ref!r}")
    return m.group(1).upper(), int(m.group(2))


def quote_sheet(sheet: str) -> str:
    if re.match(r"^[A-Za-z_][A-Za-z0-9_]*$", sheet):
        return sheet
    return "'" + sheet.replace("'", "''") + "'"


@dataclass(frozen=True)
class CellAddress:
    sheet: str
    column: str
    row: int

    @property
    def a1(self) -> str:
        return f"{self.column}{self.row}"

    @property
    def absolute(self) -> str:
        return f"{quote_sheet(self.sheet)}!${self.column}${self.row}"

    def __str__(self) -> str:
        return f"{self.sheet}!{self.a1}"


@dataclass(frozen=True)
class Style:
    bold: bool = False
    top_border: bool = False
    format: NumberFormat = GENERAL


PLAIN = Style()


@dataclass(frozen=True)
class TextCell:
    text: str
    style: Style = PLAIN


@dataclass(frozen=True)
class NumberCell:
    value: float
    style: Style = PLAIN


@dataclass(frozen=True)
class FormulaCell:
    text: str
    style: Style = PLAIN
    cached: object = None  # an evaluator Value once attached

    def __post_init__(self):
        if not self.text.startswith("="):
            raise PlanError(f"formula text must start with '=': {self.text!r}")


Cell = Union[TextCell, NumberCell, FormulaCell]


@dataclass
class Sheet:
    name: str
    cells: dict[str, Cell] = field(default_factory=dict)
    column_widths: dict[str, float] = field(default_factory=lambda: dict(COLUMN_WIDTHS))

    def put(self, ref: str, cell: Cell) -> None:
        self.cells[ref] = cell

    def rows(self) -> Iterator[tuple[int, list[tuple[str, Cell]]]]:
        """Cells grouped by row, both rows and columns ascending."""
        keyed = sorted(self.cells.items(), key=lambda kv: (split_a1(kv[0])[1], column_index(split_a1(kv[0])[0])))
        row_no, bucket = None, []
        for ref, cell in keyed:
            r = split_a1(ref)[1]
            if r != row_no and bucket:
                yield row_no, bucket
                bucket = []
            row_no = r
            bucket.append((ref, cell))
        if bucket:
            yield row_no, bucket


@dataclass(frozen=True)
class DefinedName:
    name: str
    target: CellAddress


@dataclass(frozen=True)
class Block:
    variable: str
    sheet: str
    start_row: int
    reference_rows: tuple[tuple[str, str], ...]  # (label, defined name)
    definition_row: tuple[str, str]  # (label, formula text)

    @property
    def definition_row_number(self) -> int:
        return self.start_row + len(self.reference_rows)

    @property
    def end_row(self) -> int:
        return self.definition_row_number


@dataclass
class WorkbookPlan:
    sheets: list[Sheet]
    defined_names: list[DefinedName]
    blocks: list[Block] = field(default_factory=list)

    def sheet(self, name: str) -> Sheet:
        for s in self.sheets:
            if s.name == name:
                return s
        raise KeyError(name)

    def cell(self, address: CellAddress) -> Cell | None:
        return self.sheet(address.sheet).cells.get(address.a1)

    def target(self, name: str) -> CellAddress:
        key = name.lower()
        for dn in self.defined_names:
            if dn.name.lower() == key:
                return dn.target
        raise KeyError(name)

    @property
    def model_sheets(self) -> list[Sheet]:
        return self.sheets[1:-1]

    def check(self) -> None:
        """Raise PlanError if structural invariants do not hold."""
        names = [s.name for s in self.sheets]
        if len({n.lower() for n in names}) != len(names):
            raise PlanError(f"duplicate sheet names: {names}")
        if len(names) < 3 or names[0] != INTERFACE or names[-1] != PARAMETERS:
            raise PlanError(f"sheets must run Interface, Model..., Parameters: {names}")
        seen = set()
        for dn in self.defined_names:
            if dn.name.lower() in seen:
                raise PlanError(f"defined name collision: {dn.name}")
            seen.add(dn.name.lower())
            if dn.target.sheet not in names:
                raise PlanError(f"{dn.name} targets missing sheet {dn.target.sheet}")


def derive_defined_name(label: str) -> str:
    """``"Surplus Dist Cost"`` -> ``"Surplus_Dist_Cost"``."""
    if not label.strip():
        raise InvalidNameError("empty label")
    name = label.replace(" ", "_")
    problem = name_problem(name)
    if problem:
        raise InvalidNameError(f"{label!r}: {problem}")
    return name


def model_sheet_name(submodel: str | None) -> str:
    return MODEL if submodel is None else f"{MODEL} {submodel}"


def plan_block(
    variable: VariableDecl,
    start_row: int,
    name_table: Mapping[str, DefinedName],
    sheet: str = MODEL,
    labels: Mapping[str, str] | None = None,
) -> Block:
    """Lay out one variable's block: a row per referenced variable, then the definition row."""
    if variable.formula is None:
        raise PlanError(f"{variable.name} has no formula to lay out")
    refs = collect_refs(variable.formula)
    missing = [r for r in refs if r not in name_table]
    if missing:
        raise PlanError(f"unresolved reference {missing[0]} in {variable.name}")
    labels = labels or {}
    binding = {ref: f"{VALUE_COLUMN}{start_row + i}" for i, ref in enumerate(refs)}
    return Block(
        variable=variable.name,
        sheet=sheet,
        start_row=start_row,
        reference_rows=tuple(
            (labels.get(r) or name_table[r].name.replace("_", " "), name_table[r].name) for r in refs
        ),
        definition_row=(variable.label, render_cell_formula(variable.formula, binding)),
    )


def plan_workbook(model: Model) -> WorkbookPlan:
    diags = validate(model)
    if has_errors(diags):
        raise PlanError("model has errors: " + "; ".join(str(d) for d in diags if d.is_error))

    order = topological_order(model)
    if model.submodels:
        sheet_names = [model_sheet_name(s) for s in model.submodels]
        if any(d.submodel is None for d in order):
            sheet_names.insert(0, MODEL)
    else:
        sheet_names = [MODEL]
    sheet_of = {d.name: model_sheet_name(d.submodel) if model.submodels else MODEL for d in order}

    names: dict[str, DefinedName] = {}
    labels = {d.name: d.label for d in model.declarations}

    def add_name(decl: VariableDecl, address: CellAddress) -> None:
        name = derive_defined_name(decl.label)
        if name.lower() in {k.lower() for k in names}:
            raise PlanError(f"defined name collision: {name}")
        names[decl.name] = DefinedName(name, address)

    interface = Sheet(INTERFACE)
    parameters = Sheet(PARAMETERS)
    model_sheets = {n: Sheet(n) for n in sheet_names}

    # Interface: inputs, a blank row, outputs
    bold = Style(bold=True)
    interface.put("A1", TextCell("Input", bold))
    row = 2
    for d in model.of_kind(VariableKind.INTERFACE_INPUT):
        interface.put(f"A{row}", TextCell(d.label))
        interface.put(f"B{row}", NumberCell(d.initial_value, Style(bold=True, format=d.format)))
        add_name(d, CellAddress(INTERFACE, VALUE_COLUMN, row))
        row += 1
    output_header_row = row + 1

    for i, d in enumerate(model.of_kind(VariableKind.PARAMETER), 1):
        parameters.put(f"A{i}", TextCell(d.label, bold))
        parameters.put(f"B{i}", NumberCell(d.initial_value, Style(bold=True, format=d.format)))
        add_name(d, CellAddress(PARAMETERS, VALUE_COLUMN, i))

    # definition cells first, so every reference resolves regardless of sheet
    next_row = {n: FIRST_BLOCK_ROW for n in sheet_names}
    starts = {}
    for d in order:
        sheet = sheet_of[d.name]
        starts[d.name] = next_row[sheet]
        k = len(collect_refs(d.formula))
        add_name(d, CellAddress(sheet, VALUE_COLUMN, next_row[sheet] + k))
        next_row[sheet] += k + 2

    blocks = []
    fmt = {d.name: d.format for d in model.declarations}
    for d in order:
        sheet = model_sheets[sheet_of[d.name]]
        block = plan_block(d, starts[d.name], names, sheet.name, labels)
        blocks.append(block)
        for i, (label, ref_name) in enumerate(block.reference_rows):
            r = block.start_row + i
            source = collect_refs(d.formula)[i]
            sheet.put(f"A{r}", TextCell(label))
            sheet.put(f"B{r}", FormulaCell("=" + ref_name, Style(format=fmt[source])))
        r = block.definition_row_number
        label, text = block.definition_row
        sheet.put(f"A{r}", TextCell(label, Style(bold=True, top_border=True)))
        sheet.put(f"B{r}", FormulaCell(text, Style(bold=True, top_border=True, format=d.format)))

    interface.put(f"A{output_header_row}", TextCell("Output", bold))
    row = output_header_row + 1
    for d in model.of_kind(VariableKind.INTERFACE_OUTPUT):
        interface.put(f"A{row}", TextCell(d.label))
        interface.put(f"B{row}", FormulaCell("=" + names[d.name].name, Style(format=d.format)))
        row += 1

    plan = WorkbookPlan(
        sheets=[interface, *model_sheets.values(), parameters],
        defined_names=list(names.values()),
        blocks=blocks,
    )
    plan.check()
    return plan


def interface_output_cells(plan: WorkbookPlan) -> dict[str, CellAddress]:
    """Defined name -> Interface cell holding its reference formula."""
    out = {}
    for ref, cell in plan.sheet(INTERFACE).cells.items():
        if isinstance(cell, FormulaCell):
            col, row = split_a1(ref)
            out[cell.text[1:]] = CellAddress(INTERFACE, col, row)
    return out


def with_cached_values(plan: WorkbookPlan, values: Mapping[CellAddress, object]) -> WorkbookPlan:
    """Copy of ``plan`` whose formula cells carry the given cached values."""
    sheets = []
    for sheet in plan.sheets:
        cells = {}
        for ref, cell in sheet.cells.items():
            if isinstance(cell, FormulaCell):
                col, row = split_a1(ref)
                cell = replace(cell, cached=values.get(CellAddress(sheet.name, col, row)))
            cells[ref] = cell
        sheets.append(Sheet(sheet.name, cells, dict(sheet.column_widths)))
    return WorkbookPlan(sheets, list(plan.defined_names), list(plan.blocks))
