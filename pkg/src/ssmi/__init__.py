"""Compile structured spreadsheet models into three-tier xlsx workbooks."""

from .diagram import emit_dot
from .evaluator import EvalError, eval_expression, eval_model, eval_plan, verify_equivalence
from .formula import (
    collect_refs,
    operator_kinds_by_slot,
    parse_expression,
    render_cell_formula,
    render_display,
)
from .layout import derive_defined_name, plan_block, plan_workbook
from .model import golden_rule_lint, parse_model, topological_order, validate
from .xlsx import emit_xlsx

__version__ = "0.1.0"

__all__ = [
    "EvalError",
    "collect_refs",
    "derive_defined_name",
    "emit_dot",
    "emit_xlsx",
    "eval_expression",
    "eval_model",
    "eval_plan",
    "golden_rule_lint",
    "operator_kinds_by_slot",
    "parse_expression",
    "parse_model",
    "plan_block",
    "plan_workbook",
    "render_cell_formula",
    "render_display",
    "topological_order",
    "validate",
    "verify_equivalence",
]
