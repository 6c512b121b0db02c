"""ssmi command line: check, lint, build, diagram, eval, verify.

Exit codes: 0 success, 1 model errors, 2 verification failure, 3 I/O or usage.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from typing import Sequence

from . import __version__
from .diagram import emit_dot
from .evaluator import (
    PlanEvaluator,
    eval_model,
    format_value,
    json_value,
    random_overrides,
    verify_equivalence,
)
from .formula import format_number, render_display
from .layout import plan_workbook, with_cached_values
from .model import Diagnostic, Model, golden_rule_lint, has_errors, parse_model
from .xlsx import emit_xlsx

EXIT_OK = 0
EXIT_MODEL = 1
EXIT_VERIFY = 2
EXIT_USAGE = 3

BUILD_TRIALS = 20


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _color(code: str, text: str, stream) -> str:
    if os.environ.get("SSMI_NO_COLOR") or not getattr(stream, "isatty", lambda: False)():
        return text
    return f"\033[{code}m{text}\033[0m"


def _load(path: str) -> tuple[Model, list[Diagnostic]]:
    try:
        with open(path, encoding="utf-8") as fh:
            source = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return parse_model(source)


def _report(diags: list[Diagnostic], path: str, stream) -> None:
    for d in diags:
        where = f"{path}:{d.location}: " if d.location else f"{path}: "
        tag = _color("31;1" if d.is_error else "33", d.severity, stream)
        print(f"{where}{tag}[{d.code}] {d.message}", file=stream)


def _promote(diags: list[Diagnostic], strict: bool, golden_error: bool) -> list[Diagnostic]:
    out = []
    for d in diags:
        if not d.is_error and (strict or (golden_error and d.code == "golden-rule")):
            d = Diagnostic("error", d.code, d.message, d.variable, d.location)
        out.append(d)
    return out


def _checked_model(args, lint: bool = True) -> tuple[Model, list[Diagnostic]]:
    model, diags = _load(args.model)
    if lint and not has_errors(diags):
        diags += golden_rule_lint(model)
    diags = _promote(diags, getattr(args, "strict", False), getattr(args, "golden_rule_error", False))
    return model, diags


def cmd_check(args) -> int:
    model, diags = _checked_model(args)
    if args.json:
        doc = {
            "file": args.model,
            "ok": not has_errors(diags),
            "errors": sum(d.is_error for d in diags),
            "warnings": sum(not d.is_error for d in diags),
            "diagnostics": [d.as_dict() for d in diags],
        }
        print(json.dumps(doc, indent=2, ensure_ascii=False))
    else:
        _report(diags, args.model, sys.stdout)
        if not diags:
            print(f"{args.model}: ok ({len(model.declarations)} variables)")
    return EXIT_MODEL if has_errors(diags) else EXIT_OK


def cmd_lint(args) -> int:
    model, diags = _load(args.model)
    if has_errors(diags):
        _report([d for d in diags if d.is_error], args.model, sys.stderr)
        return EXIT_MODEL
    lint = _promote(golden_rule_lint(model), args.strict, False)
    _report(lint, args.model, sys.stdout)
    return EXIT_MODEL if has_errors(lint) else EXIT_OK


def formula_list(model: Model, locale: str = "en") -> list[tuple[str, str, str]]:
    """(variable, type, formula / initial value) rows in declaration order."""
    rows = []
    dec = "," if locale == "fr" else "."
    for d in model.declarations:
        if d.formula is not None:
            text = render_display(d.formula, locale)
        else:
            text = format_number(d.initial_value, dec)
        rows.append((d.label, d.kind.type_column, text))
    return rows


def cmd_build(args) -> int:
    model, diags = _checked_model(args)
    _report(diags, args.model, sys.stderr)
    if has_errors(diags):
        return EXIT_MODEL
    plan = plan_workbook(model)
    evaluator = PlanEvaluator(plan)
    rng = random.Random(args.seed)
    vectors = [{}] + [random_overrides(model, rng) for _ in range(BUILD_TRIALS)]
    for overrides in vectors:
        report = verify_equivalence(model, evaluator, overrides)
        if not report.passed:
            print(f"verification failed, {args.output} not written", file=sys.stderr)
            print(report, file=sys.stderr)
            return EXIT_VERIFY
    plan = with_cached_values(plan, evaluator.evaluate())
    try:
        emit_xlsx(plan, args.output, currency_symbol=args.currency_symbol)
    except OSError as exc:
        raise UsageError(f"cannot write {args.output}: {exc.strerror}") from None

    rows = formula_list(model, args.locale_display)
    width = max([len(r[0]) for r in rows] + [8])
    twidth = max([len(r[1]) for r in rows] + [4])
    print(f"{'Variable':<{width}}  {'Type':<{twidth}}  Formula / initial value")
    for label, kind, text in rows:
        print(f"{label:<{width}}  {kind:<{twidth}}  {text}")
    sheets = ", ".join(s.name for s in plan.sheets)
    print(f"wrote {args.output}: sheets {sheets}; {len(plan.defined_names)} defined names")
    return EXIT_OK


def cmd_diagram(args) -> int:
    model, diags = _checked_model(args, lint=False)
    if has_errors(diags):
        _report(diags, args.model, sys.stderr)
        return EXIT_MODEL
    text = emit_dot(model, split_submodels=args.split_submodels)
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        try:
            with open(args.output, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write {args.output}: {exc.strerror}") from None
    return EXIT_OK


def _parse_sets(model: Model, pairs: Sequence[str]) -> dict[str, float]:
    out = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--set expects Name=value, got {pair!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise UsageError(f"--set {name}: {value!r} is not a number") from None
        if name.strip() not in model:
            raise UsageError(f"--set: no variable named {name.strip()}")
        if model[name.strip()].kind.has_formula:
            raise UsageError(f"--set: {name.strip()} is computed by a formula")
    return out


def cmd_eval(args) -> int:
    model, diags = _checked_model(args, lint=False)
    if has_errors(diags):
        _report(diags, args.model, sys.stderr)
        return EXIT_MODEL
    values = eval_model(model, _parse_sets(model, args.set))
    if args.json:
        print(json.dumps({"file": args.model, "values": {k: json_value(v) for k, v in values.items()}}, indent=2))
        return EXIT_OK
    for d in model.declarations:
        decimals = d.format.decimals if d.format.kind == "currency" else None
        print(f"{d.name} {format_value(values[d.name], decimals)}")
    return EXIT_OK


def cmd_verify(args) -> int:
    model, diags = _checked_model(args, lint=False)
    if has_errors(diags):
        _report(diags, args.model, sys.stderr)
        return EXIT_MODEL
    plan = plan_workbook(model)
    evaluator = PlanEvaluator(plan)
    rng = random.Random(args.seed)
    failures = 0
    for trial in range(args.trials):
        overrides = random_overrides(model, rng)
        report = verify_equivalence(model, evaluator, overrides)
        if not report.passed:
            failures += 1
            if failures <= 5:
                print(f"trial {trial}: {report}", file=sys.stderr)
    verdict = "PASS" if not failures else "FAIL"
    print(f"{verdict}: {args.trials - failures}/{args.trials} trials agree (seed {args.seed})")
    return EXIT_OK if not failures else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssmi", description="Compile structured spreadsheet models to xlsx workbooks.")
    parser.add_argument("--version", action="version", version=f"ssmi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="parse, validate and lint a model")
    p.add_argument("model")
    p.add_argument("--strict", action="store_true", help="treat warnings as errors")
    p.add_argument("--golden-rule-error", action="store_true", help="treat golden-rule findings as errors")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("lint", help="report formulas mixing operator kinds")
    p.add_argument("model")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("build", help="write the three-tier workbook")
    p.add_argument("model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--currency-symbol", default="$")
    p.add_argument("--locale-display", choices=("en", "fr"), default="en")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--golden-rule-error", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("diagram", help="write the Formula Diagram as DOT")
    p.add_argument("model")
    p.add_argument("-o", "--output")
    p.add_argument("--split-submodels", action="store_true")
    p.set_defaults(func=cmd_diagram)

    p = sub.add_parser("eval", help="evaluate every variable")
    p.add_argument("model")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="compare model and workbook evaluation on random inputs")
    p.add_argument("model")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ssmi: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
