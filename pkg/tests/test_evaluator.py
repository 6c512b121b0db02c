import math
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmi.evaluator import (
    EvalError,
    GridError,
    PlanEvaluator,
    eval_expression,
    eval_model,
    eval_plan,
    format_value,
    random_overrides,
    values_match,
    verify_equivalence,
)
from ssmi.formula import parse_expression
from ssmi.layout import CellAddress, FormulaCell, Sheet, WorkbookPlan, plan_workbook
from ssmi.model import Model, parse_model
from support import MODELS, random_model


def load(name):
    model, _ = parse_model((MODELS / name).read_text())
    return model


@pytest.fixture(scope="module")
def car():
    return load("car_rental.ssmi")


def ev(source, **env):
    return eval_expression(parse_expression(source), {k: float(v) for k, v in env.items()})


def test_surplus_distance_examples():
    f = "IF(Total_Distance > Total_Allowance, Total_Distance - Total_Allowance, 0)"
    assert ev(f, Total_Distance=1452, Total_Allowance=1200) == 252
    assert ev(f, Total_Distance=900, Total_Allowance=1200) == 0


def test_division_by_zero():
    assert ev("1/0") == EvalError("DivZero")
    assert ev("1/0").display == "#DIV/0!"
    assert ev("0^-1") == EvalError("DivZero")


def test_if_is_lazy():
    assert ev("IF(1>0, 5, 1/0)") == 5
    assert ev("IF(1<0, 1/0, 7)") == 7
    assert ev("IF(1/0 > 0, 1, 2)") == EvalError("DivZero")


def test_errors_propagate():
    assert ev("1 + 1/0 * 3") == EvalError("DivZero")
    assert ev("MIN(1, 2, 1/0)") == EvalError("DivZero")
    assert ev("-(1/0)") == EvalError("DivZero")
    assert ev("X + 1") == EvalError("Unresolved")
    assert ev("(-8)^0.5") == EvalError("BadArg")
    assert ev("10^400") == EvalError("BadArg")


def test_functions():
    assert ev("MIN(3, 1, 2)") == 1
    assert ev("MAX(3, 1, 2)") == 3
    assert ev("SUM(0.1, 0.2, 0.3)") == 0.6
    assert ev("2^3^2") == 512
    assert ev("-2^2") == 4


@pytest.mark.parametrize(
    "source,expected",
    [
        ("ROUND(2.5, 0)", 3.0), ("ROUND(-2.5, 0)", -3.0), ("ROUND(1.005, 2)", 1.01),
        ("ROUND(2.675, 2)", 2.68), ("ROUND(1234.5, -2)", 1200.0), ("ROUND(0.125, 2.9)", 0.13),
        ("ROUND(1/3, 20)", 1 / 3),
    ],
)
def test_round_half_away_from_zero(source, expected):
    assert ev(source) == expected


def test_comparisons_give_booleans():
    assert ev("1 < 2") is True
    assert ev("1 <> 1") is False
    assert ev("(1 < 2) + 1") == 2


def test_eval_model_car_rental(car):
    values = eval_model(car)
    assert values["Daily_Cost"] == 696
    assert values["Total_Allowance"] == 1200
    assert values["Surplus_Distance"] == 252
    assert values["Surplus_Dist_Cost"] == pytest.approx(90.72, abs=1e-9)
    assert values["Rental_Cost"] == pytest.approx(786.72, abs=1e-9)
    assert list(values) == [d.name for d in car.declarations]


def test_eval_model_overrides(car):
    values = eval_model(car, {"Nb_Days": 10, "Total_Distance": 900})
    assert format_value(values["Rental_Cost"], 2) == "580.00"


def test_eval_model_bad_overrides(car):
    with pytest.raises(KeyError):
        eval_model(car, {"Nope": 1})
    with pytest.raises(ValueError):
        eval_model(car, {"Rental_Cost": 1})


def test_eval_plan_car_rental(car):
    values = eval_plan(plan_workbook(car))
    assert values[CellAddress("Model", "B", 20)] == pytest.approx(786.72, abs=1e-9)
    assert values[CellAddress("Interface", "B", 6)] == pytest.approx(786.72, abs=1e-9)


def test_eval_plan_empty():
    assert eval_plan(plan_workbook(Model())) == {}


def test_plan_evaluator_override_lookup_is_case_insensitive(car):
    evaluator = PlanEvaluator(plan_workbook(car))
    a = evaluator.evaluate({"nb_days": 10, "TOTAL_DISTANCE": 900})
    assert a[CellAddress("Interface", "B", 6)] == pytest.approx(580.0)
    with pytest.raises(KeyError):
        evaluator.evaluate({"Rental_Cost": 3})


def _swap_rows(plan, sheet_name, a, b):
    sheets = []
    for sheet in plan.sheets:
        cells = dict(sheet.cells)
        if sheet.name == sheet_name:
            cells[a], cells[b] = replace(cells[b], style=cells[a].style), replace(cells[a], style=cells[b].style)
        sheets.append(Sheet(sheet.name, cells, sheet.column_widths))
    return WorkbookPlan(sheets, plan.defined_names, plan.blocks)


def test_verify_passes(car):
    report = verify_equivalence(car, plan_workbook(car))
    assert report.passed
    assert str(report) == "PASS: 10/10 variables matched"


def test_verify_random_inputs(car):
    evaluator = PlanEvaluator(plan_workbook(car))
    rng = random.Random(7)
    for _ in range(100):
        overrides = {"Nb_Days": float(rng.randint(1, 60)), "Total_Distance": rng.uniform(0, 10000)}
        assert verify_equivalence(car, evaluator, overrides).passed


def test_verify_detects_corruption(car):
    plan = plan_workbook(car)
    block = next(b for b in plan.blocks if b.variable == "Surplus_Distance")
    r = block.start_row
    bad = _swap_rows(plan, "Model", f"B{r}", f"B{r + 1}")
    report = verify_equivalence(car, bad)
    assert not report.passed
    assert report.mismatches[0].variable == "Surplus_Distance"
    assert str(report).startswith("FAIL: ")
    assert "Surplus_Distance" in str(report)


def test_grid_errors():
    plan = plan_workbook(Model())
    iface = plan.sheet("Interface")
    for text, match in [("=Missing", "unresolved name"), ("=A1", "holds no value"), ("=1 +", "expected")]:
        cells = dict(iface.cells, B9=FormulaCell(text))
        bad = WorkbookPlan([Sheet("Interface", cells)] + plan.sheets[1:], [], [])
        with pytest.raises(GridError, match=match):
            PlanEvaluator(bad)
    cyc = WorkbookPlan([Sheet("S", {"B1": FormulaCell("=B2"), "B2": FormulaCell("=B1")})], [], [])
    with pytest.raises(GridError, match="circular"):
        PlanEvaluator(cyc)


def test_values_match():
    assert values_match(1.0, 1.0 + 1e-13)
    assert not values_match(1.0, 1.0 + 1e-9)
    assert values_match(EvalError("DivZero"), EvalError("DivZero"))
    assert not values_match(EvalError("DivZero"), 0.0)
    assert not values_match(True, 1.0)
    assert values_match(0.0, -0.0)


def test_format_value():
    assert format_value(786.72, 2) == "786.72"
    assert format_value(252.0) == "252"
    assert format_value(True) == "TRUE"
    assert format_value(EvalError("BadArg")) == "#NUM!"


# --- differential law ------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_model_and_grid_agree(seed):
    rng = random.Random(seed)
    model = random_model(rng)
    evaluator = PlanEvaluator(plan_workbook(model))
    for overrides in ({}, random_overrides(model, rng), random_overrides(model, rng)):
        report = verify_equivalence(model, evaluator, overrides)
        assert report.passed, str(report)


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12), st.integers(-3, 6))
def test_round_matches_decimal_definition(x, digits):
    from decimal import ROUND_HALF_UP, Decimal

    got = eval_expression(parse_expression(f"ROUND(X, {digits})"), {"X": x})
    want = float(Decimal(repr(x)).quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP))
    assert got == want or math.isclose(got, want, rel_tol=1e-15)
