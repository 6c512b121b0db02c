"""Test helpers: random models, a minimal xlsx reader and a small DOT parser.

None of these reuse the package's emitters or planners, so tests built on
them check the package against an independent reading of its output.
"""

from __future__ import annotations

import random
import re
import zipfile
import xml.etree.ElementTree as ET
from pathlib import Path

from ssmi.formula import BinOp, Call, Neg, Number, Ref
from ssmi.model import Model, NumberFormat, VariableDecl, VariableKind, validate

ROOT = Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"

MAIN = "{http://schemas.openxmlformats.org/spreadsheetml/2006/main}"
REL = "{http://schemas.openxmlformats.org/officeDocument/2006/relationships}"
PKG_REL = "{http://schemas.openxmlformats.org/package/2006/relationships}"

_WORDS = ["Cost", "Rate", "Days", "Price", "Units", "Tax", "Margin", "Fee", "Total", "Share", "Volume", "Net"]
_LITERALS = [0.0, 1.0, 2.0, 0.5, 3.25, 10.0, 100.0, 0.36]
_FORMATS = [NumberFormat(), NumberFormat("currency", 2), NumberFormat("percent", 1), NumberFormat("integer")]


def random_expression(rng: random.Random, names: list[str], depth: int = 3):
    if depth == 0 or rng.random() < 0.25:
        if names and rng.random() < 0.8:
            return Ref(rng.choice(names))
        return Number(rng.choice(_LITERALS))
    pick = rng.random()
    sub = lambda: random_expression(rng, names, depth - 1)  # noqa: E731
    if pick < 0.40:
        return BinOp(rng.choice("+-*/"), sub(), sub())
    if pick < 0.47:
        return BinOp("^", sub(), Number(rng.choice([0.0, 1.0, 2.0, 0.5])))
    if pick < 0.55:
        return BinOp(rng.choice(["<", ">", "<=", ">=", "=", "<>"]), sub(), sub())
    if pick < 0.63:
        return Neg(sub())
    if pick < 0.80:
        cond = BinOp(rng.choice([">", "<", "="]), sub(), sub()) if rng.random() < 0.8 else sub()
        return Call("IF", (cond, sub(), sub()))
    if pick < 0.92:
        return Call(rng.choice(["MIN", "MAX", "SUM"]), tuple(sub() for _ in range(rng.randint(1, 3))))
    return Call("ROUND", (sub(), Number(float(rng.randint(0, 3)))))


def random_model(rng: random.Random) -> Model:
    """A valid model: random DAG of formulas over a few constants, shuffled declaration order."""
    n_const = rng.randint(1, 5)
    n_formula = rng.randint(1, 8)
    used: set[str] = set()

    def fresh() -> str:
        while True:
            name = f"{rng.choice(_WORDS)}_{rng.randint(1, 99)}"
            if name.lower() not in used:
                used.add(name.lower())
                return name

    decls = []
    available: list[str] = []
    for _ in range(n_const):
        kind = rng.choice([VariableKind.PARAMETER, VariableKind.INTERFACE_INPUT])
        value = float(rng.randint(0, 100)) if rng.random() < 0.6 else round(rng.uniform(0, 50), 2)
        name = fresh()
        decls.append(VariableDecl(name, kind, initial_value=value, format=rng.choice(_FORMATS)))
        available.append(name)
    for _ in range(n_formula):
        kind = rng.choice([VariableKind.INTERMEDIATE, VariableKind.INTERMEDIATE, VariableKind.INTERFACE_OUTPUT])
        expr = random_expression(rng, available)
        name = fresh()
        decls.append(VariableDecl(name, kind, formula=expr, format=rng.choice(_FORMATS)))
        available.append(name)
    rng.shuffle(decls)

    submodels: tuple[str, ...] = ()
    if rng.random() < 0.3:
        submodels = tuple(f"Part{i}" for i in range(1, rng.randint(2, 3) + 1))
        decls = [
            VariableDecl(d.name, d.kind, d.formula, d.initial_value, d.format, submodel=rng.choice((None,) + submodels))
            for d in decls
        ]
    model = Model(tuple(decls), submodels)
    errors = [d for d in validate(model) if d.is_error]
    assert not errors, errors
    return model


def random_models(seed: int, count: int) -> list[Model]:
    rng = random.Random(seed)
    return [random_model(rng) for _ in range(count)]


# --- xlsx reading -------------------------------------------------------------

def read_xlsx(path_or_bytes) -> dict:
    """Read back what the emitter wrote: sheet order, cells and defined names.

    Cells map A1 -> dict(type=..., value=..., formula=..., style=int).
    """
    zf = zipfile.ZipFile(path_or_bytes)
    wb = ET.fromstring(zf.read("xl/workbook.xml"))
    rels = ET.fromstring(zf.read("xl/_rels/workbook.xml.rels"))
    targets = {r.get("Id"): r.get("Target") for r in rels.iter(f"{PKG_REL}Relationship")}
    sheets = []
    for s in wb.iter(f"{MAIN}sheet"):
        part = "xl/" + targets[s.get(f"{REL}id")]
        root = ET.fromstring(zf.read(part))
        cells = {}
        for c in root.iter(f"{MAIN}c"):
            cell = {"style": int(c.get("s", "0")), "type": c.get("t", "n")}
            f = c.find(f"{MAIN}f")
            v = c.find(f"{MAIN}v")
            t = c.find(f"{MAIN}is/{MAIN}t")
            cell["formula"] = f.text if f is not None else None
            if t is not None:
                cell["value"] = t.text or ""
            elif v is not None:
                cell["value"] = {"n": float, "b": lambda x: x == "1", "e": str}[cell["type"]](v.text)
            else:
                cell["value"] = None
            cells[c.get("r")] = cell
        widths = {int(col.get("min")): float(col.get("width")) for col in root.iter(f"{MAIN}col")}
        sheets.append({"name": s.get("name"), "cells": cells, "widths": widths})
    names = {d.get("name"): d.text for d in wb.iter(f"{MAIN}definedName")}
    calc = wb.find(f"{MAIN}calcPr")
    return {
        "sheets": sheets,
        "defined_names": names,
        "full_calc_on_load": calc is not None and calc.get("fullCalcOnLoad") == "1",
        "parts": zf.namelist(),
        "zip": zf,
    }


def read_styles(zf: zipfile.ZipFile) -> list[dict]:
    """cellXfs entries resolved to (bold, top_border, format code)."""
    root = ET.fromstring(zf.read("xl/styles.xml"))
    codes = {int(n.get("numFmtId")): n.get("formatCode") for n in root.iter(f"{MAIN}numFmt")}
    fonts = [f.find(f"{MAIN}b") is not None for f in root.find(f"{MAIN}fonts")]
    borders = []
    for b in root.find(f"{MAIN}borders"):
        top = b.find(f"{MAIN}top")
        borders.append(top is not None and top.get("style") == "thin")
    out = []
    for xf in root.find(f"{MAIN}cellXfs"):
        fid = int(xf.get("numFmtId"))
        out.append({
            "bold": fonts[int(xf.get("fontId"))],
            "top_border": borders[int(xf.get("borderId"))],
            "format": codes.get(fid, "General" if fid == 0 else f"builtin:{fid}"),
        })
    return out


# --- DOT parsing --------------------------------------------------------------

_DOT_TOKEN = re.compile(r'\s+|(?P<tok>->|--|[{}\[\];,=]|"(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z0-9_.]*|-?\d+(?:\.\d+)?)')


class DotSyntaxError(ValueError):
    pass


def dot_tokens(text: str) -> list[str]:
    out, pos = [], 0
    while pos < len(text):
        m = _DOT_TOKEN.match(text, pos)
        if not m:
            raise DotSyntaxError(f"bad character at {pos}: {text[pos]!r}")
        if m.group("tok"):
            out.append(m.group("tok"))
        pos = m.end()
    return out


def _unquote(tok: str) -> str:
    if tok.startswith('"'):
        return re.sub(r'\\(.)', r'\1', tok[1:-1])
    return tok


def parse_dot(text: str) -> dict:
    """Parse the subset of DOT graph grammar used by diagram output.

    Returns nodes (id -> attrs, plus "cluster" key), edges [(a, b, attrs)], clusters.
    """
    toks = dot_tokens(text)
    i = 0

    def peek():
        return toks[i] if i < len(toks) else None

    def take(expected=None):
        nonlocal i
        if i >= len(toks):
            raise DotSyntaxError("unexpected end")
        tok = toks[i]
        if expected is not None and tok != expected:
            raise DotSyntaxError(f"expected {expected!r}, got {tok!r}")
        i += 1
        return tok

    def is_id(tok):
        return tok is not None and (tok.startswith('"') or re.match(r"^[A-Za-z_0-9.-]", tok)) and tok not in ("->", "--")

    def attr_list():
        attrs = {}
        while peek() == "[":
            take("[")
            while peek() != "]":
                key = take()
                take("=")
                attrs[_unquote(key)] = _unquote(take())
                if peek() in (",", ";"):
                    take()
            take("]")
        return attrs

    nodes: dict[str, dict] = {}
    edges: list[tuple[str, str, dict]] = []
    clusters: dict[str, dict] = {}

    def stmt_list(cluster):
        while peek() != "}":
            tok = peek()
            if tok is None:
                raise DotSyntaxError("unclosed brace")
            if tok == "subgraph":
                take()
                name = _unquote(take()) if is_id(peek()) else None
                take("{")
                clusters[name] = {"nodes": []}
                stmt_list(name)
                take("}")
            elif tok in ("node", "edge", "graph"):
                take()
                attr_list()
            elif is_id(tok):
                first = _unquote(take())
                if peek() == "=":
                    take()
                    value = _unquote(take())
                    if cluster is not None:
                        clusters[cluster][first] = value
                elif peek() == "->":
                    chain = [first]
                    while peek() == "->":
                        take()
                        chain.append(_unquote(take()))
                    attrs = attr_list()
                    for a, b in zip(chain, chain[1:]):
                        edges.append((a, b, attrs))
                else:
                    attrs = attr_list()
                    attrs["cluster"] = cluster
                    nodes[first] = attrs
                    if cluster is not None:
                        clusters[cluster]["nodes"].append(first)
            else:
                raise DotSyntaxError(f"unexpected {tok!r}")
            if peek() == ";":
                take()

    take("digraph")
    name = _unquote(take()) if is_id(peek()) else None
    take("{")
    stmt_list(None)
    take("}")
    if i != len(toks):
        raise DotSyntaxError("trailing tokens")
    return {"name": name, "nodes": nodes, "edges": edges, "clusters": clusters}
