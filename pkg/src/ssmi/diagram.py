"""Formula Diagram as Graphviz DOT.

Shapes follow the variable kinds: parameters are triangles, interface inputs
boxes, intermediates circles and interface outputs ellipses. With
``split_submodels`` each sub-model is a cluster and references that cross
clusters go through doublecircle connector nodes.
"""

from __future__ import annotations

from .formula import collect_refs
from .model import Model, VariableKind

SHAPES = {
    VariableKind.PARAMETER: "triangle",
    VariableKind.INTERFACE_INPUT: "box",
    VariableKind.INTERMEDIATE: "circle",
    VariableKind.INTERFACE_OUTPUT: "ellipse",
}
CONNECTOR_SHAPE = "doublecircle"


def quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def edges(model: Model) -> list[tuple[str, str]]:
    """(referenced, defined) pairs in declaration order, without duplicates."""
    out = []
    for d in model.declarations:
        if d.formula is not None:
            out.extend((r, d.name) for r in collect_refs(d.formula))
    return out


def _node(name: str, label: str, shape: str) -> str:
    return f"{quote(name)} [label={quote(label)}, shape={shape}];"


def connector_id(variable: str, group: str | None) -> str:
    return f"{variable}@{group or '_main'}"


def emit_dot(model: Model, split_submodels: bool = False) -> str:
    lines = ["digraph FormulaDiagram {", "  rankdir=LR;", "  node [fontsize=10];"]
    by_name = {d.name: d for d in model.declarations}

    if not split_submodels or not model.submodels:
        for d in model.declarations:
            lines.append("  " + _node(d.name, d.label, SHAPES[d.kind]))
        for src, dst in edges(model):
            lines.append(f"  {quote(src)} -> {quote(dst)};")
        lines.append("}")
        return "\n".join(lines) + "\n"

    group = {d.name: d.submodel for d in model.declarations}
    # per group: node lines, connector nodes (in order) and internal edges
    groups: dict[str | None, list[str]] = {None: []}
    groups.update({s: [] for s in model.submodels})
    connectors: dict[str | None, list[str]] = {g: [] for g in groups}
    cross: list[str] = []

    def connector(variable: str, g: str | None) -> str:
        cid = connector_id(variable, g)
        if cid not in connectors[g]:
            connectors[g].append(cid)
            groups[g].append(_node(cid, by_name[variable].label, CONNECTOR_SHAPE))
        return cid

    for d in model.declarations:
        groups[d.submodel].append(_node(d.name, d.label, SHAPES[d.kind]))
    for src, dst in edges(model):
        home, away = group[src], group[dst]
        if home == away:
            groups[home].append(f"{quote(src)} -> {quote(dst)};")
            continue
        out_conn = connector_id(src, home)
        fresh = out_conn not in connectors[home]
        connector(src, home)
        if fresh:
            groups[home].append(f"{quote(src)} -> {quote(out_conn)};")
        in_conn = connector_id(src, away)
        if in_conn not in connectors[away]:
            connector(src, away)
            cross.append(f"  {quote(out_conn)} -> {quote(in_conn)} [style=dashed, constraint=false];")
        groups[away].append(f"{quote(in_conn)} -> {quote(dst)};")

    for line in groups[None]:
        lines.append("  " + line)
    for sub in model.submodels:
        lines.append(f"  subgraph {quote('cluster_' + sub)} {{")
        lines.append(f"    label={quote(sub)};")
        lines.extend("    " + line for line in groups[sub])
        lines.append("  }")
    lines.extend(cross)
    lines.append("}")
    return "\n".join(lines) + "\n"
