"""SpreadsheetML (.xlsx) writer for workbook plans.

Strings are written inline, formulas carry cached values when the plan has
them, and the ZIP container is built with fixed timestamps so the same plan
always yields the same bytes.
"""

from __future__ import annotations

import io
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from xml.sax.saxutils import escape, quoteattr

from .formula import format_number
from .layout import FormulaCell, NumberCell, TextCell, WorkbookPlan, column_index
from .model import GENERAL, NumberFormat

NS_MAIN = "http://schemas.openxmlformats.org/spreadsheetml/2006/main"
NS_REL = "http://schemas.openxmlformats.org/officeDocument/2006/relationships"
NS_PKG_REL = "http://schemas.openxmlformats.org/package/2006/relationships"
NS_CT = "http://schemas.openxmlformats.org/package/2006/content-types"
REL_DOC = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument"
REL_SHEET = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet"
REL_STYLES = "http://schemas.openxmlformats.org/officeDocument/2006/relationships/styles"
CT_BASE = "application/vnd.openxmlformats-officedocument.spreadsheetml"

XML_DECL = '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n'
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
FIRST_CUSTOM_NUMFMT = 164


class EmitError(ValueError):
    pass


def format_code(fmt: NumberFormat, currency_symbol: str = "$") -> str | None:
    """Number format code, or None for the built-in General format."""
    if fmt.kind == "general":
        return None
    if fmt.kind == "integer":
        return "#,##0"
    frac = "." + "0" * fmt.decimals if fmt.decimals else ""
    if fmt.kind == "percent":
        return f"0{frac}%"
    symbol = currency_symbol.replace('"', '""')
    return f'#,##0{frac}\\ "{symbol}"'


@dataclass
class StylePalette:
    currency_symbol: str = "$"
    formats: dict[NumberFormat, int] = field(default_factory=dict)  # -> numFmtId
    xfs: dict[tuple[bool, bool, NumberFormat], int] = field(default_factory=dict)

    def __post_init__(self):
        self.add(False, False, GENERAL)

    def numfmt_id(self, fmt: NumberFormat) -> int:
        if fmt == GENERAL:
            return 0
        if fmt not in self.formats:
            self.formats[fmt] = FIRST_CUSTOM_NUMFMT + len(self.formats)
        return self.formats[fmt]

    def add(self, bold: bool, top_border: bool, fmt: NumberFormat) -> int:
        key = (bold, top_border, fmt)
        if key not in self.xfs:
            self.numfmt_id(fmt)
            self.xfs[key] = len(self.xfs)
        return self.xfs[key]

    @classmethod
    def for_plan(cls, plan: WorkbookPlan, currency_symbol: str = "$") -> "StylePalette":
        palette = cls(currency_symbol)
        for sheet in plan.sheets:
            for _, cells in sheet.rows():
                for _, cell in cells:
                    s = cell.style
                    palette.add(s.bold, s.top_border, s.format)
        return palette

    def to_xml(self) -> str:
        out = [XML_DECL, f'<styleSheet xmlns="{NS_MAIN}">']
        if self.formats:
            out.append(f'<numFmts count="{len(self.formats)}">')
            for fmt, fid in self.formats.items():
                out.append(f"<numFmt numFmtId=\"{fid}\" formatCode={quoteattr(format_code(fmt, self.currency_symbol))}/>")
            out.append("</numFmts>")
        out.append(
            '<fonts count="2">'
            '<font><sz val="11"/><name val="Calibri"/><family val="2"/></font>'
            '<font><b/><sz val="11"/><name val="Calibri"/><family val="2"/></font>'
            "</fonts>"
            '<fills count="2"><fill><patternFill patternType="none"/></fill>'
            '<fill><patternFill patternType="gray125"/></fill></fills>'
            '<borders count="2">'
            "<border><left/><right/><top/><bottom/><diagonal/></border>"
            '<border><left/><right/><top style="thin"><color auto="1"/></top><bottom/><diagonal/></border>'
            "</borders>"
            '<cellStyleXfs count="1"><xf numFmtId="0" fontId="0" fillId="0" borderId="0"/></cellStyleXfs>'
        )
        out.append(f'<cellXfs count="{len(self.xfs)}">')
        for bold, border, fmt in self.xfs:
            attrs = f'numFmtId="{self.numfmt_id(fmt)}" fontId="{int(bold)}" fillId="0" borderId="{int(border)}" xfId="0"'
            if bold:
                attrs += ' applyFont="1"'
            if border:
                attrs += ' applyBorder="1"'
            if fmt != GENERAL:
                attrs += ' applyNumberFormat="1"'
            out.append(f"<xf {attrs}/>")
        out.append("</cellXfs>")
        out.append('<cellStyles count="1"><cellStyle name="Normal" xfId="0" builtinId="0"/></cellStyles>')
        out.append("</styleSheet>")
        return "".join(out)


def style_index_for(bold: bool, top_border: bool, fmt: NumberFormat, palette: StylePalette) -> int:
    try:
        return palette.xfs[(bold, top_border, fmt)]
    except KeyError:
        raise EmitError(f"style {(bold, top_border, fmt)} is not in the palette") from None


def _number_text(value: float) -> str:
    return format_number(value)


def _cached_xml(value) -> tuple[str, str]:
    """(type attribute, <v> element) for a cached formula result."""
    if value is None:
        return "", ""
    if isinstance(value, bool):
        return ' t="b"', f"<v>{int(value)}</v>"
    if isinstance(value, float):
        return "", f"<v>{_number_text(value)}</v>"
    display = getattr(value, "display", None)
    if display:
        return ' t="e"', f"<v>{escape(display)}</v>"
    raise EmitError(f"cannot store cached value {value!r}")


def sheet_xml(sheet, palette: StylePalette) -> str:
    out = [XML_DECL, f'<worksheet xmlns="{NS_MAIN}" xmlns:r="{NS_REL}">']
    if sheet.column_widths:
        out.append("<cols>")
        for col, width in sorted(sheet.column_widths.items(), key=lambda kv: column_index(kv[0])):
            i = column_index(col)
            out.append(f'<col min="{i}" max="{i}" width="{width:g}" customWidth="1"/>')
        out.append("</cols>")
    out.append("<sheetData>")
    for row_no, cells in sheet.rows():
        out.append(f'<row r="{row_no}">')
        for ref, cell in cells:
            s = cell.style
            idx = style_index_for(s.bold, s.top_border, s.format, palette)
            sattr = f' s="{idx}"' if idx else ""
            if isinstance(cell, TextCell):
                out.append(f'<c r="{ref}"{sattr} t="inlineStr"><is><t xml:space="preserve">{escape(cell.text)}</t></is></c>')
            elif isinstance(cell, NumberCell):
                out.append(f'<c r="{ref}"{sattr}><v>{_number_text(cell.value)}</v></c>')
            elif isinstance(cell, FormulaCell):
                tattr, v = _cached_xml(cell.cached)
                out.append(f'<c r="{ref}"{sattr}{tattr}><f>{escape(cell.text[1:])}</f>{v}</c>')
            else:
                raise EmitError(f"unknown cell {cell!r}")
        out.append("</row>")
    out.append("</sheetData>")
    out.append('<pageMargins left="0.7" right="0.7" top="0.75" bottom="0.75" header="0.3" footer="0.3"/>')
    out.append("</worksheet>")
    return "".join(out)


def workbook_parts(plan: WorkbookPlan, currency_symbol: str = "$") -> list[tuple[str, bytes]]:
    """Every package part, in archive order."""
    plan.check()
    palette = StylePalette.for_plan(plan, currency_symbol)
    n = len(plan.sheets)

    content_types = [XML_DECL, f'<Types xmlns="{NS_CT}">',
                     '<Default Extension="rels" ContentType="application/vnd.openxmlformats-package.relationships+xml"/>',
                     '<Default Extension="xml" ContentType="application/xml"/>',
                     f'<Override PartName="/xl/workbook.xml" ContentType="{CT_BASE}.sheet.main+xml"/>']
    for i in range(1, n + 1):
        content_types.append(f'<Override PartName="/xl/worksheets/sheet{i}.xml" ContentType="{CT_BASE}.worksheet+xml"/>')
    content_types.append(f'<Override PartName="/xl/styles.xml" ContentType="{CT_BASE}.styles+xml"/>')
    content_types.append("</Types>")

    root_rels = (f'{XML_DECL}<Relationships xmlns="{NS_PKG_REL}">'
                 f'<Relationship Id="rId1" Type="{REL_DOC}" Target="xl/workbook.xml"/></Relationships>')

    wb = [XML_DECL, f'<workbook xmlns="{NS_MAIN}" xmlns:r="{NS_REL}">', "<sheets>"]
    for i, sheet in enumerate(plan.sheets, 1):
        wb.append(f'<sheet name={quoteattr(sheet.name)} sheetId="{i}" r:id="rId{i}"/>')
    wb.append("</sheets>")
    if plan.defined_names:
        wb.append("<definedNames>")
        for dn in sorted(plan.defined_names, key=lambda d: d.name.lower()):
            wb.append(f"<definedName name={quoteattr(dn.name)}>{escape(dn.target.absolute)}</definedName>")
        wb.append("</definedNames>")
    wb.append('<calcPr fullCalcOnLoad="1"/>')
    wb.append("</workbook>")

    wb_rels = [XML_DECL, f'<Relationships xmlns="{NS_PKG_REL}">']
    for i in range(1, n + 1):
        wb_rels.append(f'<Relationship Id="rId{i}" Type="{REL_SHEET}" Target="worksheets/sheet{i}.xml"/>')
    wb_rels.append(f'<Relationship Id="rId{n + 1}" Type="{REL_STYLES}" Target="styles.xml"/>')
    wb_rels.append("</Relationships>")

    parts = [
        ("[Content_Types].xml", "".join(content_types)),
        ("_rels/.rels", root_rels),
        ("xl/workbook.xml", "".join(wb)),
        ("xl/_rels/workbook.xml.rels", "".join(wb_rels)),
        ("xl/styles.xml", palette.to_xml()),
    ]
    for i, sheet in enumerate(plan.sheets, 1):
        parts.append((f"xl/worksheets/sheet{i}.xml", sheet_xml(sheet, palette)))
    return [(path, text.encode("utf-8")) for path, text in parts]


def package_bytes(parts: list[tuple[str, bytes]]) -> bytes:
    if not parts:
        raise EmitError("empty package")
    paths = [p for p, _ in parts]
    if len(set(paths)) != len(paths):
        raise EmitError("duplicate part paths")
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for path, data in parts:
            info = zipfile.ZipInfo(path, date_time=ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.create_system = 0
            info.external_attr = 0o644 << 16
            zf.writestr(info, data, compresslevel=6)
    return buf.getvalue()


def package_zip(parts: list[tuple[str, bytes]], destination: str | os.PathLike) -> None:
    data = package_bytes(parts)
    destination = os.fspath(destination)
    directory = os.path.dirname(os.path.abspath(destination))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ssmi-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, destination)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_xlsx(plan: WorkbookPlan, destination: str | os.PathLike, currency_symbol: str = "$") -> None:
    package_zip(workbook_parts(plan, currency_symbol), destination)


__all__ = [
    "EmitError",
    "StylePalette",
    "format_code",
    "style_index_for",
    "sheet_xml",
    "workbook_parts",
    "package_bytes",
    "package_zip",
    "emit_xlsx",
]
