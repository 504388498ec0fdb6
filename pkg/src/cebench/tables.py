"""Publication-shaped CSV tables and their exact round trip.

Cells are written with ``repr`` so floats survive a round trip bit for bit.
Standard errors are wrapped in parentheses and q-values in brackets; a
missing value is an empty cell.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .wls import FitResult

KINDS = ("text", "value", "se", "q", "int")


class LayoutError(ValueError):
    """Result rows do not match the table layout."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "value"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown column kind {self.kind}")


@dataclass(frozen=True)
class Layout:
    name: str
    columns: tuple[Column, ...]
    command: str
    description: str = ""

    @property
    def header(self) -> list[str]:
        return [c.name for c in self.columns]


def _fmt(value, kind: str) -> str:
    if value is None:
        return ""
    if kind == "text":
        return str(value)
    if kind == "int":
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return ""
    s = repr(v)
    if kind == "se":
        return f"({s})"
    if kind == "q":
        return f"[{s}]"
    return s


def _parse(cell: str, kind: str):
    if kind == "text":
        return cell
    if cell == "":
        return None if kind == "int" else float("nan")
    if kind == "int":
        return int(cell)
    if kind == "se":
        if not (cell.startswith("(") and cell.endswith(")")):
            raise LayoutError(f"standard error cell {cell!r} lacks parentheses")
        cell = cell[1:-1]
    elif kind == "q":
        if not (cell.startswith("[") and cell.endswith("]")):
            raise LayoutError(f"q-value cell {cell!r} lacks brackets")
        cell = cell[1:-1]
    return float(cell)


def render_table(rows: Iterable[Mapping[str, object]], layout: Layout) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(layout.header)
    allowed = set(layout.header)
    for row in rows:
        extra = set(row) - allowed
        if extra:
            raise LayoutError(f"{layout.name}: unexpected fields {sorted(extra)}")
        writer.writerow([_fmt(row.get(c.name), c.kind) for c in layout.columns])
    return buf.getvalue()


def emit_table(rows: Iterable[Mapping[str, object]], layout: Layout, path: str | Path) -> Path:
    """Write ``rows`` under ``layout``; an empty row set gives a header-only file."""
    path = Path(path)
    text = render_table(rows, layout)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    return path


def parse_table(path: str | Path, layout: Layout) -> list[dict]:
    return parse_text(Path(path).read_text(encoding="utf-8"), layout)


def parse_text(text: str, layout: Layout) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != layout.header:
        raise LayoutError(f"{layout.name}: header {header} does not match layout")
    kinds = [c.kind for c in layout.columns]
    return [{h: _parse(cell, k) for h, cell, k in zip(header, rec, kinds)} for rec in reader]


# ---------------------------------------------------------------------------
# layouts


def regression_columns(terms: Sequence[str], tests: Sequence[str] = (), extra: Sequence[Column] = ()) -> tuple[Column, ...]:
    cols = [Column("outcome", "text"), Column("family", "text")]
    cols += list(extra)
    for t in terms:
        cols += [Column(t), Column(f"{t}_se", "se"), Column(f"{t}_q", "q")]
    cols += [Column("control_mean"), Column("control_sd", "se"), Column("N", "int"), Column("R2")]
    cols += [Column(f"p[{t}]") for t in tests]
    return tuple(cols)


def regression_row(res: FitResult, layout: Layout, qvalues: Mapping[str, float] | None = None, **extra) -> dict:
    """One table row from a fit: coefficient, clustered SE and q for each term in the layout."""
    row: dict[str, object] = {"outcome": res.meta.get("outcome", ""), "family": res.meta.get("family", "")}
    names = set(layout.header)
    for col in layout.columns:
        if col.kind == "value" and f"{col.name}_se" in names:
            if col.name in res.params.index:
                row[col.name] = float(res.params[col.name])
                row[f"{col.name}_se"] = float(res.bse[col.name])
            if qvalues and col.name in qvalues:
                row[f"{col.name}_q"] = float(qvalues[col.name])
        elif col.name.startswith("p[") and col.name[2:-1] in res.tests:
            row[col.name] = float(res.tests[col.name[2:-1]][1])
    row.update(control_mean=res.meta.get("control_mean"), control_sd=res.meta.get("control_sd"),
               N=res.nobs, R2=res.r2)
    row.update(extra)
    return row


_POOLED = ("T_GK", "T_GDMain", "T_GDLarge")
_GRANULAR = ("T_GK", "T_GDLower", "T_GDMiddle", "T_GDUpper", "T_GDLarge")

LAYOUTS: dict[str, Layout] = {}


def _add(layout: Layout) -> None:
    if layout.name in LAYOUTS:
        raise ValueError(f"duplicate layout {layout.name}")
    LAYOUTS[layout.name] = layout


_add(Layout("design_counts", (Column("arm", "text"), Column("villages", "int"), Column("eligible", "int"),
                              Column("ineligible", "int"), Column("flow", "int"), Column("lumpsum", "int"),
                              Column("choice", "int")), "validate", "arm and stratum counts"))
_add(Layout("cost_ledger", (Column("arm", "text"), Column("cost_per_beneficiary"), Column("averted_share"),
                            Column("compliance_eligible"), Column("compliance_population"),
                            Column("cost_per_eligible"), Column("cost_per_village_household"), Column("tau")),
            "bcr", "ex-post costs per eligible and per village household"))
_add(Layout("itt", regression_columns(_POOLED, ("GDM=GDL", "GK=GDL")), "itt", "ANCOVA ITT, pooled GD-Main"))
_add(Layout("itt_granular", regression_columns(_GRANULAR), "itt", "ANCOVA ITT, separate GD cells"))
_add(Layout("itt_ipw", regression_columns(_POOLED, ("GDM=GDL", "GK=GDL")), "itt", "ITT with attrition weights"))
_add(Layout("attrition", regression_columns(_POOLED, extra=(Column("level", "text"),)), "attrition",
            "attrition on arm dummies"))
_add(Layout("cost_equivalent", regression_columns(("T_any", "T_GK", "tau100", "tau100_sq", "tau100_cu"),
                                                  ("proportional_scaling",), (Column("variant", "text"),)),
            "ce", "Gikuriro against cost-equivalent cash"))
_add(Layout("bcr", (Column("outcome", "text"), Column("family", "text"))
            + tuple(c for t in _POOLED for c in (Column(f"bcr[{t}]"), Column(f"bcr[{t}]_se", "se")))
            + (Column("p[a]"), Column("p[b]"), Column("p[c]")), "bcr", "benefit-cost ratios per $100"))
_add(Layout("tce", regression_columns(_POOLED, ("GDM=GDL", "GK=GDL")), "tce", "total causal effects"))
_add(Layout("tce_benchmarked", regression_columns(("T_any", "T_GK", "tau100"), ("proportional_scaling",)),
            "tce", "benchmarked TCE per village household"))
_add(Layout("spillover", regression_columns(("T_GDMain", "T_GDLarge"), ("GDM=GDL",)), "spillover",
            "effects on never-treated ineligibles"))
_add(Layout("lumpsum_flow", regression_columns(("D_main", "D_main_LS", "D_large", "D_large_LS"),
                                               ("main_lumpsum_total", "large_lumpsum_total")),
            "modality", "lump sum against flow"))
_add(Layout("choice", regression_columns(("chose_LS", "assigned_LS", "got_wanted")), "choice",
            "choice experiment"))
_add(Layout("heterogeneity", regression_columns(("T_GK_x_mod", "T_GDMain_x_mod", "T_GDLarge_x_mod") + _POOLED,
                                                ("GDMain_x=GK_x", "GDLarge_x=GK_x"),
                                                (Column("moderator", "text"),)),
            "hetero", "arm by moderator interactions"))
_add(Layout("cate_correlation", (Column("outcome", "text"), Column("with", "text"), Column("correlation")),
            "forest", "cross-outcome CATE correlations"))
_add(Layout("targeting", (Column("policy", "text"), Column("gain"), Column("share_cash")), "forest",
            "welfare gains from targeting"))
_add(Layout("cate_predictions", (Column("outcome", "text"), Column("row_id", "text"), Column("cate")),
            "forest", "per-row CATE predictions"))
_add(Layout("monte_carlo", (Column("parameter", "text"), Column("kind", "text"), Column("truth"), Column("mean"),
                            Column("bias"), Column("sd"), Column("mc_se"), Column("mean_se"), Column("coverage"),
                            Column("rejection_rate"), Column("n", "int")), "simulate", "Monte Carlo summary"))
_add(Layout("power", (Column("variant", "text"), Column("analytic_var"), Column("mc_var"),
                      Column("analytic_ratio"), Column("mc_ratio"), Column("reference_ratio")),
            "power", "interpolation variance by variant"))


def coverage_manifest() -> dict[str, str]:
    """Layout name to its single emitting command."""
    return {name: lay.command for name, lay in LAYOUTS.items()}
