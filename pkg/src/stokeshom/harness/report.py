"""Rate fits and report emission (CSV, JSON, SVG)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy import stats

from .study import StudyReport, StudyRow

__all__ = ["RateFit", "fit_rate", "csv_columns", "row_values", "to_csv", "to_svg", "emit", "bound_ratios"]

TIMING_COLUMNS = ("t_forces_s", "t_brinkman_s", "t_metrics_s")


@dataclass
class RateFit:
    slope: float
    intercept: float
    stderr: float
    n_rows: int


def _column_value(row, column: str) -> float:
    if isinstance(row, dict):
        return float(row[column])
    return row_values(row)[column]


def fit_rate(rows, column: str, exclude_smallest: bool | None = None) -> RateFit:
    """Least squares of log(value) on log(N).

    ``exclude_smallest=None`` drops the smallest N when at least five rows are
    given (pre-asymptotic); the fit itself needs at least four rows.
    """
    rows = sorted(rows, key=lambda r: r["N"] if isinstance(r, dict) else r.N)
    if exclude_smallest is None:
        exclude_smallest = len(rows) >= 5
    if exclude_smallest:
        rows = rows[1:]
    if len(rows) < 4:
        raise ValueError("a rate fit needs at least four rows")
    n = np.array([r["N"] if isinstance(r, dict) else r.N for r in rows], dtype=float)
    v = np.array([_column_value(r, column) for r in rows], dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError(f"column {column!r} has nonpositive or missing values")
    res = stats.linregress(np.log(n), np.log(v))
    return RateFit(float(res.slope), float(res.intercept), float(res.stderr), len(rows))


def csv_columns(p_list, alpha_list=None) -> list:
    return (
        ["N"]
        + [f"err_p{p:g}" for p in p_list]
        + ["bl_rho", "bl_j", "n_inv_cbrt", "bound_thm1", "bound_thm2", "energy", "bc_residual", "wall_residual"]
        + list(TIMING_COLUMNS)
    )


def row_values(row: StudyRow, alpha=None) -> dict:
    a = next(iter(row.bl_rho)) if alpha is None else f"{alpha:g}"
    out = {"N": row.N}
    for p, v in row.errors.items():
        out[f"err_p{p}"] = v
    out.update(
        bl_rho=row.bl_rho[a],
        bl_j=row.bl_j[a],
        n_inv_cbrt=row.n_inv_cbrt,
        bound_thm1=row.bound_thm1,
        bound_thm2=row.bound_thm2,
        energy=row.energy,
        bc_residual=row.bc_residual,
        wall_residual=row.wall_residual,
        t_forces_s=row.t_forces_s,
        t_brinkman_s=row.t_brinkman_s,
        t_metrics_s=row.t_metrics_s,
    )
    return out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def to_csv(report: StudyReport, timings: bool = True) -> str:
    cols = csv_columns(report.config.p_list)
    if not timings:
        cols = [c for c in cols if c not in TIMING_COLUMNS]
    lines = [",".join(cols)]
    for row in report.rows:
        vals = row_values(row)
        lines.append(",".join(_fmt(vals[c]) for c in cols))
    return "\n".join(lines) + "\n"


def bound_ratios(report: StudyReport, p=None, which: str = "bound_thm1") -> np.ndarray:
    p = report.config.p_list[0] if p is None else p
    rows = report.good_rows()
    return np.array([r.errors[f"{p:g}"] / getattr(r, which) for r in rows])


def to_svg(report: StudyReport, columns=None, width: int = 640, height: int = 420) -> str:
    """Log-log plot of the error and bound columns against N, one polyline per column."""
    if columns is None:
        columns = [f"err_p{p:g}" for p in report.config.p_list] + ["bound_thm1", "bound_thm2", "n_inv_cbrt"]
    rows = report.good_rows()
    series = {}
    for c in columns:
        pts = [(r.N, row_values(r)[c]) for r in rows]
        pts = [(n, v) for n, v in pts if v > 0 and math.isfinite(v)]
        if pts:
            series[c] = pts
    m = 50
    allx = [math.log10(n) for s in series.values() for n, _ in s] or [0.0, 1.0]
    ally = [math.log10(v) for s in series.values() for _, v in s] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(n):
        return m + (math.log10(n) - x0) / (x1 - x0) * (width - 2 * m)

    def sy(v):
        return height - m - (math.log10(v) - y0) / (y1 - y0) * (height - 2 * m)

    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">N (log scale)</text>',
    ]
    for i, (c, pts) in enumerate(series.items()):
        col = colors[i % len(colors)]
        coords = " ".join(f"{sx(n):.2f},{sy(v):.2f}" for n, v in pts)
        out.append(f'<polyline data-column="{escape(c)}" fill="none" stroke="{col}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{width - m + 4}" y="{m + 14 * i + 10}" font-size="10" fill="{col}">{escape(c)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit(report: StudyReport, formats=("csv", "json"), out_dir=".", stem: str = "study") -> list:
    """Write the report in the requested formats; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out / f"{stem}.{fmt}"
        if fmt == "csv":
            path.write_text(to_csv(report))
        elif fmt == "json":
            path.write_text(report.to_json())
        elif fmt == "svg":
            path.write_text(to_svg(report))
        else:
            raise ValueError(f"unknown format {fmt!r}")
        written.append(path)
    return written
