"""CSV and SVG output. Plots are derived from the CSV rows only."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields, is_dataclass
from pathlib import Path
from xml.sax.saxutils import escape


@dataclass
class SweepRow:
    """One (seed, shift level) measurement. Fields that do not apply to a
    sweep are left as ``None`` and written as empty cells."""

    seed: int
    shift_kind: str
    shift_level: float
    ood_score: float
    dist_to_ocs: float
    mean_loss: float
    accuracy: float | None = None
    mean_reward: float | None = None
    abstain_rate: float | None = None
    policy: str = ""
    reward_stderr: float | None = None
    mean_sigma: float | None = None


@dataclass
class SummaryRow:
    seed: int
    statistic: str
    value: float


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def row_dicts(rows) -> tuple[list[str], list[dict]]:
    """Column names and cell strings for dataclass or dict rows.

    All rows must share a type; columns follow the dataclass field order.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    first = rows[0]
    if is_dataclass(first):
        kind = type(first)
        if any(type(r) is not kind for r in rows):
            raise ValueError("rows must share a single type")
        names = [f.name for f in fields(first)]
        return names, [dict(zip(names, map(_cell, astuple(r)))) for r in rows]
    names = list(first)
    if any(list(r) != names for r in rows):
        raise ValueError("dict rows must share their keys in the same order")
    return names, [{k: _cell(r[k]) for k in names} for r in rows]


def write_csv(rows, path) -> Path:
    names, cells = row_dicts(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        writer.writerows(cells)
    return path


def _parse(text: str, kind):
    if text == "":
        return None
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def read_rows(path, row_type=None) -> list:
    """Parse a CSV written by ``write_csv``. With ``row_type`` the rows are
    rebuilt as that dataclass, otherwise plain dicts of strings are returned."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        records = list(csv.DictReader(fh))
    if row_type is None:
        return records
    hints = {f.name: f.type for f in fields(row_type)}
    out = []
    for rec in records:
        values = {}
        for name, text in rec.items():
            hint = str(hints[name])
            kind = int if hint.startswith("int") else float if hint.startswith("float") else str
            values[name] = _parse(text, kind) if kind is not str else text
        out.append(row_type(**values))
    return out


# --- SVG ---------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def svg_chart(series: dict, x_label: str, y_label: str, title: str = "",
              width: int = 480, height: int = 320) -> str:
    """Polyline chart with one ``<polyline>`` per series.

    ``series`` maps a label to a list of (x, y) points; non-finite points are dropped.
    """
    if not series:
        raise ValueError("no series to plot")
    clean = {}
    for label, pts in series.items():
        kept = sorted((float(x), float(y)) for x, y in pts if math.isfinite(x) and math.isfinite(y))
        clean[label] = kept
    xs = [p[0] for pts in clean.values() for p in pts] or [0.0, 1.0]
    ys = [p[1] for pts in clean.values() for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, right, top, bottom = 60, 100, 30, 45
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(x_label)}</text>',
        f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(y_label)}</text>',
        f'<text x="{left}" y="{top - 10}" font-size="12">{escape(title)}</text>',
        f'<text x="{left - 5}" y="{top + ph:.1f}" text-anchor="end" font-size="10">{y0:.3g}</text>',
        f'<text x="{left - 5}" y="{top + 10}" text-anchor="end" font-size="10">{y1:.3g}</text>',
        f'<text x="{left}" y="{top + ph + 15:.1f}" text-anchor="middle" font-size="10">{x0:.3g}</text>',
        f'<text x="{left + pw}" y="{top + ph + 15:.1f}" text-anchor="middle" font-size="10">{x1:.3g}</text>',
    ]
    for i, (label, pts) in enumerate(clean.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}">'
                     f"<title>{escape(str(label))}</title></polyline>")
        ly = top + 12 + 14 * i
        parts.append(f'<text x="{left + pw + 8}" y="{ly}" font-size="10" fill="{color}">{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _series_by_seed(records: list[dict], x: str, y: str) -> dict:
    out: dict = {}
    for rec in records:
        if rec.get(x, "") == "" or rec.get(y, "") == "":
            continue
        out.setdefault(f"seed {rec['seed']}", []).append((float(rec[x]), float(rec[y])))
    return dict(sorted(out.items(), key=lambda kv: int(kv[0].split()[1])))


def charts_from_csv(csv_path, out_dir, x: str = "shift_level",
                    metrics=("dist_to_ocs", "ood_score")) -> list[Path]:
    """One SVG per metric (and per policy, when the rows carry one)."""
    records = read_rows(csv_path)
    if not records:
        raise ValueError(f"{csv_path} has no rows")
    out_dir = Path(out_dir)
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec.get("policy", ""), []).append(rec)
    written = []
    for policy in sorted(groups):
        for metric in metrics:
            if metric not in groups[policy][0]:
                continue
            series = _series_by_seed(groups[policy], x, metric)
            if not series:
                continue
            stem = f"{metric}_{policy}" if policy else metric
            path = out_dir / f"{stem}.svg"
            path.write_text(svg_chart(series, x, metric, title=stem), encoding="utf-8")
            written.append(path)
    return written


def emit_report(rows, out_dir, summary=None, charts: bool = True,
                metrics=("dist_to_ocs", "ood_score"), x: str = "shift_level") -> list[Path]:
    """Write ``rows.csv`` (and ``summary.csv``) under ``out_dir``, plus SVG charts."""
    rows = list(rows)
    if not rows:
        raise ValueError("emit_report needs at least one row")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [write_csv(rows, out_dir / "rows.csv")]
    if summary:
        written.append(write_csv(summary, out_dir / "summary.csv"))
    if charts:
        written.extend(charts_from_csv(out_dir / "rows.csv", out_dir, x=x, metrics=metrics))
    return written
