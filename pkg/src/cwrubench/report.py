"""Report writers: JSON, CSV tables, boxplot statistics, SVG ROC plots and console tables."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import DETECTOR_NAMES, AveragedRoc, RunReport

TYPE_COLUMNS = ("ball", "inner", "outer")


def _pct(ms: tuple[float, float]) -> str:
    return f"{100 * ms[0]:.1f} ± {100 * ms[1]:.1f}"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def report_json(payload: dict, timestamp: str | None = None) -> str:
    """Deterministic JSON; only the ``generated_at`` field varies between reruns."""
    doc = dict(_clean(payload))
    doc["generated_at"] = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n"


def table_row(label: Sequence[str], rep: RunReport) -> list[str]:
    return list(label) + [_pct(rep.cells[n]) for n in DETECTOR_NAMES] + [_pct(rep.macro)]


def results_table(rows: Sequence[tuple[Sequence[str], RunReport]], label_header: Sequence[str]) -> list[list[str]]:
    """Rows laid out as fan ball/inner/outer, drive ball/inner/outer, macro average."""
    header = list(label_header) + [n.replace("-", " ") for n in DETECTOR_NAMES] + ["macro average"]
    return [header] + [table_row(lbl, rep) for lbl, rep in rows]


def location_average_row(rep: RunReport) -> list[str]:
    return [_pct(rep.fe_de_average[t]) for t in TYPE_COLUMNS]


def to_csv(rows: list[list[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def format_console(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def summary_text(rep: RunReport, label: str = "") -> str:
    rows = results_table([((label or "run",), rep)], ("model",))
    fe_de = "  ".join(f"{t} {v}" for t, v in zip(TYPE_COLUMNS, location_average_row(rep)))
    out = [format_console(rows), f"FE/DE average: {fe_de}"]
    det = "  ".join(f"{k} {_pct(v)}" for k, v in rep.detection.items())
    out.append(f"fault detection: {det}")
    if rep.failed_seeds:
        out.append(f"failed seeds: {sorted(rep.failed_seeds)}")
    if rep.single_realization:
        out.append("note: single realization, std reported as 0")
    return "\n".join(out)


def boxplot_csv(rep: RunReport) -> str:
    rows = [["detector", "condition", "n", "min", "q1", "median", "q3", "max"]]
    for det, conds in rep.logit_boxplots.items():
        for cond, s in conds.items():
            if s.get("n"):
                rows.append([det, cond, s["n"]] + [f"{s[k]:.6g}" for k in ("min", "q1", "median", "q3", "max")])
            else:
                rows.append([det, cond, 0, "", "", "", "", ""])
    return to_csv(rows)


def per_seed_csv(rep: RunReport) -> str:
    rows = [["seed"] + list(DETECTOR_NAMES) + ["macro"]]
    for seed, vals in sorted(rep.per_realization.items()):
        rows.append([seed] + [f"{vals[n]:.6f}" for n in DETECTOR_NAMES] + [f"{vals['macro']:.6f}"])
    return to_csv(rows)


# --------------------------------------------------------------------------- SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def roc_svg(curves: dict[str, AveragedRoc], title: str = "", size: int = 360) -> str:
    """Mean ROC curves with a ±1 std band in FPR, drawn on the unit square."""
    m = 40
    s = size - 2 * m

    def pt(fpr, tpr):
        return f"{m + s * float(np.clip(fpr, 0, 1)):.2f},{m + s * (1 - float(tpr)):.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{m}" y="{m}" width="{s}" height="{s}" fill="none" stroke="black"/>',
        f'<line x1="{m}" y1="{m + s}" x2="{m + s}" y2="{m}" stroke="#999" stroke-dasharray="4 3"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">FPR</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {size / 2})">TPR</text>',
    ]
    if title:
        parts.append(f'<text x="{size / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>')
    for i, (name, c) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        step = max(1, c.tpr.size // 200)
        idx = np.r_[np.arange(0, c.tpr.size, step), c.tpr.size - 1]
        upper = [pt(c.mean_fpr[j] - c.std_fpr[j], c.tpr[j]) for j in idx]
        lower = [pt(c.mean_fpr[j] + c.std_fpr[j], c.tpr[j]) for j in idx[::-1]]
        parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        line = [pt(0, 0)] + [pt(c.mean_fpr[j], c.tpr[j]) for j in idx] + [pt(1, 1)]
        parts.append(f'<polyline points="{" ".join(line)}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{m + s - 4}" y="{m + s - 8 - 14 * i}" text-anchor="end" font-size="11" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --------------------------------------------------------------------------- files


def write_run_outputs(out_dir: str | Path, payload: dict, rep: RunReport, label: str = "",
                      svg: bool = True, timestamp: str | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(payload, timestamp))
    (out / "table.csv").write_text(to_csv(results_table([((label or "run",), rep)], ("model",))))
    (out / "per_seed.csv").write_text(per_seed_csv(rep))
    (out / "logit_boxplots.csv").write_text(boxplot_csv(rep))
    if svg:
        (out / "roc_fan.svg").write_text(roc_svg({k: v for k, v in rep.averaged_curves.items() if k.startswith("fan")}, "fan end"))
        (out / "roc_drive.svg").write_text(roc_svg({k: v for k, v in rep.averaged_curves.items() if k.startswith("drive")}, "drive end"))
        (out / "roc_types.svg").write_text(roc_svg(rep.type_curves, "location average"))
        (out / "roc_detection.svg").write_text(roc_svg(rep.detection_avg_curves, "fault detection"))
    return out
