"""Collect finished experiment cells into comparison tables and artifact folders.

Each cell directory holds ``metrics.json`` (plus curves, beam profiles and
images). The report lays settings out as rows and groups PSNR/SSIM/L1
columns per cell, one table per phantom family, and checks that the learned
receive pipeline beats the fixed-transmit DAS baseline in every cell.
"""
from __future__ import annotations

import csv
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from echobeam.training import FIXED_DAS, LEARNED_RX, SETTINGS

METRIC_COLUMNS = (("psnr", "PSNR"), ("ssim", "SSIM"), ("l1", "L1"))
CONTRAST_COLUMNS = (("cr", "Cr dB"), ("cnr", "CNR"))


@dataclass
class Report:
    cells: dict = field(default_factory=dict)        # name -> metrics.json document
    missing: dict = field(default_factory=dict)      # name -> reason
    violations: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)       # table name -> rows (header first)


def find_cells(run_dirs) -> list:
    """Cell directories under ``run_dirs``: a directory is a cell if it has metrics.json
    or error.txt; otherwise its immediate subdirectories are searched."""
    out = []
    for d in run_dirs:
        d = Path(d)
        if (d / "metrics.json").exists() or (d / "error.txt").exists():
            out.append(d)
        elif d.is_dir():
            out += [s for s in sorted(d.iterdir()) if s.is_dir()]
    return out


def _fmt(v, digits=4):
    return "" if v is None else f"{v:.{digits}f}"


def _means(doc: dict, family: str) -> dict:
    return {r["setting"]: r["mean"] for r in doc["reports"] if r.get("family") == family}


def build_table(cells: dict, family: str, columns=METRIC_COLUMNS) -> list:
    """Rows of strings: header, then one row per setting present in any cell."""
    header = ["setting"] + [f"{name} {label}" for name in cells for _, label in columns]
    per_cell = {name: _means(doc, family) for name, doc in cells.items()}
    rows = [header]
    for setting in SETTINGS:
        if not any(setting in m for m in per_cell.values()):
            continue
        row = [setting]
        for name in cells:
            mean = per_cell[name].get(setting, {})
            row += [_fmt(mean.get(key)) for key, _ in columns]
        rows.append(row)
    return rows


def aligned(rows: list) -> str:
    if not rows:
        return ""
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if k == 0 else c.rjust(w)
                       for k, (c, w) in enumerate(zip(r, widths))).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def check_ordering(cells: dict) -> list:
    """Cells where Learned Rx does not beat Fixed Tx DAS in mean PSNR."""
    bad = []
    for name, doc in cells.items():
        families = sorted({r.get("family") for r in doc["reports"]})
        for fam in families:
            m = _means(doc, fam)
            if LEARNED_RX in m and FIXED_DAS in m:
                rx, das = m[LEARNED_RX]["psnr"], m[FIXED_DAS]["psnr"]
                if not rx > das:
                    bad.append(f"{name} [{fam}]: Learned Rx PSNR {rx:.3f} <= "
                               f"Fixed Tx DAS PSNR {das:.3f}")
    return bad


def render_report(run_dirs, out_dir) -> Report:
    """Write tables, curves, beam profiles and images for every cell found."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = Report()
    for d in find_cells(run_dirs):
        if (d / "error.txt").exists():
            rep.missing[d.name] = "failed: " + (d / "error.txt").read_text().strip()
            continue
        try:
            rep.cells[d.name] = json.loads((d / "metrics.json").read_text())
        except (OSError, ValueError) as exc:
            rep.missing[d.name] = f"unreadable metrics.json ({exc})"
            continue
        for src, dst in (("curves.csv", f"curves_{d.name}.csv"),
                         ("beam_profiles.csv", f"beam_profiles_{d.name}.csv")):
            if (d / src).exists():
                shutil.copyfile(d / src, out / dst)
        if (d / "images").is_dir():
            shutil.copytree(d / "images", out / "images" / d.name, dirs_exist_ok=True)

    families = sorted({r.get("family") for doc in rep.cells.values() for r in doc["reports"]}
                      ) or ["cardiac"]
    for fam in families:
        rep.tables[f"metrics_{fam}"] = build_table(rep.cells, fam)
    if "cyst" in families:
        rep.tables["contrast_cyst"] = build_table(rep.cells, "cyst", CONTRAST_COLUMNS)
    rep.violations = check_ordering(rep.cells)

    text = []
    for name, rows in rep.tables.items():
        _write_csv(out / f"{name}.csv", rows)
        (out / f"{name}.txt").write_text(aligned(rows))
        text += [f"== {name} ==", aligned(rows)]
    if rep.violations:
        text += ["!! ORDERING VIOLATIONS (Learned Rx should beat Fixed Tx DAS) !!"]
        text += [f"!! {v}" for v in rep.violations] + [""]
    if rep.missing:
        text += ["missing cells:"] + [f"  {k}: {v}" for k, v in sorted(rep.missing.items())]
    (out / "report.txt").write_text("\n".join(text) + "\n")
    (out / "report.json").write_text(json.dumps(
        {"cells": sorted(rep.cells), "missing": rep.missing, "violations": rep.violations},
        indent=2, sort_keys=True) + "\n")
    return rep
