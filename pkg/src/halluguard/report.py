"""Corpus-level report: THS tables, reductions, Gaussian fits, optional SVG charts.

Everything here is a pure function of the run records, so rerunning the
report on the same ``runs.jsonl`` reproduces the same bytes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .agents import PipelineRunRecord
from .corpus import export_csv, fmt_number
from .scoring import (
    AnovaResult,
    DegenerateInput,
    EmptyInput,
    GaussianFit,
    GroupStats,
    ZERO_TOL,
    anova_oneway,
    delta_ths,
    gaussian_fit,
    group_stats,
    percent_reduction,
)

LEVELS = (1, 2, 3)
LEVEL_NAMES = {1: "FrontEndAgent", 2: "SecondLevelReviewer", 3: "ThirdLevelReviewer"}
COLORS = {1: "#d62728", 2: "#ff7f0e", 3: "#2ca02c"}


@dataclass(frozen=True)
class MeanReduction:
    percent: float | None
    n_used: int
    n_zero_baseline: int


@dataclass(frozen=True)
class Report:
    records: tuple[PipelineRunRecord, ...]
    n_failed: int
    stats: dict[int, GroupStats]
    reduction_totals: dict[int, float | None]  # keyed by target level, baseline is level 1
    reduction_means: dict[int, MeanReduction]
    gauss: dict[int, GaussianFit | None]
    anova: AnovaResult | None

    def ths_values(self, level: int) -> list[float]:
        return [r.ths.as_tuple()[level - 1] for r in self.records]


def _mean_reduction(records: Sequence[PipelineRunRecord], to_level: int) -> MeanReduction:
    pcts = []
    zero = 0
    for r in records:
        t = r.ths.as_tuple()
        p = percent_reduction(t[0], t[to_level - 1])
        if p is None:
            zero += 1
        else:
            pcts.append(p)
    return MeanReduction(math.fsum(pcts) / len(pcts) if pcts else None, len(pcts), zero)


def build_report(records: Sequence[PipelineRunRecord], population_sd: bool = False) -> Report:
    if not records:
        raise EmptyInput("no run records")
    ok = tuple(sorted((r for r in records if r.ths is not None), key=lambda r: r.prompt_id))
    if not ok:
        raise EmptyInput("no successful run records")
    columns = {lvl: [r.ths.as_tuple()[lvl - 1] for r in ok] for lvl in LEVELS}
    stats = {lvl: group_stats(columns[lvl], population_sd) for lvl in LEVELS}
    gauss: dict[int, GaussianFit | None] = {}
    for lvl in LEVELS:
        try:
            gauss[lvl] = gaussian_fit(columns[lvl])
        except DegenerateInput:
            gauss[lvl] = None
    try:
        anova = anova_oneway([columns[lvl] for lvl in LEVELS])
    except DegenerateInput:
        anova = None
    return Report(
        records=ok,
        n_failed=len(records) - len(ok),
        stats=stats,
        reduction_totals={lvl: percent_reduction(stats[1].total, stats[lvl].total) for lvl in (2, 3)},
        reduction_means={lvl: _mean_reduction(ok, lvl) for lvl in (2, 3)},
        gauss=gauss,
        anova=anova,
    )


# --- tables ----------------------------------------------------------------


def _csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _pct(x: float | None) -> str:
    return "undefined" if x is None else f"{x:.2f}"


def totals_csv(rep: Report) -> str:
    rows = [
        [f"THS{lvl}", LEVEL_NAMES[lvl], fmt_number(s.total), fmt_number(s.mean), fmt_number(s.sd), str(s.n)]
        for lvl, s in rep.stats.items()
    ]
    return _csv(["level", "agent", "total", "mean", "sd", "n"], rows)


def reductions_csv(rep: Report) -> str:
    rows = []
    for lvl in (2, 3):
        rows.append(["totals", "1", str(lvl), _pct(rep.reduction_totals[lvl]), str(len(rep.records)), "0"])
    for lvl in (2, 3):
        m = rep.reduction_means[lvl]
        rows.append(["mean_per_prompt", "1", str(lvl), _pct(m.percent), str(m.n_used), str(m.n_zero_baseline)])
    return _csv(["basis", "from_level", "to_level", "percent", "n_used", "n_zero_baseline"], rows)


def gauss_csv(rep: Report) -> str:
    rows = []
    for lvl in LEVELS:
        g = rep.gauss[lvl]
        if g is None:
            rows.append([f"THS{lvl}", fmt_number(rep.stats[lvl].mean), "0", "true"])
        else:
            rows.append([f"THS{lvl}", fmt_number(g.mu), fmt_number(g.sigma), "false"])
    return _csv(["level", "mu", "sigma", "degenerate"], rows)


def summary_text(rep: Report) -> str:
    def row(label: str, values: list[str]) -> str:
        return f"{label:<8}" + "".join(f"{v:>12}" for v in values)

    lines = [
        f"Total Hallucination Scores over {len(rep.records)} prompts"
        + (f" ({rep.n_failed} failed runs excluded)" if rep.n_failed else ""),
        "",
        row("", [f"THS{lvl}" for lvl in LEVELS]),
        row("Mean", [f"{rep.stats[lvl].mean:.6f}" for lvl in LEVELS]),
        row("SD", [f"{rep.stats[lvl].sd:.6f}" for lvl in LEVELS]),
        row("Total", [f"{rep.stats[lvl].total:.2f}" for lvl in LEVELS]),
        "",
        "Reduction from totals:",
        f"  1->2  {_pct(rep.reduction_totals[2])}%",
        f"  1->3  {_pct(rep.reduction_totals[3])}%",
        "Mean per-prompt reduction (prompts with THS1 = 0 excluded):",
    ]
    for lvl in (2, 3):
        m = rep.reduction_means[lvl]
        lines.append(f"  1->{lvl}  {_pct(m.percent)}%  (n={m.n_used}, excluded={m.n_zero_baseline})")
    if rep.anova is None:
        lines.append("One-way ANOVA: undefined")
    else:
        a = rep.anova
        lines.append(f"One-way ANOVA: F({a.df_between}, {a.df_within}) = {a.f_stat:.4f}")
    return "\n".join(lines) + "\n"


# --- SVG -------------------------------------------------------------------

W, H, PAD = 720, 360, 50


class _Axes:
    def __init__(self, x0: float, x1: float, y0: float, y1: float):
        if y0 == y1:
            y0, y1 = y0 - 1, y1 + 1
        if x0 == x1:
            x0, x1 = x0 - 1, x1 + 1
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1

    def x(self, v: float) -> float:
        return PAD + (v - self.x0) / (self.x1 - self.x0) * (W - 2 * PAD)

    def y(self, v: float) -> float:
        return H - PAD - (v - self.y0) / (self.y1 - self.y0) * (H - 2 * PAD)


def _svg(title: str, body: list[str], ax: _Axes) -> str:
    zero = ax.y(0.0) if ax.y0 <= 0 <= ax.y1 else H - PAD
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{zero:.2f}" x2="{W - PAD}" y2="{zero:.2f}" stroke="#444"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="#444"/>',
        f'<text x="{PAD - 6}" y="{ax.y(ax.y1):.2f}" text-anchor="end" font-family="sans-serif" font-size="10">{ax.y1:.3g}</text>',
        f'<text x="{PAD - 6}" y="{ax.y(ax.y0):.2f}" text-anchor="end" font-family="sans-serif" font-size="10">{ax.y0:.3g}</text>',
        *body,
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def _bounds(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values + [0.0]), max(values + [0.0])
    return lo, hi


def svg_ths_lines(rep: Report) -> str:
    ids = [r.prompt_id for r in rep.records]
    vals = [v for lvl in LEVELS for v in rep.ths_values(lvl)]
    ax = _Axes(min(ids), max(ids), *_bounds(vals))
    body = []
    for lvl in LEVELS:
        pts = " ".join(f"{ax.x(i):.2f},{ax.y(v):.2f}" for i, v in zip(ids, rep.ths_values(lvl)))
        body.append(f'<polyline fill="none" stroke="{COLORS[lvl]}" stroke-width="1" points="{pts}"/>')
    return _svg("THS per prompt", body, ax)


def _bars(title: str, labels: list[str], values: list[float], colors: list[str]) -> str:
    n = len(values)
    ax = _Axes(0, n, *_bounds(values))
    slot = (W - 2 * PAD) / n
    body = []
    for i, (label, v, c) in enumerate(zip(labels, values, colors)):
        x = PAD + i * slot + slot * 0.1
        top, bottom = sorted((ax.y(v), ax.y(0.0)))
        body.append(f'<rect x="{x:.2f}" y="{top:.2f}" width="{slot * 0.8:.2f}" height="{bottom - top:.2f}" fill="{c}"/>')
        if label:
            body.append(
                f'<text x="{x + slot * 0.4:.2f}" y="{H - PAD + 16}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11">{escape(label)}</text>'
            )
    return _svg(title, body, ax)


def svg_delta_bars(rep: Report) -> str:
    vals = [delta_ths(r.ths) for r in rep.records]
    return _bars("Delta THS (THS3 - THS1) per prompt", [""] * len(vals), vals,
                 ["#1f77b4" if v <= ZERO_TOL else "#d62728" for v in vals])


def svg_totals_bars(rep: Report) -> str:
    return _bars("Total THS per agent", [LEVEL_NAMES[lvl] for lvl in LEVELS],
                 [rep.stats[lvl].total for lvl in LEVELS], [COLORS[lvl] for lvl in LEVELS])


def svg_reduction_bars(rep: Report) -> str:
    vals = [rep.reduction_totals[lvl] or 0.0 for lvl in (2, 3)]
    return _bars("Reduction from totals (%)", ["1 -> 2", "1 -> 3"], vals, [COLORS[2], COLORS[3]])


def svg_gauss(rep: Report) -> str:
    fits = {lvl: g for lvl, g in rep.gauss.items() if g is not None}
    if not fits:
        return _svg("Gaussian dispersion of THS", [], _Axes(0, 1, 0, 1))
    lo = min(g.mu - 4 * g.sigma for g in fits.values())
    hi = max(g.mu + 4 * g.sigma for g in fits.values())
    xs = [lo + (hi - lo) * i / 200 for i in range(201)]
    peak = max(g.pdf(g.mu) for g in fits.values())
    ax = _Axes(lo, hi, 0.0, peak)
    body = []
    for lvl, g in fits.items():
        pts = " ".join(f"{ax.x(x):.2f},{ax.y(g.pdf(x)):.2f}" for x in xs)
        body.append(f'<polyline fill="none" stroke="{COLORS[lvl]}" stroke-width="2" points="{pts}"/>')
    return _svg("Gaussian dispersion of THS", body, ax)


def write_report(rep: Report, out_dir: str | Path, svg: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "ths_per_prompt.csv": export_csv(rep.records, "ths"),
        "delta_ths.csv": export_csv(rep.records, "deltas"),
        "kpis.csv": export_csv(rep.records, "kpis"),
        "totals.csv": totals_csv(rep),
        "reductions.csv": reductions_csv(rep),
        "gauss.csv": gauss_csv(rep),
        "summary.txt": summary_text(rep),
    }
    if svg:
        files.update({
            "ths_per_prompt.svg": svg_ths_lines(rep),
            "delta_ths.svg": svg_delta_bars(rep),
            "totals.svg": svg_totals_bars(rep),
            "reductions.svg": svg_reduction_bars(rep),
            "gauss.svg": svg_gauss(rep),
        })
    written = []
    for name, text in files.items():
        path = out / name
        path.write_bytes(text.encode("utf-8"))
        written.append(path)
    return written
