"""Self-contained SVG charts and a report index for a run directory."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=72, right=24, top=40, bottom=56)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


class ReportError(ValueError):
    pass


def nice_ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("non-finite axis range")
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 10))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(t, 10))
    return ticks


def _fmt(v: float) -> str:
    return f"{v:g}"


@dataclass
class _Frame:
    x0: float
    x1: float
    y0: float
    y1: float

    def px(self, x: float) -> float:
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * w

    def py(self, y: float) -> float:
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * h


def _axes(frame: _Frame, xt, yt, title: str, x_label: str, y_label: str) -> list[str]:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f"<title>{escape(title)}</title>",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    bx0, bx1 = frame.px(frame.x0), frame.px(frame.x1)
    by0, by1 = frame.py(frame.y0), frame.py(frame.y1)
    for t in xt:
        x = frame.px(t)
        out.append(f'<line x1="{x:.2f}" y1="{by0:.2f}" x2="{x:.2f}" y2="{by1:.2f}" stroke="#eee"/>')
        out.append(f'<text x="{x:.2f}" y="{by0 + 16:.2f}" text-anchor="middle">{_fmt(t)}</text>')
    for t in yt:
        y = frame.py(t)
        out.append(f'<line x1="{bx0:.2f}" y1="{y:.2f}" x2="{bx1:.2f}" y2="{y:.2f}" stroke="#eee"/>')
        out.append(f'<text x="{bx0 - 6:.2f}" y="{y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<rect x="{bx0:.2f}" y="{by1:.2f}" width="{bx1 - bx0:.2f}" height="{by0 - by1:.2f}" '
               f'fill="none" stroke="#333"/>')
    out.append(f'<text class="x-label" x="{(bx0 + bx1) / 2:.2f}" y="{HEIGHT - 14}" '
               f'text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text class="y-label" x="18" y="{(by0 + by1) / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {(by0 + by1) / 2:.2f})">{escape(y_label)}</text>')
    return out


def _frame(xs: Sequence[float], ys: Sequence[float]) -> tuple[_Frame, list[float], list[float]]:
    if not xs or not ys:
        raise ReportError("no data to plot")
    xt = nice_ticks(min(xs), max(xs))
    yt = nice_ticks(min(ys), max(ys))
    return _Frame(xt[0], xt[-1], yt[0], yt[-1]), xt, yt


def _legend(names: Sequence[str]) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = MARGIN["top"] + 14 + 16 * i
        x = WIDTH - MARGIN["right"] - 150
        out.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{x + 16}" y="{y}">{escape(name)}</text>')
    return out


def line_chart(series: dict[str, tuple[Sequence[float], Sequence[float]]], title: str,
               x_label: str, y_label: str) -> str:
    xs = [x for s in series.values() for x in s[0]]
    ys = [y for s in series.values() for y in s[1]]
    frame, xt, yt = _frame(xs, ys)
    out = _axes(frame, xt, yt, title, x_label, y_label)
    for i, (name, (sx, sy)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{frame.px(x):.2f},{frame.py(y):.2f}" for x, y in zip(sx, sy))
        out.append(f'<polyline class="series" data-name="{escape(name)}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        for x, y in zip(sx, sy):
            out.append(f'<circle cx="{frame.px(x):.2f}" cy="{frame.py(y):.2f}" r="2.5" fill="{color}"/>')
    out += _legend(list(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_chart(xs: Sequence[float], ys: Sequence[float], labels: Sequence[str], title: str,
                  x_label: str, y_label: str, diagonal: bool = True) -> str:
    lo, hi = min(min(xs), min(ys)), max(max(xs), max(ys))
    frame, xt, yt = _frame([lo, hi], [lo, hi]) if diagonal else _frame(list(xs), list(ys))
    out = _axes(frame, xt, yt, title, x_label, y_label)
    if diagonal:
        out.append(f'<line x1="{frame.px(frame.x0):.2f}" y1="{frame.py(frame.x0):.2f}" '
                   f'x2="{frame.px(frame.x1):.2f}" y2="{frame.py(frame.x1):.2f}" stroke="#999" stroke-dasharray="4 3"/>')
    for x, y, lab in zip(xs, ys, labels):
        out.append(f'<circle class="point" data-id="{escape(str(lab))}" cx="{frame.px(x):.2f}" '
                   f'cy="{frame.py(y):.2f}" r="3" fill="{PALETTE[0]}" fill-opacity="0.7">'
                   f"<title>{escape(str(lab))}</title></circle>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str, y_label: str) -> str:
    frame, _, yt = _frame([0.0, float(len(labels))], [min(0.0, *values), max(0.0, *values)])
    out = _axes(frame, [], yt, title, "operator", y_label)
    w = (frame.px(1) - frame.px(0)) * 0.6
    for i, (lab, v) in enumerate(zip(labels, values)):
        cx = frame.px(i + 0.5)
        top, base = frame.py(max(v, 0.0)), frame.py(min(v, 0.0))
        out.append(f'<rect x="{cx - w / 2:.2f}" y="{top:.2f}" width="{w:.2f}" height="{base - top:.2f}" '
                   f'fill="{PALETTE[i % len(PALETTE)]}"><title>{escape(lab)}: {v:.4g}</title></rect>')
        out.append(f'<text x="{cx:.2f}" y="{frame.py(frame.y0) + 16:.2f}" text-anchor="middle">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_csv(path: Path) -> list[dict]:
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(lines))


def build_report(run_dir: str | Path) -> list[Path]:
    """Render every chart the directory's CSVs support and write ``index.md``."""
    run = Path(run_dir)
    if not run.is_dir():
        raise ReportError(f"{run} is not a directory")
    made: list[Path] = []

    def emit(name: str, text: str):
        p = run / name
        p.write_text(text)
        made.append(p)

    pred = run / "predictions.csv"
    if pred.exists():
        rows = _read_csv(pred)
        if rows:
            actual = [float(r["actual_s"]) for r in rows]
            predicted = [float(r["predicted_s"]) for r in rows]
            ids = [r["interval"] for r in rows]
            emit("predicted_vs_actual.svg", scatter_chart(
                actual, predicted, [f"interval {i}" for i in ids], "Predicted vs actual discharge interval",
                "actual interval (seconds)", "predicted interval (seconds)"))
            order = list(range(len(rows)))
            emit("interval_series.svg", line_chart(
                {"actual": (order, actual), "predicted": (order, predicted)},
                "Discharge interval per held-out interval", "held-out interval (index)", "interval (seconds)"))
    for name in ("experiment-power-ratio.csv", "experiment-train-size.csv"):
        path = run / name
        if path.exists():
            rows = _read_csv(path)
            axis = next(iter(rows[0]))
            xs = [float(r[axis]) for r in rows]
            unit = "high/low dynamic power ratio" if axis == "ratio" else "training intervals (count)"
            emit(name.replace(".csv", ".svg"), line_chart(
                {"SVR gain": (xs, [float(r["gain_pct"]) for r in rows])},
                "SVR RMSE gain over linear model", unit, "gain (percent of linear RMSE)"))
            emit(name.replace(".csv", "-rmse.svg"), line_chart(
                {"linear": (xs, [float(r["linear_rmse_s"]) for r in rows]),
                 "SVR": (xs, [float(r["svr_rmse_s"]) for r in rows])},
                "Nested-CV RMSE", unit, "RMSE (seconds)"))
    attr = run / "attribution.csv"
    if attr.exists():
        rows = _read_csv(attr)
        if rows:
            emit("attribution.svg", bar_chart([r["operator"] for r in rows], [float(r["absolute_w"]) for r in rows],
                                              "Estimated absolute operator power", "power (watts)"))
    epochs = run / "epochs.csv"
    if epochs.exists():
        rows = _read_csv(epochs)
        if rows:
            t = [float(r["epoch_start_s"]) for r in rows]
            emit("epochs.svg", line_chart({"average power": (t, [float(r["avg_power_w"]) for r in rows])},
                                          "Predicted average power per epoch", "time (seconds)", "power (watts)"))
    if not made:
        raise ReportError(f"{run}: nothing to report (no predictions, experiment, attribution or epoch CSVs)")
    lines = [f"# Report for {run.name}", ""]
    for p in sorted(run.iterdir()):
        if p.name == "index.md" or p.is_dir():
            continue
        lines.append(f"- [{p.name}]({p.name})")
    lines.append("")
    for p in made:
        lines.append(f"![{p.stem}]({p.name})")
    (run / "index.md").write_text("\n".join(lines) + "\n")
    made.append(run / "index.md")
    return made
