"""Summary comparison and SVG chart emission (no plotting library needed)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence
from xml.sax.saxutils import escape

from .errors import ConfigError

METRICS = ("o_avg", "f_avg", "f_avg_paper_literal")
DIRECTIONS = ("<", ">")
PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


@dataclass
class Verdict:
    passed: bool
    metric: str
    direction: str
    mean_a: float
    mean_b: float
    pooled_std: float
    margin: float
    label_a: str = "a"
    label_b: str = "b"

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: {self.metric} {self.label_a}={self.mean_a:.4f} {self.direction} "
            f"{self.label_b}={self.mean_b:.4f} (margin {self.margin:g} x pooled std {self.pooled_std:.4f})"
        )


def _metric(summary: dict, metric: str, label: str):
    block = summary.get("metrics", {}).get(metric)
    if not isinstance(block, dict) or block.get("mean") is None:
        available = sorted(k for k, v in summary.get("metrics", {}).items()
                           if isinstance(v, dict) and "mean" in v and v["mean"] is not None)
        raise ConfigError(f"metric {metric!r} absent from {label}; available: {', '.join(available)}")
    return block["mean"], block.get("std") or 0.0


def compare(summary_a: dict, summary_b: dict, metric: str, direction: str,
            margin: float = 0.5) -> Verdict:
    """Check ``mean_a <direction> mean_b`` by more than ``margin`` pooled standard deviations.

    Pooled std is sqrt((s_a^2 + s_b^2) / 2).
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}")
    ma, sa = _metric(summary_a, metric, "summary a")
    mb, sb = _metric(summary_b, metric, "summary b")
    pooled = math.sqrt((sa * sa + sb * sb) / 2.0)
    gap = (ma - mb) if direction == ">" else (mb - ma)
    passed = gap > margin * pooled
    return Verdict(passed, metric, direction, ma, mb, pooled, margin,
                   summary_a.get("learner", "a"), summary_b.get("learner", "b"))


# --- SVG ----------------------------------------------------------------------

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60


def _labels(summaries) -> List[str]:
    names = [s.get("learner", f"run{k}") for k, s in enumerate(summaries)]
    out = []
    for k, n in enumerate(names):
        out.append(n if names.count(n) == 1 else f"{n}#{k}")
    return out


def _scale(lo, hi, a, b):
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _bounds(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    return lo - pad, hi + pad


def _frame(title, xlabel, ylabel, xs, ys, xticks, yticks):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="{(LEFT + W - RIGHT) / 2:.1f}" y="{H - 18}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="18" y="{(TOP + H - BOTTOM) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(TOP + H - BOTTOM) / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for v in xticks:
        x = xs(v)
        parts.append(f'<line x1="{x:.1f}" y1="{H - BOTTOM}" x2="{x:.1f}" y2="{H - BOTTOM + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{H - BOTTOM + 18}" text-anchor="middle">{v:g}</text>')
    for v in yticks:
        y = ys(v)
        parts.append(f'<line x1="{LEFT - 5}" y1="{y:.1f}" x2="{LEFT}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{LEFT - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    return parts


def _legend(parts, labels):
    for k, name in enumerate(labels):
        y = TOP + 10 + 18 * k
        color = PALETTE[k % len(PALETTE)]
        parts.append(f'<rect x="{W - RIGHT + 15}" y="{y - 9}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{W - RIGHT + 32}" y="{y + 1}">{escape(name)}</text>')


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def curve_svg(title, ylabel, labels, curves) -> str:
    N = max(len(c) for c in curves)
    xs = _scale(1, N, LEFT + 20, W - RIGHT - 20)
    lo, hi = _bounds([v for c in curves for v in c])
    ys = _scale(lo, hi, H - BOTTOM - 10, TOP + 10)
    parts = _frame(title, "Environment", ylabel, xs, ys, range(1, N + 1), _ticks(lo, hi))
    for k, curve in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        pts = [(xs(i + 1), ys(v)) for i, v in enumerate(curve) if v is not None]
        if len(pts) > 1:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>')
    _legend(parts, labels)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_svg(title, labels, points) -> str:
    fx = [p[0] for p in points if p[0] is not None]
    oy = [p[1] for p in points if p[1] is not None]
    xlo, xhi = _bounds(fx)
    ylo, yhi = _bounds(oy)
    xs = _scale(xlo, xhi, LEFT + 20, W - RIGHT - 20)
    ys = _scale(ylo, yhi, H - BOTTOM - 10, TOP + 10)
    parts = _frame(title, "Average forgetting (last environment)", "Online accuracy (last environment)",
                   xs, ys, [round(v, 3) for v in _ticks(xlo, xhi)], _ticks(ylo, yhi))
    for k, (f, o) in enumerate(points):
        if f is None or o is None:
            continue
        color = PALETTE[k % len(PALETTE)]
        parts.append(f'<circle cx="{xs(f):.1f}" cy="{ys(o):.1f}" r="5" fill="{color}"/>')
    _legend(parts, labels)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def plot(summaries: Sequence[dict], out_dir) -> List[Path]:
    """Write the online-accuracy curve, forgetting curve and trade-off scatter (SVG + CSV)."""
    if not summaries:
        raise ConfigError("plot needs at least one summary")
    Ns = {s.get("N") for s in summaries}
    if len(Ns) > 1:
        offenders = ", ".join(f"{s.get('learner')}:N={s.get('N')}" for s in summaries)
        raise ConfigError(f"summaries disagree on N: {offenders}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = _labels(summaries)
    online = [s["metrics"]["online_curve"] for s in summaries]
    forget = [s["metrics"]["forgetting_curve"] for s in summaries]
    last = [(s["metrics"]["last_environment"]["forgetting"],
             s["metrics"]["last_environment"]["online_accuracy"]) for s in summaries]
    N = len(online[0])

    def fmt(v):
        return "" if v is None else repr(v)

    written = []
    for stem, title, ylabel, curves in (
        ("online_accuracy", "Average Online Accuracy vs Environments", "Online accuracy", online),
        ("forgetting", "Average Forgetting vs Environments", "Forgetting", forget),
    ):
        svg = out / f"{stem}.svg"
        svg.write_text(curve_svg(title, ylabel, labels, curves), encoding="utf-8")
        rows = [[lab] + [fmt(v) for v in c] for lab, c in zip(labels, curves)]
        _write_csv(out / f"{stem}.csv", ["learner"] + [f"env_{i + 1}" for i in range(N)], rows)
        written += [svg, out / f"{stem}.csv"]
    svg = out / "tradeoff.svg"
    svg.write_text(scatter_svg("Online Accuracy vs Forgetting (last environment)", labels, last), encoding="utf-8")
    _write_csv(out / "tradeoff.csv", ["learner", "forgetting", "online_accuracy"],
               [[lab, fmt(f), fmt(o)] for lab, (f, o) in zip(labels, last)])
    written += [svg, out / "tradeoff.csv"]
    return written
