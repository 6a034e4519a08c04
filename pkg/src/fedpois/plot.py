"""Minimal SVG line charts built from a run directory's CSV files."""
from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

from .artifacts import num, read_csv

WIDTH, HEIGHT, PAD = 640, 360, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def line_chart(series, title, xlabel, ylabel):
    """SVG text for ``series = {name: [(x, y), ...]}``; non-finite points are dropped."""
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(x) and math.isfinite(y)]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return PAD + (x - x0) / (x1 - x0) * (WIDTH - 2 * PAD)

    def sy(y):
        return HEIGHT - PAD - (y - y0) / (y1 - y0) * (HEIGHT - 2 * PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
           f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.1f}" y="{HEIGHT - PAD + 15}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{PAD - 5}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for k, (name, s) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        seg = [(x, y) for x, y in s if math.isfinite(x) and math.isfinite(y)]
        if seg:
            coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in seg)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{WIDTH - PAD - 5}" y="{PAD + 14 * k}" text-anchor="end" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_run(directory):
    """Write attack_sr.svg, dist_to_X.svg and estimation_error.svg; returns the paths."""
    rounds = read_csv(os.path.join(directory, "rounds.csv"))
    r = [int(row["round"]) for row in rounds]
    written = []

    def emit(name, svg):
        path = os.path.join(directory, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(svg)
        written.append(path)

    emit("attack_sr.svg", line_chart(
        {"attack_sr": list(zip(r, (num(x["attack_sr"]) for x in rounds))),
         "benign_ac": list(zip(r, (num(x["benign_ac"]) for x in rounds)))},
        "Attack SR and Benign AC of the global model", "round", "rate"))
    emit("dist_to_X.svg", line_chart(
        {"dist_to_X": list(zip(r, (num(x["dist_to_X"]) for x in rounds)))},
        "Distance between global and Trojaned model", "round", "l2 distance"))

    bounds_path = os.path.join(directory, "bounds.csv")
    series = {"observed": [], "lower": [], "upper": []}
    if os.path.exists(bounds_path):
        for row in read_csv(bounds_path):
            if row["bound_name"] == "estimation_error":
                t = int(row["round"])
                for key in series:
                    series[key].append((t, num(row[key])))
    emit("estimation_error.svg", line_chart(series, "Server estimation error of X", "round", "l2 error"))
    return written
