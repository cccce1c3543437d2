"""Minimal SVG boxplots and histograms for report artifacts."""

from __future__ import annotations

from html import escape
from typing import Mapping, Sequence

import numpy as np

__all__ = ["boxplot", "histogram"]

W, H = 720, 420
PAD_L, PAD_R, PAD_T, PAD_B = 70, 20, 40, 110


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _frame(title: str, ylabel: str, body: list[str], header: str = "") -> str:
    out = []
    if header:
        out.append(f"<!--\n{header.replace('--', '- -')}\n-->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
               f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">')
    out.append(f'<rect width="{W}" height="{H}" fill="white"/>')
    out.append(f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<text x="16" y="{(PAD_T + H - PAD_B) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(PAD_T + H - PAD_B) / 2})">{escape(ylabel)}</text>')
    out.extend(body)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _yaxis(lo: float, hi: float):
    span = hi - lo or 1.0
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    plot_h = H - PAD_T - PAD_B

    def y(v):
        return PAD_T + plot_h * (hi - v) / (hi - lo)

    body = [f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{H - PAD_B}" stroke="black"/>']
    for t in np.linspace(lo, hi, 6):
        body.append(f'<line x1="{PAD_L - 4}" y1="{_fmt(y(t))}" x2="{PAD_L}" y2="{_fmt(y(t))}" stroke="black"/>')
        body.append(f'<text x="{PAD_L - 6}" y="{_fmt(y(t) + 4)}" text-anchor="end">{t:.3g}</text>')
    return y, body


def boxplot(series: Mapping[str, Sequence[float]], title: str = "", ylabel: str = "",
            header: str = "", annotate_median: bool = True) -> str:
    """One box per label (quartiles, 1.5 IQR whiskers, outlier dots)."""
    clean = {k: np.asarray([v for v in vals if np.isfinite(v)], dtype=float)
             for k, vals in series.items()}
    allv = np.concatenate([v for v in clean.values() if v.size] or [np.zeros(1)])
    y, body = _yaxis(float(allv.min()), float(allv.max()))
    n = max(len(clean), 1)
    slot = (W - PAD_L - PAD_R) / n
    for i, (label, v) in enumerate(clean.items()):
        cx = PAD_L + slot * (i + 0.5)
        bw = min(40.0, slot * 0.6)
        body.append(f'<text x="{_fmt(cx)}" y="{H - PAD_B + 14}" text-anchor="end" '
                    f'transform="rotate(-35 {_fmt(cx)} {H - PAD_B + 14})">{escape(label)}</text>')
        if not v.size:
            continue
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        lo_w = v[v >= q1 - 1.5 * iqr].min()
        hi_w = v[v <= q3 + 1.5 * iqr].max()
        body.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(y(lo_w))}" x2="{_fmt(cx)}" y2="{_fmt(y(q1))}" stroke="black"/>')
        body.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(y(q3))}" x2="{_fmt(cx)}" y2="{_fmt(y(hi_w))}" stroke="black"/>')
        body.append(f'<rect x="{_fmt(cx - bw / 2)}" y="{_fmt(y(q3))}" width="{_fmt(bw)}" '
                    f'height="{_fmt(max(y(q1) - y(q3), 0.5))}" fill="#9ecae1" stroke="black"/>')
        body.append(f'<line x1="{_fmt(cx - bw / 2)}" y1="{_fmt(y(med))}" x2="{_fmt(cx + bw / 2)}" '
                    f'y2="{_fmt(y(med))}" stroke="black" stroke-width="2"/>')
        for o in v[(v < lo_w) | (v > hi_w)]:
            body.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(y(o))}" r="2.5" fill="none" stroke="black"/>')
        if annotate_median:
            body.append(f'<text x="{_fmt(cx)}" y="{_fmt(y(med) - 4)}" text-anchor="middle">{med:.2f}</text>')
    return _frame(title, ylabel, body, header)


def histogram(values: Sequence[float], bins: Sequence[float] | int = 10, title: str = "",
              xlabel: str = "", markers: Mapping[str, float] | None = None, header: str = "") -> str:
    """Count histogram with optional labelled vertical markers."""
    v = np.asarray(values, dtype=float)
    counts, edges = np.histogram(v, bins=bins)
    marks = dict(markers or {})
    x_lo = min([edges[0]] + list(marks.values()))
    x_hi = max([edges[-1]] + list(marks.values()))
    span = (x_hi - x_lo) or 1.0
    plot_w = W - PAD_L - PAD_R

    def x(t):
        return PAD_L + plot_w * (t - x_lo) / span

    y, body = _yaxis(0.0, float(max(counts.max(initial=0), 1)))
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        body.append(f'<rect x="{_fmt(x(a))}" y="{_fmt(y(c))}" width="{_fmt(max(x(b) - x(a) - 1, 0.5))}" '
                    f'height="{_fmt(y(0) - y(c))}" fill="#bdbdbd" stroke="black"/>')
    body.append(f'<line x1="{PAD_L}" y1="{_fmt(y(0))}" x2="{W - PAD_R}" y2="{_fmt(y(0))}" stroke="black"/>')
    for e in edges:
        body.append(f'<text x="{_fmt(x(e))}" y="{_fmt(y(0) + 14)}" text-anchor="middle">{e:.3g}</text>')
    colors = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd")
    for i, (label, t) in enumerate(marks.items()):
        col = colors[i % len(colors)]
        body.append(f'<line x1="{_fmt(x(t))}" y1="{PAD_T}" x2="{_fmt(x(t))}" y2="{_fmt(y(0))}" '
                    f'stroke="{col}" stroke-dasharray="4 3" stroke-width="2"/>')
        body.append(f'<text x="{_fmt(x(t) + 4)}" y="{PAD_T + 12 + 12 * i}" fill="{col}">{escape(label)}</text>')
    body.append(f'<text x="{(PAD_L + W - PAD_R) / 2}" y="{H - PAD_B + 34}" text-anchor="middle">{escape(xlabel)}</text>')
    return _frame(title, "count", body, header)
