"""Plain-text SVG figures.  Output depends only on the inputs, so files diff cleanly."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1b5e8a", "#c8553d", "#4f9d69", "#8a5a9e", "#d9a21b", "#5c5c5c")
W, H = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=60)


def _n(x: float) -> str:
    return f"{x:.2f}"


class _Canvas:
    def __init__(self, width=W, height=H, title=""):
        self.width, self.height = width, height
        self.parts: list[str] = []
        if title:
            self.text(width / 2, 22, title, size=15, anchor="middle")

    def line(self, x1, y1, x2, y2, color="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" stroke="{color}" stroke-width="{width}"{d}/>'
        )

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.parts.append(
            f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def circle(self, x, y, r, fill):
        self.parts.append(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="{_n(r)}" fill="{fill}"/>')

    def polyline(self, xs, ys, color, width=1.5):
        pts = " ".join(f"{_n(a)},{_n(b)}" for a, b in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def text(self, x, y, s, size=11, anchor="start", rotate=None):
        r = f' transform="rotate({rotate} {_n(x)} {_n(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{_n(x)}" y="{_n(y)}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}"{r}>'
            f"{escape(str(s))}</text>"
        )

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
        )
        return head + "\n".join(self.parts) + "\n</svg>\n"


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    k = np.arange(np.ceil(lo / step - 1e-9), np.floor(hi / step + 1e-9) + 1)
    return np.round(k * step, 12) + 0.0


class _Axes:
    def __init__(self, canvas: _Canvas, box, xlim, ylim, xlabel="", ylabel=""):
        self.c = canvas
        self.x0, self.y0, self.x1, self.y1 = box
        self.xlim, self.ylim = xlim, ylim
        c = canvas
        c.line(self.x0, self.y1, self.x1, self.y1)
        c.line(self.x0, self.y0, self.x0, self.y1)
        for t in _ticks(*ylim):
            y = self.py(t)
            c.line(self.x0 - 4, y, self.x0, y)
            c.text(self.x0 - 6, y + 4, f"{t:g}", size=10, anchor="end")
        if xlabel:
            c.text((self.x0 + self.x1) / 2, self.y1 + 40, xlabel, anchor="middle")
        if ylabel:
            c.text(self.x0 - 50, (self.y0 + self.y1) / 2, ylabel, anchor="middle", rotate=-90)

    def xticks(self):
        for t in _ticks(*self.xlim):
            x = self.px(t)
            self.c.line(x, self.y1, x, self.y1 + 4)
            self.c.text(x, self.y1 + 16, f"{t:g}", size=10, anchor="middle")

    def px(self, v):
        lo, hi = self.xlim
        return self.x0 + (v - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, v):
        lo, hi = self.ylim
        return self.y1 - (v - lo) / (hi - lo) * (self.y1 - self.y0)


def _pad(lo, hi, frac=0.05):
    if hi == lo:
        return lo - 1, hi + 1
    d = (hi - lo) * frac
    return lo - d, hi + d


def _write(svg: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(svg)
    return path


def transfer_box_plot(actual: Mapping[str, Sequence[float]], assigned: Mapping[str, float], path=None) -> str:
    """Box-and-whisker of received transfers per group, with the assigned mean marked."""
    c = _Canvas(title="Actual and assigned transfer amounts (USD)")
    labels = list(actual)
    vals = np.concatenate([np.asarray(actual[k], float) for k in labels] + [np.asarray(list(assigned.values()), float)])
    ax = _Axes(c, (MARGIN["left"], MARGIN["top"], W - MARGIN["right"], H - MARGIN["bottom"]),
               (0, len(labels)), _pad(float(vals.min()), float(vals.max())), "assigned transfer arm", "USD")
    for i, k in enumerate(labels):
        v = np.asarray(actual[k], float)
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        iqr = q3 - q1
        lo = v[v >= q1 - 1.5 * iqr].min()
        hi = v[v <= q3 + 1.5 * iqr].max()
        xc = ax.px(i + 0.5)
        half = 0.3 * (ax.px(1) - ax.px(0))
        c.line(xc, ax.py(lo), xc, ax.py(q1))
        c.line(xc, ax.py(q3), xc, ax.py(hi))
        c.rect(xc - half, ax.py(q3), 2 * half, max(ax.py(q1) - ax.py(q3), 0.5), PALETTE[0] + "55", "#000")
        c.line(xc - half, ax.py(med), xc + half, ax.py(med), width=2)
        for o in v[(v < lo) | (v > hi)]:
            c.circle(xc, ax.py(o), 2, "#000")
        if k in assigned:
            c.line(xc - half * 1.3, ax.py(assigned[k]), xc + half * 1.3, ax.py(assigned[k]), PALETTE[1], 2, "4,3")
        c.text(xc, ax.y1 + 16, k, size=10, anchor="middle")
    svg = c.render()
    if path is not None:
        _write(svg, path)
    return svg


def ce_vs_ceff(
    costs: Mapping[str, float],
    effects: Mapping[str, float],
    benchmark_label: str,
    interpolation: Sequence[tuple[float, float]],
    path=None,
) -> str:
    """Two panels: impacts against cost with the interpolated cash line, and impact per $100."""
    c = _Canvas(width=2 * W, title="Cost equivalence and cost effectiveness")
    labels = list(costs)
    xs = np.array([costs[k] for k in labels], float)
    ys = np.array([effects[k] for k in labels], float)
    ix = np.array([p[0] for p in interpolation], float)
    iy = np.array([p[1] for p in interpolation], float)
    allx = np.concatenate([xs, ix, [0.0]])
    ally = np.concatenate([ys, iy, [0.0]])
    left = _Axes(c, (MARGIN["left"], MARGIN["top"], W - MARGIN["right"], H - MARGIN["bottom"]),
                 _pad(float(allx.min()), float(allx.max())), _pad(float(ally.min()), float(ally.max())),
                 "cost per eligible household (USD)", "impact")
    left.xticks()
    if ix.size:
        order = np.argsort(ix)
        c.polyline([left.px(v) for v in ix[order]], [left.py(v) for v in iy[order]], PALETTE[2])
    for i, k in enumerate(labels):
        col = PALETTE[1] if k == benchmark_label else PALETTE[0]
        c.circle(left.px(xs[i]), left.py(ys[i]), 4, col)
        c.text(left.px(xs[i]) + 6, left.py(ys[i]) - 6, k, size=10)
    bcr = ys / (xs / 100.0)
    lo, hi = _pad(min(0.0, float(bcr.min())), max(0.0, float(bcr.max())))
    right = _Axes(c, (W + MARGIN["left"], MARGIN["top"], 2 * W - MARGIN["right"], H - MARGIN["bottom"]),
                  (0, len(labels)), (lo, hi), "arm", "impact per $100")
    zero = right.py(0.0)
    c.line(right.x0, zero, right.x1, zero, "#888", 1, "2,2")
    for i, k in enumerate(labels):
        x = right.px(i + 0.15)
        wdt = right.px(0.7) - right.px(0)
        top = min(zero, right.py(bcr[i]))
        c.rect(x, top, wdt, abs(right.py(bcr[i]) - zero), PALETTE[1] if k == benchmark_label else PALETTE[0])
        c.text(x + wdt / 2, right.y1 + 16, k, size=10, anchor="middle")
    svg = c.render()
    if path is not None:
        _write(svg, path)
    return svg


def share_bars(shares: Mapping[str, Mapping[str, float]], path=None, title="Shares of households consuming each group") -> str:
    """Grouped bars: ``shares[group][arm]`` in [0, 1]."""
    c = _Canvas(width=max(W, 60 * len(shares) + 120), title=title)
    groups = list(shares)
    arms = list(dict.fromkeys(a for g in groups for a in shares[g]))
    ax = _Axes(c, (MARGIN["left"], MARGIN["top"], c.width - MARGIN["right"] - 90, H - MARGIN["bottom"]),
               (0, max(len(groups), 1)), (0.0, 1.0), "", "share")
    bw = (ax.px(1) - ax.px(0)) * 0.8 / max(len(arms), 1)
    for i, g in enumerate(groups):
        base = ax.px(i + 0.1)
        for j, a in enumerate(arms):
            v = float(shares[g].get(a, 0.0))
            c.rect(base + j * bw, ax.py(v), bw, ax.py(0) - ax.py(v), PALETTE[j % len(PALETTE)])
        c.text(ax.px(i + 0.5), ax.y1 + 16, g, size=10, anchor="middle")
    for j, a in enumerate(arms):
        y = MARGIN["top"] + 16 * j
        c.rect(c.width - 100, y, 10, 10, PALETTE[j % len(PALETTE)])
        c.text(c.width - 86, y + 9, a, size=10)
    svg = c.render()
    if path is not None:
        _write(svg, path)
    return svg


def cdf_plot(curves: Mapping[str, tuple[Sequence[float], Sequence[float]]], path=None,
             title="Distribution of predicted effects") -> str:
    """Step CDFs, one per outcome."""
    c = _Canvas(title=title)
    xs = np.concatenate([np.asarray(v[0], float) for v in curves.values()]) if curves else np.zeros(1)
    ax = _Axes(c, (MARGIN["left"], MARGIN["top"], W - MARGIN["right"] - 110, H - MARGIN["bottom"]),
               _pad(float(xs.min()), float(xs.max())), (0.0, 1.0), "predicted CATE", "cumulative share")
    ax.xticks()
    for j, (name, (x, y)) in enumerate(curves.items()):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        sx = np.repeat(x, 2)[1:]
        sy = np.repeat(y, 2)[:-1]
        col = PALETTE[j % len(PALETTE)]
        c.polyline([ax.px(v) for v in sx], [ax.py(v) for v in sy], col)
        c.rect(W - 120, MARGIN["top"] + 16 * j, 10, 10, col)
        c.text(W - 106, MARGIN["top"] + 16 * j + 9, name, size=10)
    svg = c.render()
    if path is not None:
        _write(svg, path)
    return svg
