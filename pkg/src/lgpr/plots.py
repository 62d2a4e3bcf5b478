"""Small static SVG renderer for 1-D mixture fits and bound traces.

No plotting library is needed; the output is plain text that diffs and
checksums like any other artifact.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
WIDTH = 640
PANEL_H = 170
PAD = 40


def _f(v):
    return f"{v:.2f}"


class _Panel:
    def __init__(self, top, xlim, ylim, title):
        self.top, self.xlim, self.ylim, self.title = top, xlim, ylim, title

    def px(self, x):
        lo, hi = self.xlim
        return PAD + (np.asarray(x) - lo) / (hi - lo or 1.0) * (WIDTH - 2 * PAD)

    def py(self, y):
        lo, hi = self.ylim
        return self.top + PANEL_H - 20 - (np.asarray(y) - lo) / (hi - lo or 1.0) * (PANEL_H - 40)

    def frame(self):
        x0, x1 = PAD, WIDTH - PAD
        y0, y1 = self.top + 20, self.top + PANEL_H - 20
        return [f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" fill="none" stroke="#888"/>',
                f'<text x="{x0}" y="{self.top + 14}" font-size="12">{escape(self.title)}</text>',
                f'<text x="{x0}" y="{y1 + 14}" font-size="10">{self.xlim[0]:.3g}</text>',
                f'<text x="{x1}" y="{y1 + 14}" font-size="10" text-anchor="end">{self.xlim[1]:.3g}</text>']

    def polyline(self, x, y, color, width=1.5):
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(x), self.py(y)))
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'

    def band(self, x, lo, hi, color):
        xs = np.concatenate([self.px(x), self.px(x)[::-1]])
        ys = np.concatenate([self.py(hi), self.py(lo)[::-1]])
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(xs, ys))
        return f'<polygon points="{pts}" fill="{color}" fill-opacity="0.18" stroke="none"/>'

    def dots(self, x, y, colors):
        return [f'<circle cx="{_f(a)}" cy="{_f(b)}" r="1.8" fill="{c}"/>'
                for a, b, c in zip(self.px(x), self.py(y), colors)]


def _document(parts, height):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
            f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{WIDTH}" height="{height}" fill="white"/>'] + parts + ["</svg>"]) + "\n"


def mixture_svg(X, Y, assignments, pred, output=0):
    """Data coloured by assignment, per-component mean +- 2 sd, probability strip.

    ``pred`` is a :class:`~lgpr.predict.MixturePrediction` over sorted 1-D
    query inputs.  Only output column ``output`` is drawn.
    """
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    if X.shape[1] != 1 or pred.x.shape[1] != 1:
        raise ValueError("mixture plots need 1-D inputs")
    x, y = X[:, 0], np.asarray(Y, dtype=float).reshape(len(X), -1)[:, output]
    order = np.argsort(pred.x[:, 0])
    xs = pred.x[order, 0]
    means, stds, probs = pred.means[order, :, output], pred.stds[order, :, output], pred.probs[order]
    xlim = (float(min(x.min(), xs.min())), float(max(x.max(), xs.max())))
    lo = min(y.min(), float(np.min(means - 2 * stds)))
    hi = max(y.max(), float(np.max(means + 2 * stds)))
    pad = 0.05 * (hi - lo or 1.0)
    colors = [COLORS[int(a) % len(COLORS)] for a in assignments]
    parts = []
    p1 = _Panel(0, xlim, (lo - pad, hi + pad), "data, coloured by component")
    parts += p1.frame() + p1.dots(x, y, colors)
    p2 = _Panel(PANEL_H, xlim, (lo - pad, hi + pad), "per-component mean and two standard deviations")
    parts += p2.frame() + p2.dots(x, y, ["#bbb"] * len(x))
    for l in range(means.shape[1]):
        c = COLORS[l % len(COLORS)]
        parts.append(p2.band(xs, means[:, l] - 2 * stds[:, l], means[:, l] + 2 * stds[:, l], c))
        parts.append(p2.polyline(xs, means[:, l], c))
    p3 = _Panel(2 * PANEL_H, xlim, (0.0, 1.0), "component probabilities")
    parts += p3.frame()
    for l in range(probs.shape[1]):
        parts.append(p3.polyline(xs, probs[:, l], COLORS[l % len(COLORS)]))
    return _document(parts, 3 * PANEL_H)


def trace_svg(traces):
    """Bound traces, one polyline per named series: ``{name: (iterations, values)}``."""
    if not traces:
        raise ValueError("no traces to draw")
    allx = np.concatenate([np.asarray(t, dtype=float) for t, _ in traces.values()])
    ally = np.concatenate([np.asarray(v, dtype=float) for _, v in traces.values()])
    ally = ally[np.isfinite(ally)]
    # clip the early transient so the converged region stays readable
    lo, hi = np.percentile(ally, 5), ally.max()
    panel = _Panel(0, (float(allx.min()), float(allx.max())), (float(lo), float(hi)), "lower bound by iteration")
    parts = panel.frame()
    for i, (name, (t, v)) in enumerate(traces.items()):
        c = COLORS[i % len(COLORS)]
        parts.append(panel.polyline(t, np.clip(v, lo, hi), c))
        parts.append(f'<text x="{WIDTH - PAD - 4}" y="{36 + 12 * i}" font-size="10" fill="{c}" '
                     f'text-anchor="end">{escape(str(name))}</text>')
    return _document(parts, PANEL_H + 10)
