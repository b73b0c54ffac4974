"""Deterministic hand-written SVG figures.

Every coordinate is printed with a fixed number of decimals and nothing
depends on time or locale, so identical inputs give byte-identical files.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
FONT = "font-family=\"sans-serif\""


def _f(v: float) -> str:
    s = f"{float(v):.2f}"
    return "0.00" if s == "-0.00" else s


class _Svg:
    def __init__(self, width: float, height: float):
        self.w, self.h = width, height
        self.parts: list[str] = []

    def rect(self, x, y, w, h, fill, stroke=None):
        st = f" stroke=\"{stroke}\"" if stroke else ""
        self.parts.append(f"<rect x=\"{_f(x)}\" y=\"{_f(y)}\" width=\"{_f(w)}\" "
                          f"height=\"{_f(h)}\" fill=\"{fill}\"{st}/>")

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, dash=None):
        da = f" stroke-dasharray=\"{dash}\"" if dash else ""
        self.parts.append(f"<line x1=\"{_f(x1)}\" y1=\"{_f(y1)}\" x2=\"{_f(x2)}\" y2=\"{_f(y2)}\" "
                          f"stroke=\"{stroke}\" stroke-width=\"{_f(width)}\"{da}/>")

    def text(self, x, y, s, size=11, anchor="start", fill="#000"):
        self.parts.append(f"<text x=\"{_f(x)}\" y=\"{_f(y)}\" {FONT} font-size=\"{size}\" "
                          f"text-anchor=\"{anchor}\" fill=\"{fill}\">{escape(str(s))}</text>")

    def polyline(self, xs, ys, stroke, width=1.5):
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(xs, ys))
        self.parts.append(f"<polyline points=\"{pts}\" fill=\"none\" stroke=\"{stroke}\" "
                          f"stroke-width=\"{_f(width)}\"/>")

    def circle(self, x, y, r, fill):
        self.parts.append(f"<circle cx=\"{_f(x)}\" cy=\"{_f(y)}\" r=\"{_f(r)}\" fill=\"{fill}\"/>")

    def render(self) -> str:
        head = (f"<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{_f(self.w)}\" "
                f"height=\"{_f(self.h)}\" viewBox=\"0 0 {_f(self.w)} {_f(self.h)}\">")
        return "\n".join([head, f"<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>",
                          *self.parts, "</svg>"]) + "\n"


def _blue(t: float) -> str:
    t = min(1.0, max(0.0, float(t)))
    r = int(round(247 - t * (247 - 8)))
    g = int(round(251 - t * (251 - 48)))
    b = int(round(255 - t * (255 - 107)))
    return f"#{r:02x}{g:02x}{b:02x}"


def _diverging(t: float) -> str:
    """Blue for -1 through white to red for +1."""
    t = min(1.0, max(-1.0, float(t)))
    if t >= 0:
        return f"#ff{int(round(255 * (1 - t))):02x}{int(round(255 * (1 - t))):02x}"
    s = -t
    return f"#{int(round(255 * (1 - s))):02x}{int(round(255 * (1 - s))):02x}ff"


def confusion_svg(cm, class_names, title: str = "Confusion matrix") -> str:
    cm = np.asarray(cm)
    K = cm.shape[0]
    cell, left, top = 44.0, 150.0, 50.0
    svg = _Svg(left + K * cell + 30, top + K * cell + 140)
    svg.text(svg.w / 2, 24, title, 14, "middle")
    peak = max(1, int(cm.max()))
    for i in range(K):
        svg.text(left - 6, top + (i + 0.5) * cell + 4, class_names[i], 10, "end")
        for j in range(K):
            frac = cm[i, j] / peak
            svg.rect(left + j * cell, top + i * cell, cell, cell, _blue(frac), "#ccc")
            svg.text(left + (j + 0.5) * cell, top + (i + 0.5) * cell + 4, int(cm[i, j]), 10,
                     "middle", "#fff" if frac > 0.5 else "#000")
    for j in range(K):
        x, y = left + (j + 0.5) * cell, top + K * cell + 8
        svg.parts.append(f"<text x=\"{_f(x)}\" y=\"{_f(y)}\" {FONT} font-size=\"10\" "
                         f"text-anchor=\"end\" transform=\"rotate(-45 {_f(x)} {_f(y)})\">"
                         f"{escape(str(class_names[j]))}</text>")
    svg.text(left + K * cell / 2, svg.h - 8, "Predicted", 12, "middle")
    svg.text(12, top + K * cell / 2, "Actual", 12, "start")
    return svg.render()


def roc_svg(curves: dict, aucs: dict, class_names, title: str = "ROC curves (one vs rest)") -> str:
    size, left, top = 320.0, 60.0, 40.0
    svg = _Svg(left + size + 230, top + size + 50)
    svg.text(left + size / 2, 24, title, 14, "middle")
    svg.rect(left, top, size, size, "#fff", "#000")
    for t in range(6):
        v = t / 5
        svg.text(left + v * size, top + size + 16, f"{v:.1f}", 10, "middle")
        svg.text(left - 6, top + size - v * size + 4, f"{v:.1f}", 10, "end")
    svg.line(left, top + size, left + size, top, "#999", 1.0, "4 3")
    svg.text(left + size / 2, top + size + 36, "False positive rate", 12, "middle")
    for n, k in enumerate(sorted(curves)):
        fpr, tpr = curves[k]
        color = PALETTE[n % len(PALETTE)]
        svg.polyline(left + np.asarray(fpr) * size, top + size - np.asarray(tpr) * size, color)
        ly = top + 10 + 18 * n
        svg.line(left + size + 16, ly - 4, left + size + 36, ly - 4, color, 2.0)
        auc = aucs.get(k, float("nan"))
        svg.text(left + size + 42, ly, f"{class_names[k]} (AUC = {auc:.4f})", 10)
    return svg.render()


def importance_svg(rows, title: str = "Feature importance", top_n: int = 10,
                   errors: bool = False) -> str:
    """Horizontal bars for ``(name, value[, std])`` rows, largest first."""
    rows = list(rows)[:top_n]
    bar, left, top, width = 22.0, 170.0, 46.0, 320.0
    svg = _Svg(left + width + 90, top + max(1, len(rows)) * bar + 40)
    svg.text(svg.w / 2, 24, title, 14, "middle")
    svg.line(left, top, left, top + max(1, len(rows)) * bar)
    peak = max([abs(r[1]) for r in rows] + [1e-300])
    for i, r in enumerate(rows):
        w = abs(r[1]) / peak * width
        y = top + i * bar
        svg.rect(left, y + 3, w, bar - 6, PALETTE[0])
        svg.text(left - 6, y + bar / 2 + 4, r[0], 10, "end")
        svg.text(left + w + 4, y + bar / 2 + 4, f"{r[1]:.6f}", 9)
        if errors and len(r) > 2:
            s = abs(r[2]) / peak * width
            svg.line(left + w - s, y + bar / 2, left + w + s, y + bar / 2, "#000", 1.0)
    return svg.render()


def shap_strip_svg(summary, title: str | None = None) -> str:
    """One row of points per feature: x = phi, colour = standardized feature value."""
    feats = summary.features
    row, left, top, width = 26.0, 170.0, 46.0, 360.0
    svg = _Svg(left + width + 40, top + max(1, len(feats)) * row + 50)
    svg.text(svg.w / 2, 24, title or f"SHAP summary: {summary.class_name}", 14, "middle")
    span = max([float(np.max(np.abs(f.phi))) for f in feats if len(f.phi)] + [1e-300])
    mid = left + width / 2
    svg.line(mid, top, mid, top + max(1, len(feats)) * row, "#999")
    for i, f in enumerate(feats):
        y = top + (i + 0.5) * row
        svg.text(left - 6, y + 4, f.feature, 10, "end")
        # deterministic vertical jitter by rank inside the row
        n = len(f.phi)
        offs = ((np.arange(n) * 7919) % 11 - 5) / 5.0 * (row * 0.3) if n else []
        for p, v, o in zip(f.phi, f.value, offs):
            svg.circle(mid + p / span * (width / 2), y + o, 2.0, _diverging(v / 2.0))
    svg.text(mid, svg.h - 14, f"SHAP value ({summary.output_space} space)", 12, "middle")
    return svg.render()


def force_svg(attr, class_k: int, class_name: str = "", top_n: int = 10) -> str:
    """Signed contribution bars of one explained instance for one class."""
    phi = attr.phi[class_k]
    order = sorted(range(len(phi)), key=lambda j: (-abs(phi[j]), j))[:top_n]
    bar, left, top, width = 22.0, 230.0, 60.0, 320.0
    svg = _Svg(left + width + 40, top + max(1, len(order)) * bar + 40)
    name = class_name or str(class_k)
    svg.text(svg.w / 2, 22, f"Local explanation: instance {attr.instance_index}, class {name}",
             13, "middle")
    svg.text(svg.w / 2, 42, f"base {attr.base_values[class_k]:.4f} -> output "
             f"{attr.output[class_k]:.4f} ({attr.output_space})", 10, "middle")
    peak = max([abs(phi[j]) for j in order] + [1e-300])
    mid = left + width / 2
    svg.line(mid, top, mid, top + max(1, len(order)) * bar, "#999")
    for i, j in enumerate(order):
        w = abs(phi[j]) / peak * (width / 2)
        y = top + i * bar
        x = mid if phi[j] >= 0 else mid - w
        svg.rect(x, y + 3, w, bar - 6, "#d62728" if phi[j] >= 0 else "#1f77b4")
        label = attr.feature_names[j]
        if attr.x is not None:
            label = f"{label} = {attr.x[j]:.3f}"
        svg.text(left - 6, y + bar / 2 + 4, label, 10, "end")
    return svg.render()
