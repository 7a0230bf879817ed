"""Dependency-free SVG line plots (ERC curves, per-track quality traces)."""

from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
W, H = 480, 320
ML, MR, MT, MB = 56, 16, 20, 44


def _fmt(v):
    return f"{v:.2f}".rstrip("0").rstrip(".") if abs(v) < 1e4 else f"{v:.3g}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def line_plot(series, xlabel, ylabel, x_range=None, y_range=None, title=None):
    """Render ``[(label, xs, ys, style), ...]`` to an SVG string.

    ``style`` is ``None`` or a dict with optional ``color``, ``dash`` and
    ``marker`` (indices of points to highlight).
    """
    xs_all = [x for _, xs, _, _ in series for x in xs]
    ys_all = [y for _, _, ys, _ in series for y in ys]
    x0, x1 = x_range or (min(xs_all, default=0.0), max(xs_all, default=1.0))
    y0, y1 = y_range or (min(ys_all, default=0.0), max(ys_all, default=1.0))
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    pw, ph = W - ML - MR, H - MT - MB

    def px(x):
        return ML + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MT + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{MT + ph}" x2="{px(t):.2f}" y2="{MT + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{MT + ph + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ML - 4}" y1="{py(t):.2f}" x2="{ML}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{ML + pw / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="14" y="{MT + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {MT + ph / 2})">{escape(ylabel)}</text>'
    )
    if title:
        out.append(f'<text x="{ML + pw / 2}" y="14" text-anchor="middle">{escape(title)}</text>')
    for k, (label, xs, ys, style) in enumerate(series):
        style = style or {}
        color = style.get("color", PALETTE[k % len(PALETTE)])
        dash = f' stroke-dasharray="{style["dash"]}"' if style.get("dash") else ""
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        for i in style.get("marker", ()):
            out.append(
                f'<circle cx="{px(xs[i]):.2f}" cy="{py(ys[i]):.2f}" r="4" fill="none" '
                f'stroke="{color}" stroke-width="2"/>'
            )
        ly = MT + 14 + 14 * k
        out.append(f'<line x1="{W - MR - 110}" y1="{ly - 4}" x2="{W - MR - 90}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{W - MR - 86}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def erc_svg(curve, perfect=None, label="predictor"):
    series = [(label, curve.r.tolist(), curve.fnmr.tolist(), None)]
    if perfect is not None:
        series.append(("PERFECT", perfect.r.tolist(), perfect.fnmr.tolist(),
                       {"color": "#d62728", "dash": "4 3"}))
    top = max(max(curve.fnmr.tolist(), default=0.0), 1e-3)
    return line_plot(series, "fraction rejected", "FNMR", x_range=(0.0, float(curve.r[-1]) or 1.0),
                     y_range=(0.0, top), title=f"ERC, initial FNMR {curve.f:g}")


def trace_svg(traces):
    """``traces``: ``{track_id: (frames, scores, best_index)}``."""
    series = [
        (f"track {tid}", list(frames), list(scores), {"marker": [best]})
        for tid, (frames, scores, best) in sorted(traces.items())
    ]
    return line_plot(series, "frame", "log reconstruction probability", title="Quality per track")
