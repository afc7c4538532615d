"""Deterministic SVG line charts with CSV twins. No display server, files only."""

import os

W, H = 840, 480
ML, MR, MT, MB = 70, 30, 46, 56  # margins around the plot area
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, count: int = 5):
    if hi == lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def line_chart(path: str, xs, series, title: str, xlabel: str, ylabel: str):
    """Write an SVG of one or more (label, ys) series over shared xs."""
    if not xs or not series:
        raise ValueError("need xs and at least one series")
    xs = [float(x) for x in xs]
    ys_all = [float(y) for _, ys in series for y in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    px = lambda x: ML + (x - x_lo) / (x_hi - x_lo) * (W - ML - MR)
    py = lambda y: H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="16" '
           f'font-family="sans-serif">{title}</text>']
    for yt in _ticks(y_lo, y_hi):
        y = py(yt)
        out.append(f'<line x1="{ML}" y1="{_fmt(y)}" x2="{W - MR}" y2="{_fmt(y)}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{ML - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
                   f'font-size="11" font-family="sans-serif">{_fmt(yt)}</text>')
    for xt in _ticks(x_lo, x_hi):
        x = px(xt)
        out.append(f'<line x1="{_fmt(x)}" y1="{MT}" x2="{_fmt(x)}" y2="{H - MB}" '
                   f'stroke="#eeeeee" stroke-width="1"/>')
        out.append(f'<text x="{_fmt(x)}" y="{H - MB + 18}" text-anchor="middle" '
                   f'font-size="11" font-family="sans-serif">{_fmt(xt)}</text>')
    out.append(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
               f'fill="none" stroke="#333333"/>')
    for i, (label, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(float(y)))}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MT + 16 + 16 * i
        out.append(f'<line x1="{W - MR - 150}" y1="{ly - 4}" x2="{W - MR - 126}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - MR - 120}" y="{ly}" font-size="11" '
                   f'font-family="sans-serif">{label}</text>')
    out.append(f'<text x="{(ML + W - MR) / 2}" y="{H - 14}" text-anchor="middle" '
               f'font-size="12" font-family="sans-serif">{xlabel}</text>')
    out.append(f'<text x="18" y="{(MT + H - MB) / 2}" text-anchor="middle" font-size="12" '
               f'font-family="sans-serif" transform="rotate(-90 18 {(MT + H - MB) / 2})">'
               f'{ylabel}</text>')
    out.append("</svg>")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def csv_twin(path: str, x_name: str, xs, series):
    """The same data as the chart, one x column plus one column per series."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(",".join([x_name] + [label for label, _ in series]) + "\n")
        for i, x in enumerate(xs):
            row = [repr(float(x))] + [repr(float(ys[i])) for _, ys in series]
            f.write(",".join(row) + "\n")
