"""Training curves as a single dependency-free SVG document."""
from xml.sax.saxutils import escape

PANELS = (("loss", "Loss"), ("accuracy", "Accuracy"), ("precision", "Precision"),
          ("recall", "Recall"), ("auc", "AUC"))
COLORS = {"train": "#1f77b4", "val": "#d62728"}

WIDTH, PANEL_H = 640, 240
LEFT, RIGHT, TOP, BOTTOM = 64, 110, 30, 40


def _ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def _epoch_ticks(n):
    if n <= 10:
        return list(range(1, n + 1))
    step = max(1, round(n / 10))
    ticks = list(range(1, n + 1, step))
    return ticks if ticks[-1] == n else ticks + [n]


def _panel(records, key, title, y0):
    epochs = sorted({r.epoch for r in records})
    n = max(epochs) if epochs else 1
    values = [getattr(r, key) for r in records if getattr(r, key) == getattr(r, key)]
    if key == "loss":
        lo, hi = 0.0, max(values + [1e-9])
    else:
        lo, hi = 0.0, 1.0
    pw, ph = WIDTH - LEFT - RIGHT, PANEL_H - TOP - BOTTOM

    def px(e):
        return LEFT + (pw * (e - 1) / (n - 1) if n > 1 else pw / 2)

    def py(v):
        return y0 + TOP + ph - ph * (v - lo) / (hi - lo if hi > lo else 1.0)

    out = [f'<g class="panel" id="{key}">',
           f'<text x="{WIDTH / 2:.1f}" y="{y0 + 18}" text-anchor="middle" '
           f'font-size="14" font-weight="bold">{escape(title)} vs. epoch</text>',
           f'<rect x="{LEFT}" y="{y0 + TOP}" width="{pw}" height="{ph}" fill="none" '
           f'stroke="#444"/>']
    for v in _ticks(lo, hi):
        y = py(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{LEFT - 6}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-size="10">{v:.2f}</text>')
    for e in _epoch_ticks(n):
        x = px(e)
        yb = y0 + TOP + ph
        out.append(f'<line x1="{x:.2f}" y1="{yb}" x2="{x:.2f}" y2="{yb + 4}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{yb + 15}" text-anchor="middle" '
                   f'font-size="10">{e}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{y0 + PANEL_H - 6}" text-anchor="middle" '
               f'font-size="11">epoch</text>')
    out.append(f'<text x="14" y="{y0 + TOP + ph / 2:.1f}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 14 {y0 + TOP + ph / 2:.1f})">{escape(title.lower())}</text>')
    for k, split in enumerate(("train", "val")):
        pts = [(r.epoch, getattr(r, key)) for r in records if r.split == split]
        pts = [(e, v) for e, v in sorted(pts) if v == v]
        if pts:
            path = " ".join(f"{px(e):.2f},{py(v):.2f}" for e, v in pts)
            out.append(f'<polyline fill="none" stroke="{COLORS[split]}" stroke-width="1.5" '
                       f'points="{path}"/>')
        ly = y0 + TOP + 14 + 16 * k
        lx = WIDTH - RIGHT + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                   f'stroke="{COLORS[split]}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 22}" y="{ly}" font-size="11">{split}</text>')
    out.append("</g>")
    return out


def curves_svg(log):
    """Five stacked line charts (loss, accuracy, precision, recall, AUC)."""
    height = PANEL_H * len(PANELS)
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
             f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">',
             f'<rect width="{WIDTH}" height="{height}" fill="white"/>']
    for k, (key, title) in enumerate(PANELS):
        lines += _panel(log.records, key, title, k * PANEL_H)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_curves(log, path):
    with open(path, "w") as fh:
        fh.write(curves_svg(log))
