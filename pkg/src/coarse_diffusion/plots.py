"""Self-contained SVG line plots. Output bytes depend only on the input values."""

from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

from .errors import EmptyTrace, NonFiniteState

W, H = 640, 260
PAD_L, PAD_R, PAD_T, PAD_B = 64, 64, 30, 40
LEFT_COLOR, RIGHT_COLOR = "#1f3b73", "#c0562b"


def _fmt(v):
    return f"{v:.4g}"


def _range(vals, log=False):
    if log:
        vals = [math.log10(v) for v in vals if v > 0] or [0.0]
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _polyline(xs, ys, xr, yr, color, ylog=False, xlog=False):
    pw, ph = W - PAD_L - PAD_R, H - PAD_T - PAD_B
    pts = []
    for x, y in zip(xs, ys):
        if (ylog and y <= 0) or (xlog and x <= 0):
            continue
        x = math.log10(x) if xlog else x
        y = math.log10(y) if ylog else y
        px = PAD_L + pw * (x - xr[0]) / (xr[1] - xr[0])
        py = PAD_T + ph * (1 - (y - yr[0]) / (yr[1] - yr[0]))
        pts.append(f"{px:.2f},{py:.2f}")
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{" ".join(pts)}"/>'


def _axis_labels(yr, side, color, log=False):
    x = PAD_L - 6 if side == "left" else W - PAD_R + 6
    anchor = "end" if side == "left" else "start"
    out = []
    for i in range(5):
        v = yr[0] + (yr[1] - yr[0]) * i / 4
        y = PAD_T + (H - PAD_T - PAD_B) * (1 - i / 4)
        label = _fmt(10**v) if log else _fmt(v)
        out.append(f'<text x="{x}" y="{y + 4:.2f}" text-anchor="{anchor}" fill="{color}">{label}</text>')
    return out


def dual_axis_svg(xs, left, right, left_name, right_name, title, xlabel="step", left_log=False):
    """One panel with two series on independent y axes."""
    xr = _range(xs)
    lr, rr = _range(left, left_log), _range(right)
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{PAD_L}" y="{PAD_T}" width="{W - PAD_L - PAD_R}" height="{H - PAD_T - PAD_B}" '
        'fill="none" stroke="#999"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="{PAD_L}" y="{PAD_T - 6}" fill="{LEFT_COLOR}">{escape(left_name)}</text>',
        f'<text x="{W - PAD_R}" y="{PAD_T - 6}" text-anchor="end" fill="{RIGHT_COLOR}">{escape(right_name)}</text>',
        f'<text x="{PAD_L}" y="{H - PAD_B + 14}" text-anchor="middle">{_fmt(xr[0])}</text>',
        f'<text x="{W - PAD_R}" y="{H - PAD_B + 14}" text-anchor="middle">{_fmt(xr[1])}</text>',
    ]
    body += _axis_labels(lr, "left", LEFT_COLOR, left_log)
    body += _axis_labels(rr, "right", RIGHT_COLOR)
    body.append(_polyline(xs, left, xr, lr, LEFT_COLOR, ylog=left_log))
    body.append(_polyline(xs, right, xr, rr, RIGHT_COLOR))
    body.append("</svg>")
    return "\n".join(body) + "\n"


def _check(trace):
    if not trace:
        raise EmptyTrace("cannot plot an empty trace")
    for r in trace:
        for k, v in r.items():
            if not math.isfinite(float(v)):
                raise NonFiniteState(f"non-finite {k} at step {r.get('step')}")


def trace_svgs(trace, title=""):
    """(loss + alignment, manifold error + memorisation) panels as SVG strings."""
    _check(trace)
    steps = [r["step"] for r in trace]
    loss = [r["loss"] for r in trace]
    a = dual_axis_svg(steps, loss, [r["alignment"] for r in trace], "train loss", "alignment",
                      f"{title} loss and alignment".strip(), left_log=all(v > 0 for v in loss))
    b = dual_axis_svg(steps, [r["manifold_error"] for r in trace], [r["memorization"] for r in trace],
                      "manifold error", "memorization", f"{title} manifold error and memorization".strip())
    return a, b


def emit_plots(trace, out_dir, title=""):
    """Write loss_alignment.svg and manifold_memorization.svg; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, svg in zip(("loss_alignment.svg", "manifold_memorization.svg"), trace_svgs(trace, title)):
        p = os.path.join(out_dir, name)
        with open(p, "w", newline="\n") as fh:
            fh.write(svg)
        paths.append(p)
    return paths


def loglog_svg(xs, ys, title, xlabel="N", ylabel="median KL"):
    """Single log-log series, e.g. a smoothing-rate curve."""
    if not xs:
        raise EmptyTrace("nothing to plot")
    xr, yr = _range(xs, True), _range(ys, True)
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{PAD_L}" y="{PAD_T}" width="{W - PAD_L - PAD_R}" height="{H - PAD_T - PAD_B}" '
        'fill="none" stroke="#999"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)} (log)</text>',
        f'<text x="{PAD_L}" y="{PAD_T - 6}" fill="{LEFT_COLOR}">{escape(ylabel)} (log)</text>',
        f'<text x="{PAD_L}" y="{H - PAD_B + 14}" text-anchor="middle">{_fmt(10 ** xr[0])}</text>',
        f'<text x="{W - PAD_R}" y="{H - PAD_B + 14}" text-anchor="middle">{_fmt(10 ** xr[1])}</text>',
    ]
    body += _axis_labels(yr, "left", LEFT_COLOR, log=True)
    body.append(_polyline(xs, ys, xr, yr, LEFT_COLOR, ylog=True, xlog=True))
    body.append("</svg>")
    return "\n".join(body) + "\n"
