"""Artifact persistence: matrix and table CSV, JSON reports, SVG line plots.

All writes go to a temporary file in the target directory followed by an
atomic rename.  Floats are written with 17 significant digits so that a
write/read round trip is exact.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .linop import LinOp, Space


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    return "%.17g" % v


def matrix_csv(A: LinOp) -> str:
    """Row-major CSV with ``# dims: rows,cols`` and
    ``# weights: dom,cod`` header lines."""
    lines = [
        f"# dims: {A.shape[0]},{A.shape[1]}",
        f"# weights: {_num(A.dom.weight)},{_num(A.cod.weight)}",
    ]
    lines += [",".join(_num(v) for v in row) for row in A.matrix]
    return "\n".join(lines) + "\n"


def write_matrix(path, A: LinOp):
    atomic_write(path, matrix_csv(A))


def read_matrix(path) -> LinOp:
    with open(path, encoding="utf-8") as fh:
        dims = fh.readline()
        weights = fh.readline()
        if not (dims.startswith("# dims:") and weights.startswith("# weights:")):
            raise ValueError(f"{path}: missing matrix header")
        r, c = (int(v) for v in dims.split(":", 1)[1].split(","))
        wd, wc = (float(v) for v in weights.split(":", 1)[1].split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = data.reshape(r, c)
    if data.shape != (r, c):
        raise ValueError(f"{path}: expected {r}x{c} entries, found {data.shape}")
    return LinOp(data, Space("dom", c, wd), Space("cod", r, wc))


def table_csv(columns: dict, comments=()) -> str:
    names = list(columns)
    cols = [np.asarray(columns[n], dtype=float) for n in names]
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(names))
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v):
    return "nan" if math.isnan(v) else _num(v)


def write_table(path, columns: dict, comments=()):
    atomic_write(path, table_csv(columns, comments))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, data: dict):
    atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_plot(series, title="", xlabel="", ylabel="", width=640, height=400) -> str:
    """Static line chart.

    Parameters
    ----------
    series : list of (label, x, y)
    """
    ml, mr, mt, mb = 60, 20, 30, 45
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    finite = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[finite].min(), xs[finite].max()) if finite.any() else (0.0, 1.0)
    y0, y1 = (ys[finite].min(), ys[finite].max()) if finite.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-size="12">{_esc(xlabel)}</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle" '
                   f'font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{ml - 6}" y="{py(yv) + 3:.1f}" text-anchor="end" '
                   f'font-size="10">{yv:.3g}</text>')
    for k, (label, x, y) in enumerate(series):
        colour = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y)
                       if math.isfinite(a) and math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 14 + 14 * k
        out.append(f'<line x1="{ml + pw - 110}" y1="{ly - 4}" x2="{ml + pw - 90}" '
                   f'y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw - 85}" y="{ly}" font-size="11">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
