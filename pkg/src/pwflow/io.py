"""Artifact plumbing: schema-tagged JSON, CSV, run manifests and SVG plots."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .game import GameMatrix

SCHEMA = "pwflow/v1"
MANIFEST = "manifest.json"


def _plain(obj):
    """JSON-ready copy: Fractions become "a/b" strings, numpy scalars plain numbers."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, Fraction):
        return str(obj) if obj.denominator != 1 else str(obj.numerator)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(data: dict) -> str:
    body = {"schema": SCHEMA}
    body.update(_plain(data))
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def write_json(path, data: dict) -> Path:
    path = Path(path)
    path.write_text(dumps(data), encoding="utf-8")
    return path


def read_json(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "schema" in data and data["schema"] != SCHEMA:
        raise ValueError(f"unsupported schema {data['schema']!r}")
    return data


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, Fraction):
        return str(v)
    return v


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def read_matrix(path, exact: Optional[bool] = None) -> GameMatrix:
    data = read_json(path)
    if "matrix" in data:
        data = data["matrix"]
    return GameMatrix.from_json(data, exact=exact)


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def write_manifest(outdir, config: dict, inputs: Sequence = (), summary: Optional[dict] = None,
                   extra: Optional[dict] = None) -> Path:
    """Manifest referencing every other file in ``outdir`` by content hash.

    No timestamps or host names: identical runs give identical manifests.
    """
    outdir = Path(outdir)
    files = {}
    for p in sorted(outdir.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            files[p.relative_to(outdir).as_posix()] = file_hash(p)
    body = {
        "tool": "pwflow", "version": __version__,
        "python": platform.python_version(), "numpy": np.__version__,
        "config": config,
        "inputs": {Path(p).name: file_hash(p) for p in inputs},
        "outputs": files,
        "summary": summary or {},
    }
    if extra:
        body.update(extra)
    return write_json(outdir / MANIFEST, body)


def check_manifest(outdir) -> list:
    """Names of listed outputs whose hash no longer matches (empty if intact)."""
    outdir = Path(outdir)
    data = read_json(outdir / MANIFEST)
    bad = []
    for name, digest in data["outputs"].items():
        p = outdir / name
        if not p.exists() or file_hash(p) != digest:
            bad.append(name)
    return bad


# -- SVG ----------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_plot(series, path=None, width: int = 480, height: int = 480, title: str = "",
             kind: str = "scatter", margin: int = 30) -> str:
    """Static SVG 1.1 of 2D data.

    ``series`` is a list of ``(N, 2)`` arrays; ``kind`` is "scatter" or
    "polyline".  Axes are equally scaled.
    """
    if kind not in ("scatter", "polyline"):
        raise ValueError("plot kind must be 'scatter' or 'polyline'")
    arrs = [np.asarray(s, dtype=float).reshape(-1, 2) for s in series]
    pts = np.vstack([a for a in arrs if len(a)]) if any(len(a) for a in arrs) else np.zeros((1, 2))
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    lo = pts.min(axis=0) if len(pts) else np.zeros(2)
    hi = pts.max(axis=0) if len(pts) else np.ones(2)
    span = max(float(np.max(hi - lo)), 1e-12)
    scale = min(width, height) - 2 * margin

    def xy(p):
        return (margin + (p[0] - lo[0]) / span * scale,
                height - margin - (p[1] - lo[1]) / span * scale)

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
           f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{margin}" y="{margin * 0.6:.1f}" font-size="12" '
                   f'font-family="sans-serif">{_esc(title)}</text>')
    for k, a in enumerate(arrs):
        colour = _PALETTE[k % len(_PALETTE)]
        a = a[np.all(np.isfinite(a), axis=1)]
        if kind == "polyline" and len(a) > 1:
            coords = " ".join("%.2f,%.2f" % xy(p) for p in a)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1" '
                       f'points="{coords}"/>')
        else:
            for p in a:
                x, y = xy(p)
                out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1" fill="{colour}"/>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
