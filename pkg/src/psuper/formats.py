"""File formats: ``.fld`` fields, deterministic JSON reports and CSV tables.

A ``.fld`` file is plain text::

    # psuper field 1
    dim 2
    origin 0.0 0.0
    extent 1.0 1.0
    cells 4 4
    time 0.0 1.0 8          (space-time fields only)
    extended 0
    values 25
    0.0
    ...

Values are row-major (time slowest for space-time fields), one per line,
written with ``repr`` so finite values round-trip bit for bit; ``inf``
stands for +inf.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from psuper.grid import Grid, ScalarField, SpaceTimeField, SpaceTimeGrid

MAGIC = "# psuper field 1"


class FormatError(ValueError):
    pass


def write_field(path: str | Path, f: ScalarField | SpaceTimeField) -> None:
    grid = f.grid
    lines = [MAGIC, f"dim {grid.dim}",
             "origin " + " ".join(repr(float(o)) for o in grid.origin),
             "extent " + " ".join(repr(float(e)) for e in grid.extent),
             "cells " + " ".join(str(c) for c in grid.cells)]
    if isinstance(f, SpaceTimeField):
        st = f.stgrid
        lines.append(f"time {st.t0!r} {st.t1!r} {st.steps}")
    lines.append(f"extended {int(bool(f.extended))}")
    vals = np.asarray(f.values, float).ravel()
    lines.append(f"values {vals.size}")
    lines.extend(repr(float(v)) for v in vals)
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path: str | Path) -> ScalarField | SpaceTimeField:
    try:
        text = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read field file {path}: {exc.strerror}") from None
    if not text or text[0].strip() != MAGIC:
        raise FormatError(f"{path}: not a .fld file (missing header line)")
    head = {}
    i = 1
    while i < len(text):
        key, _, rest = text[i].partition(" ")
        head[key] = rest.split()
        i += 1
        if key == "values":
            break
    try:
        dim = int(head["dim"][0])
        origin = [float(x) for x in head["origin"]]
        extent = [float(x) for x in head["extent"]]
        cells = [int(x) for x in head["cells"]]
        extended = bool(int(head.get("extended", ["0"])[0]))
        count = int(head["values"][0])
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if len(cells) != dim:
        raise FormatError(f"{path}: dim {dim} but {len(cells)} cell counts")
    body = text[i:i + count]
    if len(body) != count:
        raise FormatError(f"{path}: expected {count} values, found {len(body)}")
    try:
        vals = np.array([float(v) for v in body])
    except ValueError as exc:
        raise FormatError(f"{path}: bad value ({exc})") from None
    grid = Grid(origin, extent, cells)
    if "time" in head:
        t0, t1, steps = head["time"]
        st = SpaceTimeGrid(grid, float(t0), float(t1), int(steps))
        return SpaceTimeField(st, vals, extended)
    return ScalarField(grid, vals, extended)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, two-space indent, shortest round-trip floats."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps(obj))


def write_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
