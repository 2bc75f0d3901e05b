"""Surface serialization: long-format CSV and a versioned ``.npz`` cache."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import zipfile
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import InputError
from ..model import ProblemSpec
from ..sentinels import LIMIT, is_inf
from .grid import Grid
from .solver import SCHEME_VERSION
from .surface import ValueSurface

log = logging.getLogger(__name__)

CACHE_FORMAT = 1


def write_surface_csv(path: str | Path, surface: ValueSurface, header: dict | None = None) -> Path:
    """Rows ``t, y_1..y_d, u, Du_1..Du_d``; ``header`` entries become leading ``#`` lines."""
    path = Path(path)
    d = surface.dim
    n_t = len(surface.times)
    pts = surface.points.reshape(-1, d)
    with path.open("w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"y{j + 1}" for j in range(d)] + ["u"] + [f"Du{j + 1}" for j in range(d)])
        vals = surface.values.reshape(n_t, -1)
        grads = surface.gradient.reshape(n_t, -1, d)
        for i in range(n_t):
            t = repr(float(surface.times[i]))
            for j in range(pts.shape[0]):
                w.writerow([t] + [repr(float(v)) for v in pts[j]] + [repr(float(vals[i, j]))]
                           + [repr(float(v)) for v in grads[i, j]])
    return path


def read_surface_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a surface CSV as arrays (comment lines skipped)."""
    with Path(path).open() as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    head, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, k] for k, name in enumerate(head)}


def save_surface(path: str | Path, surface: ValueSurface) -> Path:
    path = Path(path)
    meta = {**surface.meta, "truncation": "inf" if surface.is_limit else float(surface.truncation),
            "format": CACHE_FORMAT}
    arrays = {"times": surface.times, "values": surface.values, "gradient": surface.gradient,
              "meta": np.array(json.dumps(meta, sort_keys=True))}
    for k, a in enumerate(surface.axes):
        arrays[f"axis{k}"] = a
    # fixed zip timestamps keep the file byte-identical across runs
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())
    return path


def load_surface(path: str | Path) -> ValueSurface:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CACHE_FORMAT:
            raise InputError(f"{path}: cache format {meta.get('format')} != {CACHE_FORMAT}")
        axes = []
        while f"axis{len(axes)}" in data:
            axes.append(data[f"axis{len(axes)}"])
        trunc = LIMIT if meta["truncation"] == "inf" else float(meta["truncation"])
        return ValueSurface(data["times"], tuple(axes), data["values"], data["gradient"], trunc, meta)


def cache_key(spec: ProblemSpec, grid: Grid, N) -> str:
    n = "inf" if is_inf(N) else repr(float(N))
    blob = "|".join([spec.content_hash(), grid.content_hash(), n, SCHEME_VERSION, str(CACHE_FORMAT)])
    return hashlib.sha256(blob.encode()).hexdigest()


class SurfaceCache:
    """Directory of cached surfaces keyed by :func:`cache_key`; ``hits``/``misses`` count lookups."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def path_for(self, spec: ProblemSpec, grid: Grid, N) -> Path:
        return self.directory / f"{cache_key(spec, grid, N)}.npz"

    def get_or_solve(self, spec: ProblemSpec, grid: Grid, N,
                     solve: Callable[[ProblemSpec, Grid, float], ValueSurface]) -> ValueSurface:
        path = self.path_for(spec, grid, N)
        if path.exists():
            try:
                surface = load_surface(path)
                self.hits += 1
                return surface
            except (InputError, OSError, ValueError, KeyError) as exc:
                log.warning("discarding unreadable cache entry %s (%s)", path.name, exc)
        self.misses += 1
        surface = solve(spec, grid, N)
        tmp = path.with_suffix(".tmp")
        save_surface(tmp, surface)
        tmp.replace(path)
        return surface
