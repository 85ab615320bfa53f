"""On-disk formats.

Ensemble directory::

    fields.bin     float64 little-endian, C order [replica, snapshot, *space]
    manifest.json  shape, snapshot_times, grid, spec, u0, master_seed, complete

Noise directory::

    increments.bin      float64 little-endian, C order [path, step, *space]
    noise_manifest.json shape, grid, spec, seed, replicas

CSV tables start with one ``# generated <UTC timestamp>`` line; every
other byte is a deterministic function of the data.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import os
from pathlib import Path

import numpy as np

from .errors import PersistenceError

FIELDS_FILE = "fields.bin"
MANIFEST_FILE = "manifest.json"
NOISE_FILE = "increments.bin"
NOISE_MANIFEST = "noise_manifest.json"
DTYPE = "<f8"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows, timestamp: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = timestamp or _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    buf = io.StringIO()
    buf.write(f"# generated {stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def read_csv(path):
    """Returns ``(columns, rows)`` with values as strings; skips ``#`` lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rd = list(csv.reader(lines))
    if not rd:
        return [], []
    return rd[0], rd[1:]


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class FieldWriter:
    """Appends replica blocks to ``fields.bin`` and keeps the manifest
    current, so an interrupted run leaves a readable partial manifest."""

    def __init__(self, directory, manifest: dict):
        self.dir = Path(directory)
        self.manifest = dict(manifest, complete=False, replicas_written=0, dtype=DTYPE,
                             layout="C order [replica, snapshot, *space]")
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.dir / FIELDS_FILE, "wb")
            write_json(self.dir / MANIFEST_FILE, self.manifest)
        except OSError as exc:
            raise PersistenceError(f"cannot open ensemble directory {self.dir}: {exc}", self.manifest) from exc

    def append(self, block: np.ndarray):
        try:
            self._fh.write(np.ascontiguousarray(block, dtype=DTYPE).tobytes())
            self.manifest["replicas_written"] += int(block.shape[0])
        except OSError as exc:
            self.fail(str(exc))
            raise PersistenceError(f"write failed: {exc}", self.manifest) from exc

    def fail(self, message: str):
        self.manifest["error"] = message
        try:
            self._fh.close()
            write_json(self.dir / MANIFEST_FILE, self.manifest)
        except OSError:
            pass

    def close(self):
        try:
            self._fh.close()
            self.manifest["complete"] = True
            write_json(self.dir / MANIFEST_FILE, self.manifest)
        except OSError as exc:
            raise PersistenceError(f"cannot finalize {self.dir}: {exc}", self.manifest) from exc


def read_manifest(directory, name=MANIFEST_FILE) -> dict:
    p = Path(directory) / name
    try:
        return json.loads(p.read_text())
    except (OSError, ValueError) as exc:
        raise PersistenceError(f"cannot read {p}: {exc}") from exc


def read_fields(directory, manifest: dict, mmap: bool = False) -> np.ndarray:
    p = Path(directory) / FIELDS_FILE
    shape = tuple(manifest["shape"])
    shape = (manifest.get("replicas_written", shape[0]),) + shape[1:]
    try:
        if mmap:
            return np.memmap(p, dtype=DTYPE, mode="r", shape=shape)
        data = np.fromfile(p, dtype=DTYPE)
    except OSError as exc:
        raise PersistenceError(f"cannot read {p}: {exc}", manifest) from exc
    if data.size != int(np.prod(shape)):
        raise PersistenceError(f"{p} holds {data.size} values, manifest expects {int(np.prod(shape))}", manifest)
    return data.reshape(shape).astype(float, copy=False)


def save_noise_paths(paths, directory) -> Path:
    """Persist a list of ``NoisePath`` with a shared spec and grid."""
    if not paths:
        raise PersistenceError("no paths to save")
    d = Path(directory)
    first = paths[0]
    arr = np.stack([p.increments for p in paths])
    manifest = {
        "format": "pamlab-noise", "version": 1, "dtype": DTYPE,
        "layout": "C order [path, step, *space] (time-major, row-major space)",
        "shape": list(arr.shape), "spec": first.spec.to_dict(), "grid": first.grid.to_dict(),
        "seed": int(first.seed), "replicas": [None if p.replica is None else int(p.replica) for p in paths],
    }
    try:
        d.mkdir(parents=True, exist_ok=True)
        arr.astype(DTYPE).tofile(d / NOISE_FILE)
        write_json(d / NOISE_MANIFEST, manifest)
    except OSError as exc:
        raise PersistenceError(f"cannot write noise paths to {d}: {exc}", manifest) from exc
    return d


def load_noise_paths(directory):
    from .noise import GridSpec, NoisePath, NoiseSpec

    m = read_manifest(directory, NOISE_MANIFEST)
    try:
        arr = np.fromfile(Path(directory) / NOISE_FILE, dtype=DTYPE).reshape(m["shape"])
    except (OSError, ValueError) as exc:
        raise PersistenceError(f"cannot read noise paths: {exc}", m) from exc
    spec = NoiseSpec.from_dict(m["spec"])
    grid = GridSpec.from_dict(m["grid"])
    return [NoisePath(arr[i].astype(float), m["seed"], spec, grid, r) for i, r in enumerate(m["replicas"])]


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"cannot create {p}: {exc}") from exc
    if not os.access(p, os.W_OK):
        raise PersistenceError(f"{p} is not writable")
    return p
