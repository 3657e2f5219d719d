"""Run manifests and grayscale heatmap export."""

from __future__ import annotations

import datetime as _dt
import json
import os

import numpy as np

from . import __version__


def gray_levels(grid, vmax):
    """Map [0, vmax] linearly onto gray 255..0 (darker = larger); clip outside."""
    grid = np.asarray(grid, dtype=float)
    if vmax <= 0:
        return np.full(grid.shape, 255, dtype=np.uint8)
    frac = np.clip(grid, 0.0, vmax) / vmax
    return np.rint(255.0 * (1.0 - frac)).astype(np.uint8)


def write_pgm(path, grid, vmax):
    """Binary (P5) 8-bit PGM, one pixel per cell."""
    levels = gray_levels(grid, vmax)
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def write_heatmaps(out_dir, grids, shared_scale=True):
    """Write ``<name>.pgm`` for each grid; one common scale unless told otherwise."""
    paths = []
    top = max((float(np.max(g)) for g in grids.values() if np.size(g)), default=0.0)
    for name, g in grids.items():
        vmax = top if shared_scale else (float(np.max(g)) if np.size(g) else 0.0)
        path = os.path.join(out_dir, f"{name}.pgm")
        write_pgm(path, g, vmax)
        paths.append(path)
    return paths


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Inputs, config, outputs and warnings of one CLI run."""

    def __init__(self, command, inputs, config):
        self.data = {
            "command": command,
            "tool_version": __version__,
            "started_at": _now(),
            "finished_at": None,
            "inputs": {k: os.fspath(v) for k, v in inputs.items() if v is not None},
            "config": config,
            "outputs": [],
            "warnings": [],
            "results": {},
        }

    def output(self, path):
        self.data["outputs"].append(os.fspath(path))
        return path

    def warn(self, message):
        self.data["warnings"].append(message)

    def result(self, key, value):
        self.data["results"][key] = value

    @property
    def warnings(self):
        return self.data["warnings"]

    def write(self, path):
        self.data["finished_at"] = _now()
        self.data["outputs"].append(os.fspath(path))
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return path
