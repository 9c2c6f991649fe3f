"""File formats for experiment outputs.

Grids are written as 32-bit little-endian raw floats in row-major order
next to a small text sidecar (same stem, ``.hdr``) holding the
dimensions, so the pair round-trips losslessly at float32 precision.
Previews are 8-bit binary PGM with the [0, 1] window mapped to 0..255.
CSV floats use repr-level precision so equal runs produce identical bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import DimensionError


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_raw(path: Path, arr: np.ndarray) -> None:
    """Write a 2D or 3D array as float32 raw plus a dimension sidecar."""
    path = Path(path)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        planes, height, width = 1, arr.shape[0], arr.shape[1]
    elif arr.ndim == 3:
        planes, height, width = arr.shape
    else:
        raise DimensionError("raw output expects a 2D or 3D array")
    arr.astype("<f4").tofile(path)
    sidecar = path.with_suffix(".hdr")
    sidecar.write_text(
        f"planes {planes}\nheight {height}\nwidth {width}\n"
        "dtype float32\nbyteorder little\norder row-major\n")


def read_raw(path: Path) -> np.ndarray:
    """Read a raw/sidecar pair back; returns 2D when planes == 1."""
    path = Path(path)
    fields = {}
    for line in path.with_suffix(".hdr").read_text().splitlines():
        key, _, value = line.partition(" ")
        fields[key] = value
    planes = int(fields["planes"])
    height = int(fields["height"])
    width = int(fields["width"])
    data = np.fromfile(path, dtype="<f4").astype(np.float64)
    if data.size != planes * height * width:
        raise DimensionError(f"raw payload of {path} does not match header")
    data = data.reshape(planes, height, width)
    return data[0] if planes == 1 else data


def write_pgm(path: Path, arr: np.ndarray) -> None:
    """8-bit binary PGM preview with display window [0, 1]."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError("PGM output expects a 2D array")
    levels = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def write_csv(path: Path, header: list[str], rows) -> None:
    """CSV with deterministic float formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
