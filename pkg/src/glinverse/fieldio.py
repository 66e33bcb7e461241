"""Field dumps: per-node CSV and the lossless ``GLF1`` binary format.

GLF1 layout (little-endian)::

    b"GLF1"                    4 bytes magic
    uint32 Nx - 1, uint32 Ny - 1
    float64 re, float64 im     m interleaved pairs in storage order
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .mesh import Grid2D

MAGIC = b"GLF1"
CSV_COLUMNS = ("i", "j", "x", "y", "re", "im")


def write_field_csv(path, grid: Grid2D, values, header: str | None = None):
    values = np.asarray(values, dtype=np.complex128)
    if values.shape != (grid.m,):
        raise ValueError(f"field must have length {grid.m}, got shape {values.shape}")
    i, j = grid.node(np.arange(grid.m))
    X, Y = grid.coordinates()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in zip(i, j, X, Y, values.real, values.imag):
            writer.writerow([int(row[0]), int(row[1])] + [repr(float(v)) for v in row[2:]])


def read_field_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(i, j, values)`` read from a field CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    rows = list(reader)
    i = np.array([int(r["i"]) for r in rows])
    j = np.array([int(r["j"]) for r in rows])
    values = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    return i, j, values


def write_glf1(path, grid: Grid2D, values):
    values = np.asarray(values, dtype=np.complex128)
    if values.shape != (grid.m,):
        raise ValueError(f"field must have length {grid.m}, got shape {values.shape}")
    payload = np.empty(2 * grid.m, dtype="<f8")
    payload[0::2] = values.real
    payload[1::2] = values.imag
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", grid.nx, grid.ny))
        fh.write(payload.tobytes())


def read_glf1(path) -> tuple[int, int, np.ndarray]:
    """Return ``(Nx - 1, Ny - 1, values)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a GLF1 file")
    nx, ny = struct.unpack("<II", raw[4:12])
    payload = np.frombuffer(raw[12:], dtype="<f8")
    if payload.size != 2 * nx * ny:
        raise ValueError(f"{path}: expected {2 * nx * ny} doubles, found {payload.size}")
    return nx, ny, payload[0::2] + 1j * payload[1::2]
