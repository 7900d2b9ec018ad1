"""8-bit binary PGM heatmaps with a JSON sidecar holding the value range."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def to_gray(image: np.ndarray) -> tuple[np.ndarray, float, float]:
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        gray = np.rint((image - lo) / (hi - lo) * 255.0)
    else:
        gray = np.zeros_like(image)
    return gray.astype(np.uint8), lo, hi


def write_pgm(path, image: np.ndarray, meta: dict | None = None) -> Path:
    """Write ``image`` (rows x cols, row 0 at the top) as P5 plus ``.json`` sidecar."""
    path = Path(path)
    gray, lo, hi = to_gray(image)
    rows, cols = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
    sidecar = {"min": lo, "max": hi, "width": cols, "height": rows}
    sidecar.update(meta or {})
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    return path


def read_pgm(path) -> np.ndarray:
    """Read a P5 image in the layout :func:`write_pgm` produces."""
    magic, size, maxval, data = Path(path).read_bytes().split(b"\n", 3)
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError(f"{path}: not an 8-bit P5 image")
    cols, rows = (int(v) for v in size.split())
    return np.frombuffer(data[: rows * cols], dtype=np.uint8).reshape(rows, cols)
