"""Language-neutral file formats used by the command-line driver.

Histograms are one decimal per line with '#' comments; matrices are
comma-separated rows; 2-D densities are ASCII PGM (P2), normalized to unit
mass on load.  Numbers serialize with 17 significant digits so CSV output
round-trips bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.17g}"


def format_float(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def read_vector(path) -> np.ndarray:
    values = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise ValueError(f"{path}: bad value line {raw!r}") from exc
    if not values:
        raise ValueError(f"{path}: file holds no values")
    return np.asarray(values, dtype=float)


def write_vector(path, values) -> None:
    lines = [format_float(v) for v in np.asarray(values, dtype=float)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix(path) -> np.ndarray:
    rows = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise ValueError(f"{path}: bad matrix row {raw!r}") from exc
    if not rows:
        raise ValueError(f"{path}: matrix file holds no rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged matrix rows")
    return np.asarray(rows, dtype=float)


def write_matrix(path, matrix) -> None:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [",".join(format_float(v) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


PGM_MAXVAL = 65535


def read_pgm(path):
    """Parse an ASCII (P2) PGM; returns (unit-mass image (h, w), shape)."""
    tokens = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM (P2) file")
    if len(tokens) < 4:
        raise ValueError(f"{path}: truncated PGM header")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = tokens[4:]
    if len(data) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {len(data)}")
    img = np.asarray([int(t) for t in data], dtype=float).reshape(h, w)
    if maxval <= 0 or img.min() < 0 or img.max() > maxval:
        raise ValueError(f"{path}: pixel values outside [0, maxval]")
    total = img.sum()
    if total <= 0:
        raise ValueError(f"{path}: image carries no mass")
    return img / total, (h, w)


def write_pgm(path, image) -> None:
    """Write a nonnegative image as ASCII PGM, scaled so max pixel = maxval.

    Loading the result back and re-writing it reproduces the bytes exactly.
    """
    img = np.atleast_2d(np.asarray(image, dtype=float))
    if np.any(img < 0):
        raise ValueError("PGM images must be nonnegative")
    peak = img.max()
    if peak <= 0:
        raise ValueError("PGM images must carry some mass")
    q = np.rint(img * (PGM_MAXVAL / peak)).astype(int)
    h, w = img.shape
    body = "\n".join(" ".join(str(v) for v in row) for row in q)
    Path(path).write_text(f"P2\n{w} {h}\n{PGM_MAXVAL}\n{body}\n", encoding="utf-8")
