"""Delimited-text matrix fixtures for reproducible harness runs.

Format: a header line ``rows cols`` followed by the entries in row-major
order, one row per line, space-separated. Values are written with
shortest-round-trip formatting, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from .linalg import as_matrix


def format_double(x: float) -> str:
    """Shortest decimal string that parses back to exactly the same double."""
    return repr(float(x))


def save_matrix(path: str | os.PathLike, M) -> None:
    M = as_matrix(M, "M")
    rows, cols = M.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{rows} {cols}\n")
        for row in M:
            fh.write(" ".join(format_double(v) for v in row) + "\n")


def load_matrix(path: str | os.PathLike) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad header, expected 'rows cols'")
        rows, cols = int(header[0]), int(header[1])
        values = fh.read().split()
    if len(values) != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, got {len(values)}")
    return np.array([float(v) for v in values], dtype=np.float64).reshape(rows, cols)
