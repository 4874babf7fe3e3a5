"""Dense float64 matrices, seeded random sampling, and matrix serialization.

A "matrix" throughout this package is a 2-D, C-contiguous ``numpy.ndarray``
of float64. numpy supplies the storage and arithmetic; the naive scalar
oracles that define correctness live in the test suite.

Serialization uses ``repr``-based float formatting, which round-trips
float64 values exactly, so saved matrices reload bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import NonFiniteError, ShapeError


def make_rng(seed: int) -> np.random.Generator:
    """Seeded 64-bit generator (numpy PCG64). Same seed, same stream."""
    return np.random.default_rng(seed)


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def ensure_finite(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape and finiteness checks."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul result")


def gaussian_sample(rng: np.random.Generator, rows: int, cols: int,
                    mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """i.i.d. normal samples, deterministic given the generator state."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    return mean + std * rng.standard_normal((rows, cols))


def row_l2_norms(m) -> np.ndarray:
    """Euclidean norm of every row, returned as a column vector."""
    m = as_matrix(m)
    return np.sqrt(np.sum(m * m, axis=1, keepdims=True))


def matrix_hash(m: np.ndarray) -> str:
    """SHA-256 over shape and raw bytes; detects any byte-level change."""
    m = np.ascontiguousarray(m)
    h = hashlib.sha256()
    h.update(repr(m.shape).encode())
    h.update(m.tobytes())
    return h.hexdigest()


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file and rename, so failures leave no partial file."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def matrix_to_json_obj(m: np.ndarray) -> dict:
    m = as_matrix(m)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "data": [float(x) for x in m.ravel(order="C")]}


def matrix_from_json_obj(obj: dict) -> np.ndarray:
    rows, cols = int(obj["rows"]), int(obj["cols"])
    data = np.asarray(obj["data"], dtype=np.float64)
    if data.size != rows * cols:
        raise ShapeError(f"JSON matrix claims {rows}x{cols} but carries {data.size} values")
    return data.reshape(rows, cols)


def save_matrix_json(m: np.ndarray, path: str) -> None:
    atomic_write_text(path, json.dumps(matrix_to_json_obj(m)))


def load_matrix_json(path: str) -> np.ndarray:
    with open(path) as f:
        return matrix_from_json_obj(json.load(f))


def save_matrix_csv(m: np.ndarray, path: str) -> None:
    """One matrix row per line, '.' decimal separator, no header."""
    m = as_matrix(m)
    lines = [",".join(repr(float(x)) for x in row) for row in m]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_matrix_csv(path: str) -> np.ndarray:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    if not rows:
        return np.zeros((0, 0))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ShapeError(f"ragged CSV matrix: row widths {sorted(widths)}")
    return np.asarray(rows, dtype=np.float64)
