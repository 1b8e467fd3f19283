"""Dense embedding primitives: cosine kernels, relation matrices, HU windowing,
and the binary embedding file format.

All similarity math runs in float64 regardless of how matrices are stored on
disk (float32), so geometric invariance tolerances are achievable.

File format (little-endian):
    magic "EMB1" | u32 rows | u32 dim | rows*dim float32 row-major | flag byte
Flag bit 0 marks a matrix whose rows are unit-norm.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, EmbeddingFormatError, ShapeMismatchError

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")
NORM_TOL = 1e-6


class EmbeddingMatrix:
    """An m x d matrix of real-valued row vectors.

    Values are held as float64 internally; the file format stores float32,
    so a matrix read from disk round-trips bit-exactly.
    """

    def __init__(self, data, normalized: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatchError(
                f"embedding matrix must be 2-D with at least one row and column, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise DegenerateInputError("embedding matrix contains non-finite values")
        if normalized:
            norms = np.linalg.norm(arr, axis=1)
            bad = np.nonzero(np.abs(norms - 1.0) > NORM_TOL)[0]
            if bad.size:
                raise DegenerateInputError(
                    f"normalized flag set but row {bad[0]} has L2 norm {norms[bad[0]]!r}"
                )
        arr.setflags(write=False)
        self.data = arr
        self.normalized = bool(normalized)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return self.normalized == other.normalized and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"EmbeddingMatrix(rows={self.rows}, dim={self.dim}, normalized={self.normalized})"


class RelationMatrix:
    """Pairwise cosine-similarity matrix over the rows of an embedding matrix."""

    def __init__(self, values):
        arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeMismatchError(f"relation matrix must be square, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DegenerateInputError("relation matrix contains non-finite values")
        if np.max(np.abs(arr - arr.T)) > NORM_TOL:
            raise DegenerateInputError("relation matrix is not symmetric")
        if np.max(np.abs(np.diag(arr) - 1.0)) > NORM_TOL:
            raise DegenerateInputError("relation matrix diagonal deviates from 1.0")
        if arr.min() < -1.0 - NORM_TOL or arr.max() > 1.0 + NORM_TOL:
            raise DegenerateInputError("relation matrix entries outside [-1, 1]")
        arr.setflags(write=False)
        self.values = arr

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HUWindow:
    """Half-open intensity window in Hounsfield units."""

    low: float = -1150.0
    high: float = 350.0

    def __post_init__(self):
        if not self.low < self.high:
            raise ShapeMismatchError(f"HU window requires low < high, got [{self.low}, {self.high}]")


def as_array(matrix) -> np.ndarray:
    """Accept an EmbeddingMatrix or anything array-like; return float64 rows."""
    if isinstance(matrix, EmbeddingMatrix):
        return matrix.data
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


def row_norms(arr: np.ndarray, what: str = "matrix") -> np.ndarray:
    """L2 norms per row; raises naming the first zero row."""
    norms = np.linalg.norm(arr, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(f"{what} row {zero[0]} has zero norm")
    return norms


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors of equal dimension."""
    va = np.asarray(a, dtype=np.float64).ravel()
    vb = np.asarray(b, dtype=np.float64).ravel()
    if va.shape != vb.shape:
        raise ShapeMismatchError(f"vectors have different dimensions: {va.size} vs {vb.size}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0:
        raise DegenerateInputError("first vector has zero norm")
    if nb == 0.0:
        raise DegenerateInputError("second vector has zero norm")
    return float(np.dot(va, vb) / (na * nb))


def relation_values(arr: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Raw pairwise-cosine computation shared by relation_matrix and the losses.

    Symmetrized, with an exact unit diagonal (cosine of a vector with itself).
    """
    norms = row_norms(arr, what)
    unit = arr / norms[:, None]
    values = unit @ unit.T
    values = (values + values.T) / 2.0
    np.fill_diagonal(values, 1.0)
    return values


def relation_matrix(matrix) -> RelationMatrix:
    """Pairwise cosine similarities between all rows of the input."""
    arr = as_array(matrix)
    return RelationMatrix(relation_values(arr, "embedding"))


def hu_normalize(value, window: HUWindow = HUWindow()):
    """Clamp to the window then map affinely onto [-1, 1].

    Accepts scalars or arrays; monotone, with window endpoints landing exactly
    on -1 and +1.
    """
    v = np.clip(np.asarray(value, dtype=np.float64), window.low, window.high)
    out = 2.0 * (v - window.low) / (window.high - window.low) - 1.0
    if np.isscalar(value) or np.ndim(value) == 0:
        return float(out)
    return out


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Serialize to the binary format. Values are stored as float32."""
    payload = matrix.data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, matrix.rows, matrix.dim))
        fh.write(payload)
        fh.write(bytes([1 if matrix.normalized else 0]))


def read_embeddings(path) -> EmbeddingMatrix:
    """Parse the binary format; errors carry the byte offset of the defect."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise EmbeddingFormatError(
            f"file too short for header: {len(blob)} bytes", offset=len(blob)
        )
    magic, rows, dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if rows < 1 or dim < 1:
        raise EmbeddingFormatError(f"header declares empty matrix {rows}x{dim}", offset=4)
    payload_len = rows * dim * 4
    expected = _HEADER.size + payload_len + 1
    if len(blob) < expected:
        raise EmbeddingFormatError(
            f"truncated payload: header declares {rows}x{dim} "
            f"({expected} bytes total) but file has {len(blob)}",
            offset=len(blob),
        )
    if len(blob) > expected:
        raise EmbeddingFormatError(
            f"{len(blob) - expected} trailing bytes after flag byte", offset=expected
        )
    flag = blob[expected - 1]
    if flag not in (0, 1):
        raise EmbeddingFormatError(f"invalid flag byte {flag:#x}", offset=expected - 1)
    data = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=_HEADER.size)
    data = data.astype(np.float64).reshape(rows, dim)
    return EmbeddingMatrix(data, normalized=bool(flag))
