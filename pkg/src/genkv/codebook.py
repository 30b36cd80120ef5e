"""Class-label codebooks used as the value memory of the generalized KV memory.

Column ``j`` of a codebook matrix is the ``r``-dimensional code of class ``j``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParseError


class CodebookMode(str, enum.Enum):
    ORTHOGONAL = "orthogonal"
    WHITENED = "whitened"
    WALSH = "walsh"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, eq=False)
class LabelCodebook:
    matrix: np.ndarray
    mode: CodebookMode
    seed: int

    @property
    def r(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    def code(self, cls: int) -> np.ndarray:
        return self.matrix[:, cls]


def auto_mode(r: int, m: int) -> CodebookMode:
    """Orthogonal codes when they exist (``r >= m``), whitened codes otherwise."""
    return CodebookMode.ORTHOGONAL if r >= m else CodebookMode.WHITENED


def _is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def sylvester_hadamard(order: int) -> np.ndarray:
    """Hadamard matrix of a power-of-two ``order`` by Sylvester doubling."""
    if not _is_power_of_two(order):
        raise DimensionError(f"Hadamard order must be a power of two, got {order}")
    h = np.ones((1, 1))
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def _orthogonal(r: int, m: int, rng: np.random.Generator) -> np.ndarray:
    q, rr = np.linalg.qr(rng.standard_normal((r, m)))
    # Unique factorization: nonnegative diagonal of the triangular factor.
    signs = np.where(np.diag(rr) < 0, -1.0, 1.0)
    return q * signs


def whiten_rows(raw: np.ndarray) -> np.ndarray:
    """Return ``(M M^T)^{-1/2} M``, a matrix with orthonormal rows (needs full row rank)."""
    # Equals U V^T for the thin SVD M = U S V^T.
    u, _, vt = np.linalg.svd(raw, full_matrices=False)
    return u @ vt


def _whitened(r: int, m: int, rng: np.random.Generator) -> np.ndarray:
    rows_orthonormal = whiten_rows(rng.standard_normal((r, m)))
    return rows_orthonormal / np.linalg.norm(rows_orthonormal, axis=0)


def _gaussian(r: int, m: int, rng: np.random.Generator) -> np.ndarray:
    raw = rng.standard_normal((r, m))
    return raw / np.linalg.norm(raw, axis=0)


def make_codebook(r: int, m: int, mode: CodebookMode | str = CodebookMode.ORTHOGONAL,
                  seed: int = 0) -> LabelCodebook:
    """Build an ``r x m`` label codebook.

    Parameters
    ----------
    r : int
        Dimensionality of each class code (the redundancy knob).
    m : int
        Number of classes.
    mode : CodebookMode or str
        ``orthogonal`` needs ``r >= m``; ``whitened`` needs ``r < m``;
        ``walsh`` needs a power-of-two ``r >= m``; ``gaussian`` has no constraint.
    seed : int
        Seed of the generator; ignored by ``walsh``.

    Raises
    ------
    DimensionError
        If ``(r, m, mode)`` is incompatible.
    """
    mode = CodebookMode(mode)
    if r < 1 or m < 1:
        raise DimensionError(f"r and m must be positive, got r={r}, m={m}")
    if mode is CodebookMode.ORTHOGONAL and r < m:
        raise DimensionError(f"orthogonal codebook requires r >= m, got r={r} < m={m}")
    if mode is CodebookMode.WHITENED and r >= m:
        raise DimensionError(f"whitened codebook requires r < m, got r={r} >= m={m}")
    if mode is CodebookMode.WALSH:
        if not _is_power_of_two(r):
            raise DimensionError(f"walsh codebook requires r to be a power of two, got r={r}")
        if r < m:
            raise DimensionError(f"walsh codebook requires r >= m, got r={r} < m={m}")

    rng = np.random.default_rng(seed)
    if mode is CodebookMode.ORTHOGONAL:
        matrix = _orthogonal(r, m, rng)
    elif mode is CodebookMode.WHITENED:
        matrix = _whitened(r, m, rng)
    elif mode is CodebookMode.WALSH:
        matrix = sylvester_hadamard(r)[:, :m] / np.sqrt(r)
    else:
        matrix = _gaussian(r, m, rng)
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    matrix.setflags(write=False)
    return LabelCodebook(matrix=matrix, mode=mode, seed=int(seed))


def crosstalk(codebook: LabelCodebook) -> float:
    """Largest absolute inner product between two distinct class codes."""
    mat = codebook.matrix
    # fsum keeps exact cancellations exact (Walsh codes give 0.0, not 1e-17).
    return max((abs(math.fsum(mat[:, j] * mat[:, k]))
                for j in range(codebook.m) for k in range(j + 1, codebook.m)), default=0.0)


def save_codebook(codebook: LabelCodebook, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "m", "mode", "seed"])
        writer.writerow([codebook.r, codebook.m, codebook.mode.value, codebook.seed])
        for row in codebook.matrix:
            writer.writerow([repr(float(x)) for x in row])


def load_codebook(path: str | Path) -> LabelCodebook:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != ["r", "m", "mode", "seed"]:
        raise ParseError(f"{path}: missing 'r,m,mode,seed' header")
    try:
        r, m = int(rows[1][0]), int(rows[1][1])
        mode = CodebookMode(rows[1][2])
        seed = int(rows[1][3])
        matrix = np.array([[float(x) for x in row] for row in rows[2:]], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if matrix.shape != (r, m):
        raise ParseError(f"{path}: header says {r}x{m}, body is {matrix.shape}")
    matrix.setflags(write=False)
    return LabelCodebook(matrix=matrix, mode=mode, seed=seed)
