"""Generalized (distributed) key-value memory.

The key memory is the superposition ``sum_i L[:, c(i)] K_i^T`` of outer
products between class codes and support vectors. Its shape is ``r x d``
whatever the number of stored support vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .codebook import LabelCodebook
from .episodes import SupportSet
from .errors import DimensionError, ParseError, StateError, ValidationError
from .local import ClassScores, Precision, quantize


@dataclass(frozen=True, eq=False)
class DistributedKeyMemory:
    matrix: np.ndarray
    codebook: LabelCodebook
    precision: Precision = Precision.REAL
    count: int = 0

    @property
    def r(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def empty_distributed(codebook: LabelCodebook, d: int) -> DistributedKeyMemory:
    return DistributedKeyMemory(matrix=_frozen(np.zeros((codebook.r, d))), codebook=codebook)


def build_distributed(support: SupportSet, codebook: LabelCodebook) -> DistributedKeyMemory:
    """Superpose all support vectors in one shot; the result is real-valued."""
    c = support.class_index
    if c.min() < 0 or c.max() >= codebook.m:
        raise ValidationError(
            f"class index out of range for a codebook with m={codebook.m}")
    if support.m != codebook.m:
        raise ValidationError(f"support set has m={support.m}, codebook has m={codebook.m}")
    # sum_i L_{c(i)} K_i^T == L[:, c] @ K
    matrix = codebook.matrix[:, c] @ support.vectors
    return DistributedKeyMemory(matrix=_frozen(matrix), codebook=codebook, count=len(support))


def update(memory: DistributedKeyMemory, support_vector, cls: int) -> DistributedKeyMemory:
    """Add one rank-1 term ``L[:, cls] k^T`` and return the new memory."""
    if memory.precision is not Precision.REAL:
        raise StateError("quantized memories are frozen; update before bipolarizing")
    k = np.asarray(support_vector, dtype=np.float64)
    if k.shape != (memory.d,):
        raise DimensionError(f"support vector has shape {k.shape}, memory expects ({memory.d},)")
    if not 0 <= cls < memory.codebook.m:
        raise ValidationError(f"class {cls} outside 0..{memory.codebook.m - 1}")
    matrix = memory.matrix + np.outer(memory.codebook.code(cls), k)
    return replace(memory, matrix=_frozen(matrix), count=memory.count + 1)


def bipolarize(memory: DistributedKeyMemory,
               target: Precision | str = Precision.BIPOLAR) -> DistributedKeyMemory:
    target = Precision(target)
    if memory.precision is not Precision.REAL:
        raise StateError(f"memory is already quantized ({memory.precision.value})")
    if target is Precision.REAL:
        raise ValidationError("bipolarize target must be bipolar or binary")
    return replace(memory, matrix=_frozen(quantize(memory.matrix, target)), precision=target)


def center_binary(gamma, precision: Precision) -> np.ndarray:
    """Remove the common-mode offset that {0, 1} keys and queries add to every entry of gamma.

    Binary dot products carry a per-row offset of roughly ``d/4``; the code
    readout would turn it into a class-dependent bias ``offset * L_j^T 1``.
    Other precisions pass through unchanged.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if Precision(precision) is Precision.BINARY:
        return gamma - gamma.mean(axis=-1, keepdims=True)
    return gamma


def scores_from_gamma(codebook: LabelCodebook, gamma,
                      precision: Precision | str = Precision.REAL) -> ClassScores:
    """Class scores ``L^T gamma`` for one gamma vector or a batch of rows."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape[-1] != codebook.r:
        raise DimensionError(f"gamma has length {gamma.shape[-1]}, codebook has r={codebook.r}")
    return ClassScores.from_scores(center_binary(gamma, precision) @ codebook.matrix)


def infer_distributed(memory: DistributedKeyMemory, codebook: LabelCodebook | None = None,
                      query=None) -> ClassScores:
    """Score a query (or a batch, one query per row); identity sharpening only."""
    codebook = memory.codebook if codebook is None else codebook
    query = np.asarray(query, dtype=np.float64)
    if query.shape[-1] != memory.d:
        raise DimensionError(f"query has length {query.shape[-1]}, memory expects d={memory.d}")
    if codebook.r != memory.r:
        raise DimensionError(f"codebook has r={codebook.r}, memory has r={memory.r}")
    return scores_from_gamma(codebook, query @ memory.matrix.T, memory.precision)


def save_memory(memory: DistributedKeyMemory, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "d", "precision"])
        writer.writerow([memory.r, memory.d, memory.precision.value])
        for row in memory.matrix:
            writer.writerow([repr(float(x)) for x in row])


def load_memory_matrix(path: str | Path) -> tuple[np.ndarray, Precision]:
    """Read back a matrix written by :func:`save_memory` (the codebook is stored separately)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != ["r", "d", "precision"]:
        raise ParseError(f"{path}: missing 'r,d,precision' header")
    try:
        r, d = int(rows[1][0]), int(rows[1][1])
        precision = Precision(rows[1][2])
        matrix = np.array([[float(x) for x in row] for row in rows[2:]], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if matrix.shape != (r, d):
        raise ParseError(f"{path}: header says {r}x{d}, body is {matrix.shape}")
    return matrix, precision
