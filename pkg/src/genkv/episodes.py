"""Embedding banks and m-way n-shot episode sampling.

A bank is a flat table of unit-norm embedding vectors with integer class ids.
It stands in for the output of a trained controller network: either a
synthetic bank from :func:`generate_bank` or vectors imported from CSV.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, ParseError, ValidationError

DEFAULT_QUERIES_PER_CLASS = 15


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("cannot normalize a zero vector")
    return vectors / norms


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Support vectors of one episode, one row per sample.

    ``class_index`` holds 0-based class labels; every class in ``range(m)``
    appears exactly ``n`` times.
    """

    vectors: np.ndarray
    class_index: np.ndarray
    m: int
    n: int

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise ValidationError("support set must be a non-empty 2-D array (mn x d)")
        if self.class_index.shape != (self.vectors.shape[0],):
            raise ValidationError(
                f"{self.vectors.shape[0]} support vectors but {self.class_index.shape[0]} labels")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("support vectors contain non-finite entries")
        counts = np.bincount(self.class_index, minlength=self.m) if self.class_index.min() >= 0 else None
        if counts is None or counts.shape[0] != self.m or np.any(counts != self.n):
            raise ValidationError(f"class labels must cover 0..{self.m - 1} exactly {self.n} times each")

    @classmethod
    def from_vectors(cls, vectors, class_index, normalize: bool = True) -> "SupportSet":
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        class_index = np.asarray(class_index, dtype=np.int64)
        if class_index.size == 0:
            raise ValidationError("support set is empty")
        if class_index.min() < 0:
            raise ValidationError("class labels must be non-negative")
        m = int(class_index.max()) + 1
        n = class_index.size // m
        if normalize:
            vectors = normalize_rows(vectors)
        return cls(vectors=vectors, class_index=class_index, m=m, n=n)

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True, eq=False)
class QuerySet:
    vectors: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True, eq=False)
class EmbeddingBank:
    """Unit-norm vectors (``N x d``) with positive integer class ids."""

    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.labels.shape != (self.vectors.shape[0],):
            raise ValidationError("bank vectors and labels disagree in length")
        # Grouping is cached once; sampling then only touches index arrays.
        classes, inverse = np.unique(self.labels, return_inverse=True)
        groups = [np.flatnonzero(inverse == k) for k in range(classes.size)]
        object.__setattr__(self, "_classes", classes)
        object.__setattr__(self, "_groups", groups)

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return self._classes

    @property
    def num_classes(self) -> int:
        return self._classes.size

    def class_members(self, k: int) -> np.ndarray:
        """Row indices of the ``k``-th class (position in :attr:`classes`)."""
        return self._groups[k]

    def min_class_size(self) -> int:
        return min(g.size for g in self._groups)


class PrototypeMode(str, enum.Enum):
    GAUSSIAN_UNIT = "gaussian"
    BIPOLAR_RANDOM = "bipolar"


# Calibrated so that the noiseless real-valued original KV memory scores about
# 97% on 20-way 5-shot episodes at d=512.
DEFAULT_WITHIN_CLASS_SD = 0.04
DEFAULT_SPREAD_TAIL = 1.2


@dataclass(frozen=True)
class GeneratorParams:
    d: int = 512
    num_classes: int = 659
    samples_per_class: int = 20
    within_class_sd: float = DEFAULT_WITHIN_CLASS_SD
    prototype_mode: PrototypeMode = PrototypeMode.GAUSSIAN_UNIT
    seed: int = 0
    spread_tail: float = DEFAULT_SPREAD_TAIL

    def __post_init__(self):
        if self.d < 1 or self.num_classes < 1 or self.samples_per_class < 1:
            raise ValidationError("d, num_classes and samples_per_class must be positive")
        if not self.within_class_sd >= 0:
            raise ValidationError(f"within_class_sd must be >= 0, got {self.within_class_sd}")
        if not self.spread_tail >= 0:
            raise ValidationError(f"spread_tail must be >= 0, got {self.spread_tail}")


def generate_bank(params: GeneratorParams) -> EmbeddingBank:
    """Synthetic bank with quasi-orthogonal class prototypes.

    Sample ``k`` is ``normalize(prototype + sd_k * N(0, I))`` with a per-sample
    spread ``sd_k = within_class_sd * LogNormal(0, spread_tail**2)``. The heavy
    tail yields a few badly drawn samples among many clean ones; with
    ``spread_tail=0`` every sample shares the same spread.
    """
    rng = np.random.default_rng(params.seed)
    d, c, s = params.d, params.num_classes, params.samples_per_class
    if PrototypeMode(params.prototype_mode) is PrototypeMode.GAUSSIAN_UNIT:
        prototypes = normalize_rows(rng.standard_normal((c, d)))
    else:
        prototypes = rng.choice([-1.0, 1.0], size=(c, d)) / math.sqrt(d)
    spread = params.within_class_sd * rng.lognormal(0.0, params.spread_tail, size=(c, s, 1))
    noise = rng.standard_normal((c, s, d)) * spread
    samples = prototypes[:, None, :] + noise
    if params.within_class_sd > 0:
        samples = normalize_rows(samples)
    vectors = samples.reshape(c * s, d)
    labels = np.repeat(np.arange(1, c + 1), s)
    return EmbeddingBank(vectors=vectors, labels=labels)


def sample_episode(bank: EmbeddingBank, m: int, n: int, q_per_class: int,
                   rng: np.random.Generator) -> tuple[SupportSet, QuerySet]:
    """Draw ``m`` classes and, per class, ``n`` support and ``q_per_class`` query samples.

    Support and query samples never overlap. Classes are relabelled ``0..m-1``
    in the order drawn; support rows are grouped class by class.
    """
    if m < 1 or n < 1 or q_per_class < 0:
        raise ValidationError(f"invalid episode shape m={m}, n={n}, q={q_per_class}")
    if m > bank.num_classes:
        raise CapacityError(f"{m}-way episode requested from a bank of {bank.num_classes} classes")
    need = n + q_per_class
    if need > bank.min_class_size():
        raise CapacityError(
            f"{n}+{q_per_class} samples per class requested, smallest bank class has "
            f"{bank.min_class_size()}")
    chosen = rng.choice(bank.num_classes, size=m, replace=False)
    support_rows, query_rows = [], []
    for k in chosen:
        members = bank.class_members(int(k))
        picked = members[rng.permutation(members.size)[:need]]
        support_rows.append(picked[:n])
        query_rows.append(picked[n:])
    support_idx = np.concatenate(support_rows)
    query_idx = np.concatenate(query_rows)
    support = SupportSet(vectors=bank.vectors[support_idx],
                         class_index=np.repeat(np.arange(m), n), m=m, n=n)
    queries = QuerySet(vectors=bank.vectors[query_idx],
                       labels=np.repeat(np.arange(m), q_per_class))
    return support, queries


def export_bank(bank: EmbeddingBank, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for label, vec in zip(bank.labels, bank.vectors):
            writer.writerow([int(label), *(repr(float(x)) for x in vec)])


def import_bank(path: str | Path, format: str = "csv") -> EmbeddingBank:
    """Read a bank from rows ``class_id,v1,...,vd`` and unit-normalize each vector."""
    if format.lower() != "csv":
        raise ParseError(f"unsupported bank format {format!r}")
    labels, rows = [], []
    d = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if d is None:
                d = len(row) - 1
                if d < 1:
                    raise ParseError(f"{path}: row {lineno} has no vector entries")
            elif len(row) - 1 != d:
                raise ParseError(f"{path}: row {lineno} has {len(row) - 1} entries, expected {d}")
            try:
                label = int(row[0])
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: row {lineno}: {exc}") from exc
            if label < 1:
                raise ParseError(f"{path}: row {lineno}: class id must be a positive integer")
            if not all(math.isfinite(v) for v in values):
                raise ParseError(f"{path}: row {lineno}: non-finite entry")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    vectors = np.asarray(rows, dtype=np.float64)
    try:
        vectors = normalize_rows(vectors)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return EmbeddingBank(vectors=vectors, labels=np.asarray(labels, dtype=np.int64))


def mean_between_class_cosine(bank: EmbeddingBank, max_classes: int = 200) -> float:
    """Mean absolute cosine between class centroids (first ``max_classes`` classes)."""
    k = min(bank.num_classes, max_classes)
    if k < 2:
        return 0.0
    centroids = normalize_rows(np.stack([bank.vectors[bank.class_members(i)].mean(axis=0)
                                         for i in range(k)]))
    gram = np.abs(centroids @ centroids.T)
    return float(gram[np.triu_indices(k, 1)].mean())
