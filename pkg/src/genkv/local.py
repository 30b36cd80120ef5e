"""Original (local) key-value memory.

The key memory stores every support vector as its own column and the value
memory holds the matching one-hot class labels. Inference is

    alpha = K^T q,  gamma = sharpen(alpha),  s = V gamma,  prediction = argmax s.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .episodes import SupportSet
from .errors import DimensionError, ParameterError, ValidationError


class Precision(str, enum.Enum):
    REAL = "real"
    BIPOLAR = "bipolar"
    BINARY = "binary"


def quantize(vector, precision: Precision | str) -> np.ndarray:
    """Map entries to the given precision; ``sign(0)`` is taken as ``+1``.

    >>> quantize([0.5, -0.2, 0.0], "bipolar")
    array([ 1., -1.,  1.])
    >>> quantize([0.5, -0.2, 0.0], "binary")
    array([1., 0., 1.])
    """
    precision = Precision(precision)
    x = np.asarray(vector, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("cannot quantize non-finite entries")
    if precision is Precision.REAL:
        return x
    bipolar = np.where(x >= 0, 1.0, -1.0)
    if precision is Precision.BIPOLAR:
        return bipolar
    return (bipolar + 1.0) / 2.0


@dataclass(frozen=True)
class Identity:
    def __call__(self, alpha: np.ndarray) -> np.ndarray:
        return np.asarray(alpha, dtype=np.float64)


@dataclass(frozen=True)
class Softmax:
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ParameterError(f"softmax temperature must be > 0, got {self.temperature}")

    def __call__(self, alpha: np.ndarray) -> np.ndarray:
        z = np.asarray(alpha, dtype=np.float64) / self.temperature
        z = np.exp(z - z.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)


IDENTITY = Identity()


def sharpen(alpha, fn=IDENTITY) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("similarities contain non-finite entries")
    return fn(alpha)


@dataclass(frozen=True, eq=False)
class ClassScores:
    """Per-class accumulated scores and the argmax prediction.

    Both fields gain a leading axis when a batch of queries is scored.
    Ties resolve to the lowest class index.
    """

    scores: np.ndarray
    predicted: int | np.ndarray

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "ClassScores":
        predicted = np.argmax(scores, axis=-1)
        if predicted.ndim == 0:
            predicted = int(predicted)
        return cls(scores=scores, predicted=predicted)


@dataclass(frozen=True, eq=False)
class LocalKVMemory:
    keys: np.ndarray          # d x mn, column i is support vector i
    values: np.ndarray        # m x mn one-hot
    class_index: np.ndarray   # length mn, 0-based
    precision: Precision

    @property
    def d(self) -> int:
        return self.keys.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> int:
        return self.keys.shape[1]


def one_hot_values(class_index: np.ndarray, m: int) -> np.ndarray:
    values = np.zeros((m, class_index.size))
    values[class_index, np.arange(class_index.size)] = 1.0
    return values


def build_local(support: SupportSet, precision: Precision | str = Precision.REAL) -> LocalKVMemory:
    precision = Precision(precision)
    if len(support) == 0:
        raise ValidationError("support set is empty")
    keys = np.ascontiguousarray(quantize(support.vectors, precision).T)
    values = one_hot_values(support.class_index, support.m)
    class_index = support.class_index.copy()
    for arr in (keys, values, class_index):
        arr.setflags(write=False)
    return LocalKVMemory(keys=keys, values=values, class_index=class_index, precision=precision)


def similarities(memory: LocalKVMemory, query) -> np.ndarray:
    """Dot products between the query (or each row of a query batch) and every key."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape[-1] != memory.d:
        raise DimensionError(f"query has length {query.shape[-1]}, memory expects d={memory.d}")
    return query @ memory.keys


def class_scores(memory: LocalKVMemory, gamma) -> ClassScores:
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape[-1] != memory.size:
        raise DimensionError(f"gamma has length {gamma.shape[-1]}, memory holds {memory.size} keys")
    return ClassScores.from_scores(gamma @ memory.values.T)


def infer_local(memory: LocalKVMemory, query, fn=IDENTITY) -> ClassScores:
    return class_scores(memory, sharpen(similarities(memory, query), fn))


def knn_oracle(support: SupportSet, query, fn=IDENTITY,
               precision: Precision | str = Precision.REAL) -> ClassScores:
    """Distance-weighted kNN vote with ``k = mn``, computed one neighbour at a time.

    Kept deliberately free of matrix products so it can cross-check the
    vectorised pipeline.
    """
    query = [float(x) for x in np.asarray(query, dtype=np.float64)]
    if len(query) != support.d:
        raise DimensionError(f"query has length {len(query)}, support has d={support.d}")
    neighbours = [quantize(v, precision).tolist() for v in support.vectors]

    weights = []
    for key in neighbours:
        dot = 0.0
        for a, b in zip(key, query):
            dot += a * b
        weights.append(dot)
    if isinstance(fn, Softmax):
        top = max(weights)
        exps = [math.exp((w - top) / fn.temperature) for w in weights]
        total = sum(exps)
        weights = [e / total for e in exps]
    elif not isinstance(fn, Identity):
        raise ParameterError(f"unsupported sharpening function {fn!r}")

    votes = [0.0] * support.m
    for weight, cls in zip(weights, support.class_index):
        votes[int(cls)] += weight
    best = 0
    for j in range(1, support.m):
        if votes[j] > votes[best]:
            best = j
    return ClassScores(scores=np.array(votes), predicted=best)
