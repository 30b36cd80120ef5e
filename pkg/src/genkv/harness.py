"""Monte-Carlo experiment harness.

Every episode is a pure function of ``(spec, episode_seed)``. Sweeps draw one
list of episode seeds from the master seed and reuse it at every axis point,
so points are compared on identical episodes.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codebook import CodebookMode, auto_mode, make_codebook
from .distributed import bipolarize, build_distributed, center_binary
from .episodes import (DEFAULT_QUERIES_PER_CLASS, EmbeddingBank, GeneratorParams,
                       generate_bank, sample_episode)
from .errors import ParameterError, StateError, ValidationError
from .local import Precision, build_local, quantize
from .noise import (NoiseKind, NoiseSpec, PcmParams, add_white_noise, default_pcm_params,
                    map_to_devices)

log = logging.getLogger(__name__)

ISO_TOLERANCE = 0.0025

# Episode counts used for the published figures.
EPISODES_ACCURACY_VS_R = 1000
EPISODES_ACCURACY_VS_SNR = 100
EPISODES_ACCURACY_VS_PCM = 1000
EPISODES_ISO_R = 1000
EPISODES_SCALING_N = 3000

DEFAULT_SNR_R_VALUES = (50, 100, 150, 200, 400)

_STREAM_EPISODE, _STREAM_CODEBOOK, _STREAM_NOISE = 0, 1, 2


@dataclass(frozen=True)
class ExperimentSpec:
    """One experimental condition; ``r=None`` selects the original local memory."""

    m: int = 20
    n: int = 5
    r: int | None = None
    precision: Precision = Precision.REAL
    codebook_mode: str = "auto"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    episodes: int = 1000
    q_per_class: int = DEFAULT_QUERIES_PER_CLASS
    master_seed: int = 0
    quantize_query: bool = True
    bank: EmbeddingBank | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision(self.precision))
        if self.episodes < 1:
            raise ValidationError("episodes must be >= 1")
        if self.m < 1 or self.n < 1:
            raise ValidationError(f"invalid problem size m={self.m}, n={self.n}")
        if self.r is not None:
            if self.r < 1:
                raise ValidationError(f"r must be positive, got {self.r}")
            if self.codebook_mode != "auto":
                # Fail early on incompatible (r, m, mode).
                make_codebook(self.r, self.m, self.codebook_mode, seed=0)

    @property
    def is_local(self) -> bool:
        return self.r is None

    @property
    def memory_kind(self) -> str:
        return "local" if self.r is None else f"distributed(r={self.r})"

    def resolved_mode(self) -> CodebookMode:
        if self.codebook_mode == "auto":
            return auto_mode(self.r, self.m)
        return CodebookMode(self.codebook_mode)


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    predictions: np.ndarray
    labels: np.ndarray

    @property
    def correct(self) -> int:
        return int(np.count_nonzero(self.predictions == self.labels))

    @property
    def total(self) -> int:
        return int(self.labels.size)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


def episode_seeds(master_seed: int, count: int) -> list[int]:
    """Per-episode seeds; the i-th seed depends only on ``(master_seed, i)``."""
    return [int(np.random.SeedSequence([master_seed, i]).generate_state(1, np.uint64)[0])
            for i in range(count)]


def _stream(episode_seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([episode_seed, tag, *extra]))


def default_bank() -> EmbeddingBank:
    return generate_bank(GeneratorParams())


def _require_bank(spec: ExperimentSpec) -> EmbeddingBank:
    if spec.bank is None:
        raise ValidationError("experiment spec has no embedding bank")
    return spec.bank


def run_episode(spec: ExperimentSpec, episode_seed: int) -> EpisodeResult:
    """Sample one episode, build the memory, apply the noise channel, classify all queries."""
    bank = _require_bank(spec)
    support, queries = sample_episode(bank, spec.m, spec.n, spec.q_per_class,
                                      _stream(episode_seed, _STREAM_EPISODE))
    q = queries.vectors
    if spec.quantize_query:
        q = quantize(q, spec.precision)

    if spec.is_local:
        memory = build_local(support, spec.precision)
        weights = memory.keys.T          # mn x d
        readout = memory.values.T        # mn x m
        precision = Precision.REAL       # one-hot readout needs no centering
    else:
        codebook = make_codebook(spec.r, spec.m, spec.resolved_mode(),
                                 seed=int(_stream(episode_seed, _STREAM_CODEBOOK)
                                          .integers(0, 2**63 - 1)))
        memory = build_distributed(support, codebook)
        if spec.precision is not Precision.REAL:
            memory = bipolarize(memory, spec.precision)
        weights = memory.matrix          # r x d
        readout = codebook.matrix        # r x m
        precision = memory.precision

    noise = spec.noise
    noise_rng = _stream(episode_seed, _STREAM_NOISE, noise.seed)
    if noise.kind is NoiseKind.PCM:
        weights = map_to_devices(weights, spec.precision, noise.pcm, noise_rng)
    gamma = q @ weights.T
    if noise.kind is NoiseKind.WHITE:
        gamma = add_white_noise(gamma, gamma, noise.snr_db, noise_rng)
    scores = center_binary(gamma, precision) @ readout
    return EpisodeResult(predictions=np.argmax(scores, axis=1), labels=queries.labels)


# Worker processes receive the bank once through the initializer instead of
# with every task.
_WORKER_BANK: EmbeddingBank | None = None


def _install_bank(bank: EmbeddingBank) -> None:
    global _WORKER_BANK
    _WORKER_BANK = bank


def _worker_accuracy(args: tuple[ExperimentSpec, int]) -> float:
    spec, seed = args
    return run_episode(replace(spec, bank=_WORKER_BANK), seed).accuracy


def episode_accuracies(spec: ExperimentSpec, seeds: Sequence[int], workers: int = 1) -> np.ndarray:
    """Accuracy of each episode, in seed order regardless of ``workers``."""
    if workers <= 1 or len(seeds) < 2:
        return np.array([run_episode(spec, s).accuracy for s in seeds])
    bank = _require_bank(spec)
    light = replace(spec, bank=None)
    chunk = max(1, len(seeds) // (4 * workers))
    with ProcessPoolExecutor(workers, initializer=_install_bank, initargs=(bank,)) as pool:
        return np.array(list(pool.map(_worker_accuracy, [(light, s) for s in seeds],
                                      chunksize=chunk)))


@dataclass(frozen=True)
class SweepPoint:
    series: str
    axis: float
    mean_accuracy: float
    std_error: float
    episodes: int


def summarize(series: str, axis: float, accuracies: np.ndarray) -> SweepPoint:
    n = accuracies.size
    mean = float(np.mean(accuracies))
    sd = float(np.std(accuracies, ddof=1)) if n > 1 else 0.0
    return SweepPoint(series=series, axis=float(axis), mean_accuracy=mean,
                      std_error=sd / math.sqrt(n), episodes=n)


@dataclass
class SweepResult:
    axis_name: str
    points: list[SweepPoint]
    metadata: dict = field(default_factory=dict)

    def series(self, name: str) -> list[SweepPoint]:
        return [p for p in self.points if p.series == name]

    def point(self, series: str, axis: float) -> SweepPoint:
        for p in self.points:
            if p.series == series and p.axis == axis:
                return p
        raise KeyError((series, axis))

    def to_csv(self) -> str:
        lines = ["series,axis,mean_accuracy,std_error,episodes"]
        for p in self.points:
            lines.append(f"{p.series},{p.axis!r},{p.mean_accuracy!r},{p.std_error!r},{p.episodes}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"axis_name": self.axis_name, "metadata": self.metadata,
                           "points": [asdict(p) for p in self.points]}, indent=2)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        text = self.to_json() if path.suffix.lower() == ".json" else self.to_csv()
        path.write_text(text, encoding="utf-8")


def _seeds_for(template: ExperimentSpec, episodes: int | None) -> list[int]:
    return episode_seeds(template.master_seed, episodes or template.episodes)


def _series_name(r: int | None) -> str:
    return "local" if r is None else f"r={r}"


def sweep_r(template: ExperimentSpec, r_values: Iterable[int], episodes: int | None = None,
            include_local: bool = True, workers: int = 1) -> SweepResult:
    """Noise-free-or-not accuracy against ``r``; the local baseline is reported at ``axis = mn``."""
    seeds = _seeds_for(template, episodes)
    points = []
    if include_local:
        acc = episode_accuracies(replace(template, r=None), seeds, workers)
        points.append(summarize("local", template.m * template.n, acc))
    for r in r_values:
        if r < 1:
            raise ValidationError(f"r must be positive, got {r}")
        acc = episode_accuracies(replace(template, r=int(r)), seeds, workers)
        points.append(summarize("distributed", r, acc))
        log.info("sweep_r r=%d accuracy=%.4f", r, points[-1].mean_accuracy)
    return SweepResult("r", points, {"m": template.m, "n": template.n,
                                     "precision": template.precision.value})


def sweep_snr(template: ExperimentSpec, snr_values: Iterable[float],
              r_values: Iterable[int] = DEFAULT_SNR_R_VALUES, episodes: int | None = None,
              include_local: bool = True, workers: int = 1) -> SweepResult:
    seeds = _seeds_for(template, episodes)
    memories = ([None] if include_local else []) + [int(r) for r in r_values]
    points = []
    for snr in snr_values:
        for r in memories:
            spec = replace(template, r=r, noise=NoiseSpec.white(snr, seed=template.noise.seed))
            points.append(summarize(_series_name(r), snr, episode_accuracies(spec, seeds, workers)))
        log.info("sweep_snr snr=%g done", snr)
    return SweepResult("snr_db", points, {"m": template.m, "n": template.n,
                                          "precision": template.precision.value})


def _pcm_params(template: ExperimentSpec) -> PcmParams:
    if template.noise.kind is NoiseKind.PCM:
        return template.noise.pcm
    return default_pcm_params()


def _with_variation(template: ExperimentSpec, variation: float, r: int | None) -> ExperimentSpec:
    if not variation >= 0:
        raise ParameterError(f"conductance variation must be >= 0, got {variation}")
    params = replace(_pcm_params(template), g_prog_rel_sd=float(variation))
    return replace(template, r=r, noise=NoiseSpec.device(params, seed=template.noise.seed))


def _require_quantized(template: ExperimentSpec) -> None:
    if template.precision is Precision.REAL:
        raise StateError("PCM experiments need a bipolar or binary memory")


def sweep_pcm(template: ExperimentSpec, variations: Iterable[float], r_values: Iterable[int],
              episodes: int | None = None, include_local: bool = True,
              workers: int = 1) -> SweepResult:
    """Accuracy against the relative programming-noise SD of the devices."""
    _require_quantized(template)
    seeds = _seeds_for(template, episodes)
    memories = ([None] if include_local else []) + [int(r) for r in r_values]
    points = []
    for variation in variations:
        for r in memories:
            spec = _with_variation(template, variation, r)
            points.append(summarize(_series_name(r), variation,
                                    episode_accuracies(spec, seeds, workers)))
        log.info("sweep_pcm variation=%g done", variation)
    return SweepResult("variation", points, {"m": template.m, "n": template.n,
                                             "precision": template.precision.value})


def baseline_accuracy(template: ExperimentSpec, episodes: int | None = None,
                      workers: int = 1) -> float:
    """Noise-free accuracy of the original memory at the template's precision."""
    spec = replace(template, r=None, noise=NoiseSpec.none())
    return float(np.mean(episode_accuracies(spec, _seeds_for(template, episodes), workers)))


@dataclass(frozen=True)
class IsoResult:
    r: int | None
    threshold: float
    evaluated: dict[int, float]

    @property
    def reached(self) -> bool:
        return self.r is not None


def find_iso_r(template: ExperimentSpec, variation: float, baseline: float,
               episodes: int | None = None, r_max: int = 4096,
               tolerance: float = ISO_TOLERANCE, workers: int = 1) -> IsoResult:
    """Smallest ``r`` whose device-mapped accuracy reaches ``baseline - tolerance``.

    Candidates are bracketed by doubling from ``r = 1`` and refined by
    bisection; every candidate is scored on the same episode seeds.
    """
    _require_quantized(template)
    if not 0 < baseline <= 1:
        raise ParameterError(f"baseline accuracy must lie in (0, 1], got {baseline}")
    if r_max < 1:
        raise ParameterError(f"r_max must be positive, got {r_max}")
    seeds = _seeds_for(template, episodes)
    threshold = baseline - tolerance
    evaluated: dict[int, float] = {}

    def passes(r: int) -> bool:
        if r not in evaluated:
            spec = _with_variation(template, variation, r)
            evaluated[r] = float(np.mean(episode_accuracies(spec, seeds, workers)))
            log.debug("iso-r variation=%g r=%d accuracy=%.4f", variation, r, evaluated[r])
        return evaluated[r] >= threshold

    lo, hi = 0, 1
    while not passes(hi):
        if hi >= r_max:
            return IsoResult(None, threshold, evaluated)
        lo, hi = hi, min(2 * hi, r_max)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return IsoResult(hi, threshold, evaluated)


@dataclass(frozen=True)
class IsoRow:
    m: int
    n: int
    variation: float
    baseline: float
    r: int | None


def iso_r_table(template: ExperimentSpec, variations: Iterable[float],
                episodes: int | None = None, r_max: int = 4096,
                workers: int = 1) -> list[IsoRow]:
    """Minimal ``r`` per variation for one problem size, against its own noise-free baseline."""
    baseline = baseline_accuracy(template, episodes, workers)
    rows = []
    for variation in variations:
        res = find_iso_r(template, variation, baseline, episodes, r_max, workers=workers)
        rows.append(IsoRow(template.m, template.n, float(variation), baseline, res.r))
        log.info("iso-r m=%d n=%d variation=%g -> %s", template.m, template.n, variation,
                 res.r if res.reached else "unreached")
    return rows


def scaling_study(template: ExperimentSpec, sizes: Iterable[tuple[int, int]],
                  variations: Iterable[float], episodes: int | None = None,
                  r_max: int = 4096, workers: int = 1) -> list[IsoRow]:
    """Iso-accuracy ``r`` for each ``(m, n)`` problem size and variation."""
    variations = list(variations)
    rows = []
    for m, n in sizes:
        rows.extend(iso_r_table(replace(template, m=int(m), n=int(n)), variations,
                                episodes, r_max, workers))
    for variation in variations:
        if not trend_non_decreasing(rows, variation):
            log.warning("iso-r not non-decreasing in mn at variation %g", variation)
    return rows


def trend_non_decreasing(rows: Sequence[IsoRow], variation: float) -> bool:
    """True when iso-r never drops as ``mn`` grows at this variation (unreached counts as infinite)."""
    picked = sorted((row.m * row.n, math.inf if row.r is None else row.r)
                    for row in rows if row.variation == variation)
    return all(a[1] <= b[1] for a, b in zip(picked, picked[1:]) if a[0] < b[0])


def iso_rows_to_csv(rows: Sequence[IsoRow]) -> str:
    lines = ["m,n,variation,baseline,r"]
    for row in rows:
        r = "unreached" if row.r is None else str(row.r)
        lines.append(f"{row.m},{row.n},{row.variation!r},{row.baseline!r},{r}")
    return "\n".join(lines) + "\n"
