"""Nonideality channels: white noise on similarity vectors and a PCM device model.

The PCM conductance of a device read ``t`` seconds after programming is

    G(t) = N(0, Gr^2) + G0 * N(1, Gp^2) * t ** (-nu * N(1, nu_sd^2))

with ``Gr`` an absolute read-noise SD and ``Gp``, ``nu_sd`` relative SDs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateSignalError, ParameterError, StateError, ValidationError
from .local import Precision


@dataclass(frozen=True)
class PcmParams:
    t: float = 20.0
    g0: float = 22.8e-6
    nu: float = 0.0598
    g_read_sd: float = 0.496e-6
    g_prog_rel_sd: float = 0.317
    nu_rel_sd: float = 0.0907

    def __post_init__(self):
        if not self.t > 0:
            raise ParameterError(f"t must be > 0, got {self.t}")
        if not self.g0 > 0:
            raise ParameterError(f"g0 must be > 0, got {self.g0}")
        if not self.nu >= 0:
            raise ParameterError(f"nu must be >= 0, got {self.nu}")
        for name in ("g_read_sd", "g_prog_rel_sd", "nu_rel_sd"):
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def drift_factor(self) -> float:
        return float(np.power(self.t, -self.nu))

    @property
    def nominal_set(self) -> float:
        """Noise-free conductance of a set device at time ``t``."""
        return self.g0 * 1.0 * self.drift_factor

    def noiseless(self) -> "PcmParams":
        return replace(self, g_read_sd=0.0, g_prog_rel_sd=0.0, nu_rel_sd=0.0)


def default_pcm_params() -> PcmParams:
    """Device parameters measured on PCM hardware, read 20 s after programming."""
    return PcmParams()


def sample_conductance(params: PcmParams, rng: np.random.Generator, size=None):
    """Draw set-state conductances (siemens); may be negative because read noise is signed.

    Three independent standard normals are drawn per device, in the order
    read, programming, drift.
    """
    z_read = rng.standard_normal(size)
    z_prog = rng.standard_normal(size)
    z_drift = rng.standard_normal(size)
    # t^(-nu*(1+s*z)) split as t^(-nu) * t^(-nu*s*z) so zero spread reproduces
    # the nominal conductance bit-for-bit.
    drift = params.drift_factor * np.power(params.t, -params.nu * params.nu_rel_sd * z_drift)
    g = params.g_read_sd * z_read + params.g0 * (1.0 + params.g_prog_rel_sd * z_prog) * drift
    return float(g) if size is None else g


def sample_reset(params: PcmParams, rng: np.random.Generator, size=None):
    """Reset-state devices carry no conductance beyond read noise."""
    g = params.g_read_sd * rng.standard_normal(size)
    return float(g) if size is None else g


def map_to_devices(weights, precision: Precision | str, params: PcmParams,
                   rng: np.random.Generator, g_prog_rel_sd: float | None = None) -> np.ndarray:
    """Program a quantized matrix onto simulated PCM devices and read it back.

    Binary entries use one device (1 -> set, 0 -> reset). Bipolar entries use
    a differential pair, ``+1 -> (set, reset)`` and ``-1 -> (reset, set)``.
    The result is expressed in units of the nominal set conductance, so the
    noise-free limit returns the input matrix.
    """
    precision = Precision(precision)
    w = np.asarray(weights, dtype=np.float64)
    if precision is Precision.REAL:
        raise StateError("only bipolar or binary memories can be mapped to devices")
    if g_prog_rel_sd is not None:
        params = replace(params, g_prog_rel_sd=g_prog_rel_sd)
    on = w > 0
    if precision is Precision.BIPOLAR:
        if not np.all(np.abs(w) == 1):
            raise ValidationError("bipolar matrix must contain only -1 and +1")
        g_set = sample_conductance(params, rng, w.shape)
        g_reset = sample_reset(params, rng, w.shape)
        g = np.where(on, g_set - g_reset, g_reset - g_set)
    else:
        if not np.all((w == 0) | (w == 1)):
            raise ValidationError("binary matrix must contain only 0 and 1")
        g_set = sample_conductance(params, rng, w.shape)
        g_reset = sample_reset(params, rng, w.shape)
        g = np.where(on, g_set, g_reset)
    return g / params.nominal_set


def noise_power(snr_db: float, reference) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    signal = float(np.mean(reference ** 2))
    if not signal > 0:
        raise DegenerateSignalError("reference signal has zero power")
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return signal / 10.0 ** (snr_db / 10.0)


def add_white_noise(gamma, alpha_reference, snr_db: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Gaussian noise whose power sits ``snr_db`` below the reference's mean square."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(alpha_reference))):
        raise ValidationError("white-noise inputs must be finite")
    variance = noise_power(snr_db, alpha_reference)
    if variance == 0.0:
        return gamma.copy()
    return gamma + math.sqrt(variance) * rng.standard_normal(gamma.shape)


def measured_snr_db(clean, noisy) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noisy, dtype=np.float64) - clean
    return 10.0 * math.log10(np.mean(clean ** 2) / np.mean(noise ** 2))


class NoiseKind(str, enum.Enum):
    NONE = "none"
    WHITE = "white"
    PCM = "pcm"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.NONE
    snr_db: float | None = None
    pcm: PcmParams | None = None
    seed: int = 0

    def __post_init__(self):
        kind = NoiseKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is NoiseKind.WHITE and self.snr_db is None:
            raise ParameterError("white noise needs snr_db")
        if kind is NoiseKind.PCM and self.pcm is None:
            raise ParameterError("PCM noise needs device parameters")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def white(cls, snr_db: float, seed: int = 0) -> "NoiseSpec":
        return cls(kind=NoiseKind.WHITE, snr_db=float(snr_db), seed=seed)

    @classmethod
    def device(cls, params: PcmParams | None = None, seed: int = 0) -> "NoiseSpec":
        return cls(kind=NoiseKind.PCM, pcm=params or default_pcm_params(), seed=seed)
