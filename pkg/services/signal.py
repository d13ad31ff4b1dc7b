"""DFT/STFT utilities and the two spectrogram variant lines.

Amplitude scaling by s adds log|s| to every log-magnitude bin, so the
log-magnitude block varies along the all-ones direction. A circular shift by τ
samples subtracts κ[k] τ from the phase of bin k, κ[k] = 2πk/N, so the phase
block varies along −κ. Magnitudes are floored at MAG_FLOOR before the log;
floored bins get phase 0 and are left out of the property checks.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple

import numpy as np
import pandas as pd
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.exceptions import InputError, ParameterError, ShapeError
from services.geometry import VariantLine


MAG_FLOOR = 1e-7
LOG_FLOOR = float(np.log(MAG_FLOOR))


class StftConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_fft: int = Field(default=1024, gt=0)
    hop: int = Field(default=256, gt=0)
    window: Literal['rectangular', 'hann'] = 'hann'
    center: bool = True

    @model_validator(mode='after')
    def check_framing(self) -> 'StftConfig':
        if self.n_fft % 2:
            raise ValueError(f'n_fft must be even, got {self.n_fft}')
        if self.hop > self.n_fft:
            raise ValueError(f'hop {self.hop} exceeds n_fft {self.n_fft}')
        return self

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(eq=False)
class Spectrogram:
    """log_mag and phase are (..., frames, bins); phase lies in (−π, π]."""
    log_mag: np.ndarray
    phase: np.ndarray
    config: StftConfig

    @property
    def frames(self) -> int:
        return self.log_mag.shape[-2]

    @property
    def bins(self) -> int:
        return self.log_mag.shape[-1]

    @property
    def above_floor(self) -> np.ndarray:
        return self.log_mag > LOG_FLOOR


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Map angles to (−π, π]."""
    return np.pi - np.mod(np.pi - np.asarray(phase, dtype=np.float64), 2.0 * np.pi)


def angular_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(wrap_phase(np.asarray(a) - np.asarray(b)))


def kappa(n_fft: int) -> np.ndarray:
    """κ[k] = 2πk/N for k = 0..N/2."""
    return 2.0 * np.pi * np.arange(n_fft // 2 + 1) / n_fft


def window(config: StftConfig) -> np.ndarray:
    if config.window == 'rectangular':
        return np.ones(config.n_fft)
    n = np.arange(config.n_fft)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / config.n_fft)


def dft(frame: np.ndarray, n_fft: Optional[int] = None) -> np.ndarray:
    """X[k] = Σₙ x[n] exp(−i2πkn/N) for k = 0..N/2."""
    frame = np.asarray(frame, dtype=np.float64)
    if n_fft is not None and frame.shape[-1] != n_fft:
        raise ShapeError(f'frame has {frame.shape[-1]} samples, expected {n_fft}')
    return np.fft.rfft(frame, axis=-1)


def idft(spectrum: np.ndarray, n_fft: int) -> np.ndarray:
    spectrum = np.asarray(spectrum)
    if spectrum.shape[-1] != n_fft // 2 + 1:
        raise ShapeError(f'spectrum has {spectrum.shape[-1]} bins, expected {n_fft // 2 + 1}')
    return np.fft.irfft(spectrum, n=n_fft, axis=-1)


def _frames(signal: np.ndarray, config: StftConfig) -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 0 or signal.shape[-1] < config.n_fft:
        raise InputError(f'signal needs at least {config.n_fft} samples')
    if config.center:
        pad = [(0, 0)] * (signal.ndim - 1) + [(config.n_fft // 2, config.n_fft // 2)]
        signal = np.pad(signal, pad, mode='reflect')
    return sliding_window_view(signal, config.n_fft, axis=-1)[..., ::config.hop, :]


def stft(signal: np.ndarray, config: StftConfig) -> Spectrogram:
    spectrum = dft(_frames(signal, config) * window(config))
    magnitude = np.abs(spectrum)
    log_mag = np.log(np.maximum(magnitude, MAG_FLOOR))
    phase = np.where(magnitude > MAG_FLOOR, wrap_phase(np.angle(spectrum)), 0.0)
    return Spectrogram(log_mag=log_mag, phase=phase, config=config)


def istft(spec: Spectrogram, config: Optional[StftConfig] = None, length: Optional[int] = None) -> np.ndarray:
    """Overlap-add with window-sum normalisation; floored bins are treated as zero."""
    config = config or spec.config
    magnitude = np.where(spec.log_mag > LOG_FLOOR, np.exp(spec.log_mag), 0.0)
    frames = idft(magnitude * np.exp(1j * spec.phase), config.n_fft) * window(config)
    n_frames = frames.shape[-2]
    total = config.n_fft + config.hop * (n_frames - 1)
    signal = np.zeros(frames.shape[:-2] + (total,))
    weight = np.zeros(total)
    win_sq = window(config) ** 2
    for i in range(n_frames):
        start = i * config.hop
        signal[..., start:start + config.n_fft] += frames[..., i, :]
        weight[start:start + config.n_fft] += win_sq
    signal = np.where(weight > 1e-10, signal / np.where(weight > 1e-10, weight, 1.0), 0.0)
    if config.center:
        signal = signal[..., config.n_fft // 2:total - config.n_fft // 2]
    if length is not None:
        signal = signal[..., :length]
    return signal


# ------------------ Variant lines ------------------

def scaling_line(spec: Spectrogram) -> VariantLine:
    """Log-magnitude line: direction all ones, offset the flattened log-magnitude."""
    size = spec.frames * spec.bins
    offset = spec.log_mag.reshape(spec.log_mag.shape[:-2] + (size,))
    return VariantLine(np.ones(size), offset)


def shifting_line(spec: Spectrogram) -> VariantLine:
    """Phase line: direction −κ repeated per frame, offset the flattened phase."""
    size = spec.frames * spec.bins
    offset = spec.phase.reshape(spec.phase.shape[:-2] + (size,))
    return VariantLine(-np.tile(kappa(spec.config.n_fft), spec.frames), offset)


# ------------------ Property checks ------------------

def verify_scaling(signal: np.ndarray, s: float, config: StftConfig) -> float:
    """Largest deviation of log_mag(s·x) − log_mag(x) from log|s| over bins above the floor."""
    if s == 0:
        raise ParameterError('scale factor must be non-zero')
    signal = np.asarray(signal, dtype=np.float64)
    original = stft(signal, config)
    scaled = stft(s * signal, config)
    mask = original.above_floor & scaled.above_floor
    if not np.any(mask):
        return 0.0
    error = np.abs(scaled.log_mag - original.log_mag - np.log(abs(s)))
    return float(np.max(error[mask]))


def verify_shifting(frame: np.ndarray, tau: int, config: StftConfig) -> float:
    """Largest wrapped phase error of the circular-shift relation X_y[k] = X[k] − κ[k]τ."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (config.n_fft,):
        raise ShapeError(f'expected one frame of {config.n_fft} samples, got shape {frame.shape}')
    if abs(tau) > config.n_fft:
        raise ParameterError(f'|tau| must not exceed {config.n_fft}, got {tau}')
    original = dft(frame)
    shifted = dft(np.roll(frame, tau))
    mask = np.abs(original) > MAG_FLOOR
    if not np.any(mask):
        return 0.0
    predicted = np.angle(original) - kappa(config.n_fft) * tau
    return float(np.max(angular_distance(np.angle(shifted), predicted)[mask]))


def measure_stft_shift(signal: np.ndarray, tau: int, config: StftConfig) -> Dict[str, float]:
    """Phase-ramp error for a delayed (not circular) signal under windowed STFT.

    The relation is only approximate here and depends on window and hop, so
    this reports the error rather than checking it.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if not 0 < tau < signal.shape[-1]:
        raise ParameterError(f'tau must lie in (0, {signal.shape[-1]})')
    delayed = np.concatenate([np.zeros(tau), signal[:-tau]])
    original = stft(signal, config)
    moved = stft(delayed, config)
    mask = original.above_floor & moved.above_floor
    predicted = original.phase - kappa(config.n_fft) * tau
    error = angular_distance(moved.phase, predicted)[mask]
    if error.size == 0:
        return {'max': 0.0, 'median': 0.0, 'bins': 0}
    return {'max': float(error.max()), 'median': float(np.median(error)), 'bins': int(error.size)}


# ------------------ Signals ------------------

def synthetic_tones(rng: np.random.Generator, count: int, length: int, noise: float = 1e-2) -> np.ndarray:
    """Random two-partial tones plus a little white noise, shape (count, length)."""
    n = np.arange(length)
    freq = rng.uniform(0.03, 0.22, size=(count, 1))
    amp = rng.uniform(0.2, 1.0, size=(count, 1))
    amp2 = rng.uniform(0.0, 0.5, size=(count, 1))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(count, 2))
    tones = (amp * np.sin(2.0 * np.pi * freq * n + phase[:, :1])
             + amp2 * np.sin(4.0 * np.pi * freq * n + phase[:, 1:]))
    return tones + noise * rng.standard_normal((count, length))


def peak_normalize(signal: np.ndarray, peak: float = 0.95) -> np.ndarray:
    signal = np.asarray(signal, dtype=np.float64)
    top = np.max(np.abs(signal)) if signal.size else 0.0
    if top == 0:
        return signal.copy()
    return signal * (peak / top)


def read_wav(path: Path) -> Tuple[np.ndarray, int]:
    """16-bit PCM mono WAV as floats in [−1, 1]; extra chunks are skipped."""
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise InputError(f'Cannot read {path}: {e}') from e
    if info.subtype != 'PCM_16' or info.channels != 1:
        raise InputError(f'{path}: need 16-bit PCM mono, got {info.subtype} with {info.channels} channels')
    data, sample_rate = sf.read(str(path), dtype='float64')
    return data, sample_rate


def write_wav(path: Path, signal: np.ndarray, sample_rate: int) -> Path:
    sf.write(str(path), np.clip(signal, -1.0, 1.0), sample_rate, subtype='PCM_16')
    return Path(path)


def spectrogram_frame(spec: Spectrogram) -> pd.DataFrame:
    """One row per (frame, bin) of a single spectrogram."""
    if spec.log_mag.ndim != 2:
        raise ShapeError('only a single spectrogram can be tabulated')
    frames, bins = np.meshgrid(np.arange(spec.frames), np.arange(spec.bins), indexing='ij')
    return pd.DataFrame({
        'frame': frames.ravel(),
        'bin': bins.ravel(),
        'log_mag': spec.log_mag.ravel(),
        'phase': spec.phase.ravel(),
    })
