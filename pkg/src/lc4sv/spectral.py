"""STFT and the multi-resolution STFT reconstruction objective.

All loss functions accept waveforms, arrays or autodiff tensors shaped
``(..., T)`` and return a tensor. Leading axes are treated as a batch and
averaged in :func:`ptn_loss`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .learn import tensor as T
from .learn.tensor import Tensor
from .signal import Waveform

LOG_FLOOR = 1e-7


@dataclass(frozen=True)
class StftConfig:
    fft_size: int
    hop_size: int
    win_length: int
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_size <= self.win_length <= self.fft_size:
            raise ShapeError(f"need 0 < hop <= win <= fft, got {self}")
        if self.fft_size % 2:
            raise ShapeError("fft_size must be even")
        if self.window != "hann":
            raise ShapeError(f"unsupported window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, length: int) -> int:
        return (length - self.win_length) // self.hop_size + 1


DEFAULT_CONFIGS = (
    StftConfig(512, 50, 240),
    StftConfig(1024, 120, 600),
    StftConfig(2048, 240, 1200),
)
TINY_CONFIG = StftConfig(64, 16, 32)


def hann(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def _samples(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Waveform):
        return Tensor(x.as_float64())
    return Tensor(np.asarray(x, dtype=np.float64))


def stft_parts(x, config: StftConfig) -> Tensor:
    """Differentiable STFT: (..., T) -> (..., frames, bins, 2) real/imag parts."""
    x = _samples(x)
    if x.shape[-1] < config.win_length:
        raise ShapeError(f"signal of {x.shape[-1]} samples shorter than window {config.win_length}")
    frames = T.frame(x, config.win_length, config.hop_size) * hann(config.win_length)
    return T.rfft(frames, config.fft_size)


def stft(waveform, config: StftConfig) -> np.ndarray:
    """Complex one-sided spectrogram, shape (frames, fft_size // 2 + 1)."""
    parts = stft_parts(waveform, config).data
    return parts[..., 0] + 1j * parts[..., 1]


def magnitude(x, config: StftConfig) -> Tensor:
    return T.complex_abs(stft_parts(x, config))


def _check_pair(estimate, target):
    estimate, target = _samples(estimate), _samples(target)
    if estimate.shape != target.shape:
        raise ShapeError(f"estimate {estimate.shape} and target {target.shape} differ")
    return estimate, target


def _target_magnitude(target, config) -> np.ndarray:
    mag = magnitude(target.detach(), config).data
    if np.any(np.square(mag).sum(axis=(-2, -1)) == 0.0):
        raise DegenerateInputError("spectral convergence undefined for a silent target")
    return mag


def _sc(mag_est, mag_tgt):
    return T.norm(mag_est - mag_tgt, axis=(-2, -1)) / np.sqrt(np.square(mag_tgt).sum(axis=(-2, -1)))


def _log_mag(mag_est, mag_tgt):
    return T.mean(T.absolute(T.log(mag_est + LOG_FLOOR) - np.log(mag_tgt + LOG_FLOOR)),
                  axis=(-2, -1))


def spectral_convergence_loss(estimate, target, config: StftConfig) -> Tensor:
    """Frobenius distance of magnitude spectrograms relative to the target's norm."""
    estimate, target = _check_pair(estimate, target)
    if target.requires_grad:
        mag_tgt = magnitude(target, config)
        denom = T.norm(mag_tgt, axis=(-2, -1))
        if np.any(denom.data == 0.0):
            raise DegenerateInputError("spectral convergence undefined for a silent target")
        return T.norm(magnitude(estimate, config) - mag_tgt, axis=(-2, -1)) / denom
    return _sc(magnitude(estimate, config), _target_magnitude(target, config))


def log_magnitude_loss(estimate, target, config: StftConfig) -> Tensor:
    """Mean absolute difference of floored log magnitudes."""
    estimate, target = _check_pair(estimate, target)
    if target.requires_grad:
        return T.mean(T.absolute(T.log(magnitude(estimate, config) + LOG_FLOOR)
                                 - T.log(magnitude(target, config) + LOG_FLOOR)), axis=(-2, -1))
    return _log_mag(magnitude(estimate, config), magnitude(target, config).data)


def waveform_l1_loss(estimate, target) -> Tensor:
    estimate, target = _check_pair(estimate, target)
    return T.mean(T.absolute(estimate - target), axis=-1)


def ptn_loss_per_item(estimate, target, configs=DEFAULT_CONFIGS) -> Tensor:
    configs = tuple(configs)
    if not configs:
        raise ShapeError("ptn_loss needs at least one STFT configuration")
    estimate, target = _check_pair(estimate, target)
    total = waveform_l1_loss(estimate, target)
    if target.requires_grad:
        for cfg in configs:
            total = total + spectral_convergence_loss(estimate, target, cfg)
            total = total + log_magnitude_loss(estimate, target, cfg)
        return total
    # Constant target: each magnitude spectrogram is computed once per resolution.
    for cfg in configs:
        mag_est = magnitude(estimate, cfg)
        mag_tgt = _target_magnitude(target, cfg)
        total = total + _sc(mag_est, mag_tgt) + _log_mag(mag_est, mag_tgt)
    return total


def ptn_loss(estimate, target, configs=DEFAULT_CONFIGS) -> Tensor:
    """Waveform L1 plus spectral-convergence and log-magnitude terms per resolution.

    Batched inputs are averaged over the leading axes.
    """
    return T.mean(ptn_loss_per_item(estimate, target, configs))
