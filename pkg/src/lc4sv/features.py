"""Parameter-free acoustic features shared by the toy models."""
from __future__ import annotations

import numpy as np

from .learn import tensor as T
from .spectral import StftConfig, stft_parts

LOG_MEL_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int = 16000,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular HTK-style filterbank, shape (fft_size // 2 + 1, n_mels)."""
    f_max = sample_rate / 2 if f_max is None else f_max
    bin_freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, centre, upper = edges[:-2], edges[1:-1], edges[2:]
    f = bin_freqs[:, None]
    rising = (f - lower) / (centre - lower)
    falling = (upper - f) / (upper - centre)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def log_mel(x, stft_config: StftConfig, filterbank: np.ndarray):
    """(..., T) -> (..., frames, n_mels) log mel energies."""
    power = T.power_spectrum(stft_parts(x, stft_config))
    return T.log(T.matmul(power, filterbank) + LOG_MEL_FLOOR)


def mean_std_pool(x, eps: float = 1e-8):
    """Per-band mean and standard deviation over frames: (..., F, B) -> (..., 2B)."""
    mu = T.mean(x, axis=-2, keepdims=True)
    var = T.mean(T.square(x - mu), axis=-2)
    return T.concat([T.reshape(mu, mu.shape[:-2] + mu.shape[-1:]), T.sqrt(var + eps)], axis=-1)
