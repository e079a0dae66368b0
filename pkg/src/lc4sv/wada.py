"""Blind SNR estimation from the waveform amplitude distribution (WADA).

Clean speech amplitudes are modelled as Gamma(shape 0.4) and noise as
Gaussian. The statistic ``G = ln E|x| - E ln|x|`` grows monotonically with
SNR, so an observed G is inverted through a precomputed table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import DegenerateInputError, DomainError
from .signal import Waveform

EPS = 1e-10
MIN_SAMPLES = 4000

SNR_BIN_EDGES = (0.0, 3.0, 6.0, 9.0, 12.0)


@dataclass(frozen=True)
class SnrBin:
    index: int
    lower_db: float
    upper_db: float


def _bins():
    lowers = (-math.inf,) + SNR_BIN_EDGES
    uppers = SNR_BIN_EDGES + (math.inf,)
    return tuple(SnrBin(i, lo, hi) for i, (lo, hi) in enumerate(zip(lowers, uppers)))


SNR_BINS = _bins()


@lru_cache(maxsize=1)
def load_table() -> tuple[np.ndarray, np.ndarray]:
    """Return (G values, SNR dB) from the packaged table, G increasing."""
    text = resources.files("lc4sv.data").joinpath("wada_table.txt").read_text()
    rows = [line.split() for line in text.splitlines() if line and not line.startswith("#")]
    table = np.array(rows, dtype=np.float64)
    return table[:, 0], table[:, 1]


def wada_statistic(samples) -> float:
    x = np.abs(np.asarray(samples, dtype=np.float64))
    peak = x.max()
    if peak == 0.0:
        raise DegenerateInputError("WADA estimate undefined for an all-zero signal")
    # Peak normalisation keeps the epsilon floor from breaking scale invariance.
    x = x / peak
    return float(np.log(x.mean()) - np.mean(np.log(x + EPS)))


def estimate_snr_wada(waveform) -> float:
    """Estimated SNR in dB, clamped to the table range."""
    samples = waveform.samples if isinstance(waveform, Waveform) else np.asarray(waveform)
    if samples.size < MIN_SAMPLES:
        raise DegenerateInputError(
            f"WADA needs at least {MIN_SAMPLES} samples, got {samples.size}")
    g = wada_statistic(samples)
    g_table, snr_table = load_table()
    return float(np.interp(g, g_table, snr_table))


def snr_to_bin(snr_db: float) -> SnrBin:
    snr_db = float(snr_db)
    if math.isnan(snr_db):
        raise DomainError("SNR is NaN")
    index = sum(snr_db >= edge for edge in SNR_BIN_EDGES)
    return SNR_BINS[index]
