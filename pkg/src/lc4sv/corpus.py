"""Synthetic speaker corpus and noise pool for desk-scale experiments.

Each synthetic speaker has its own fundamental frequency, formant-like
spectral envelope and glottal source tilt. Utterances are sequences of voiced
"syllables" with micro-pitch jitter, per-syllable vowel shifts, random
harmonic phases and an amplitude contour separated by short pauses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .errors import ConfigurationError

SR = 16000


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0_hz: float
    formants_hz: tuple
    bandwidths_hz: tuple
    source_pole: float
    breathiness: float


def make_speakers(num_speakers: int, rng: np.random.Generator, prefix="spk") -> list[SpeakerProfile]:
    if num_speakers < 1:
        raise ConfigurationError("need at least one speaker")
    # Log-spaced pitches, shuffled, so every speaker is distinct.
    f0s = np.geomspace(90.0, 240.0, num_speakers) * rng.uniform(0.98, 1.02, num_speakers)
    f0s = f0s[rng.permutation(num_speakers)]
    speakers = []
    for i, f0 in enumerate(f0s):
        formants = (rng.uniform(350, 850), rng.uniform(1000, 2300), rng.uniform(2400, 3400),
                    rng.uniform(3500, 4500))
        bandwidths = tuple(rng.uniform(60, 180, 4))
        speakers.append(SpeakerProfile(
            speaker_id=f"{prefix}{i:03d}",
            f0_hz=float(f0),
            formants_hz=tuple(float(f) for f in formants),
            bandwidths_hz=tuple(float(b) for b in bandwidths),
            source_pole=float(rng.uniform(0.75, 0.95)),
            breathiness=float(rng.uniform(0.01, 0.05)),
        ))
    return speakers


def resonator(freq_hz: float, bandwidth_hz: float):
    """Two-pole resonator coefficients with unit gain at the centre frequency."""
    r = np.exp(-np.pi * bandwidth_hz / SR)
    theta = 2.0 * np.pi * freq_hz / SR
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    gain = abs(np.polyval(a[::-1], np.exp(-1j * theta)))  # |A(e^{j theta})|
    return np.array([gain]), a


def _smooth_noise(n, rng, width):
    kernel = np.hanning(max(3, width))
    kernel /= kernel.sum()
    raw = rng.standard_normal(n + kernel.size)
    out = fftconvolve(raw, kernel, mode="same")[:n]
    return out / (out.std() + 1e-12)


def _pulse_train(f0_track, rng):
    phase = np.cumsum(f0_track) / SR
    cycles = np.floor(phase)
    onsets = np.flatnonzero(np.diff(cycles) > 0) + 1
    pulses = np.zeros(f0_track.size)
    pulses[onsets] = rng.uniform(0.9, 1.1, onsets.size)
    return pulses


def synth_utterance(speaker: SpeakerProfile, duration_s: float, rng: np.random.Generator) -> np.ndarray:
    n = int(round(duration_s * SR))
    contour = 1.0 + 0.04 * _smooth_noise(n, rng, 4000) + 0.01 * _smooth_noise(n, rng, 200)
    f0_track = speaker.f0_hz * contour * np.linspace(1.03, 0.97, n)
    source = _pulse_train(f0_track, rng)
    source += speaker.breathiness * rng.standard_normal(n)
    # One pole on the source gives the speaker's spectral tilt.
    source = lfilter([1.0], [1.0, -speaker.source_pole], source)
    out = np.zeros(n)
    t = int(rng.integers(400, 2400))
    while t < n - 800:
        seg = min(int(rng.integers(1800, 4800)), n - t)
        idx = slice(t, t + seg)
        vowel = rng.uniform(0.88, 1.12, size=len(speaker.formants_hz))
        voiced = np.zeros(seg)
        for f, bw, v in zip(speaker.formants_hz, speaker.bandwidths_hz, vowel):
            b, a = resonator(f * v, bw)
            voiced += lfilter(b, a, source[idx])
        ramp = np.sin(np.pi * np.arange(seg) / seg) ** 1.5
        out[idx] += voiced * ramp * rng.uniform(0.6, 1.0)
        t += seg + int(rng.integers(300, 2400))
    peak = np.abs(out).max()
    if peak > 0:
        out *= rng.uniform(0.3, 0.6) / peak
    return out


def white_noise(n, rng):
    return rng.standard_normal(n)


def pink_noise(n, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n)
    return x / x.std()


def babble_noise(n, rng, background_speakers, talkers=5):
    picks = rng.choice(len(background_speakers), size=min(talkers, len(background_speakers)),
                       replace=False)
    x = sum(synth_utterance(background_speakers[p], n / SR, rng) for p in picks)
    return x / (x.std() + 1e-12)


def make_noise_pool(per_class: int, duration_s: float, rng: np.random.Generator,
                    background_speakers) -> list[tuple[str, str, np.ndarray]]:
    """Return (noise_id, class, samples) triples, ``per_class`` of each class."""
    n = int(round(duration_s * SR))
    pool = []
    for i in range(per_class):
        pool.append((f"white{i:02d}", "white", 0.1 * white_noise(n, rng)))
        pool.append((f"pink{i:02d}", "pink", 0.1 * pink_noise(n, rng)))
        pool.append((f"babble{i:02d}", "babble", 0.1 * babble_noise(n, rng, background_speakers)))
    return pool


@dataclass
class Corpus:
    speakers: list
    utterances: list  # (utterance_id, speaker_id, samples)
    noise: list       # (noise_id, class, samples)


def synth_corpus(num_speakers: int, utts_per_speaker: int, duration_s: float, seed: int,
                 noise_per_class: int = 4, noise_duration_s: float = 6.0) -> Corpus:
    if num_speakers < 2:
        raise ConfigurationError("a verification corpus needs at least two speakers")
    if utts_per_speaker < 2:
        raise ConfigurationError("need at least two utterances per speaker")
    if duration_s <= 0 or noise_per_class < 1:
        raise ConfigurationError("durations and noise counts must be positive")
    rng = np.random.default_rng(seed)
    speakers = make_speakers(num_speakers, rng)
    background = make_speakers(8, np.random.default_rng([seed, 1]), prefix="bg")
    utterances = []
    for spk in speakers:
        for u in range(utts_per_speaker):
            x = synth_utterance(spk, duration_s, rng)
            utterances.append((f"{spk.speaker_id}-u{u:02d}", spk.speaker_id, x.astype(np.float32)))
    noise = [(nid, cls, x.astype(np.float32)) for nid, cls, x in
             make_noise_pool(noise_per_class, noise_duration_s, np.random.default_rng([seed, 2]),
                             background)]
    return Corpus(speakers, utterances, noise)
