"""Waveforms, WAV I/O, SNR-controlled mixing and noisy/enhanced interpolation."""
from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DegenerateInputError, DomainError, FormatError, ShapeError

SAMPLE_RATE = 16000


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio stored as float32 samples in nominal range [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size < 1:
            raise ShapeError("waveform must hold at least one sample")
        if not np.all(np.isfinite(samples)):
            raise DomainError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise DomainError("sample rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def as_float64(self) -> np.ndarray:
        return self.samples.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return (self.sample_rate_hz == other.sample_rate_hz
                and self.samples.tobytes() == other.samples.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class NoisyCleanPair:
    noisy: Waveform
    clean: Waveform
    noise: Waveform  # already scaled: noisy = clean + noise
    snr_db: float


def check_combinable(a: Waveform, b: Waveform) -> None:
    if a.sample_rate_hz != b.sample_rate_hz:
        raise ShapeError(f"sample rates differ: {a.sample_rate_hz} vs {b.sample_rate_hz}")
    if len(a) != len(b):
        raise ShapeError(f"lengths differ: {len(a)} vs {len(b)}")


def energy(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x))


def read_wav(path) -> Waveform:
    """Read a mono PCM16 or float32 WAV file."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", wavfile.WavFileWarning)
        try:
            rate, data = wavfile.read(os.fspath(path))
        except FileNotFoundError:
            raise
        except ValueError as exc:
            msg = str(exc)
            if "EOF" in msg or "end of file" in msg.lower() or "size" in msg.lower():
                raise OSError(f"{path}: truncated WAV file ({msg})") from exc
            raise FormatError(f"{path}: unsupported WAV file ({msg})") from exc
    for w in caught:
        if "EOF" in str(w.message):
            raise OSError(f"{path}: truncated WAV file ({w.message})")
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / np.float32(32768.0)
    elif data.dtype == np.float32:
        samples = data
    else:
        raise FormatError(f"{path}: unsupported sample encoding {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(waveform: Waveform, path, encoding: str = "pcm16") -> None:
    """Write a waveform as PCM16 (clipped to [-32768, 32767]) or float32."""
    if not isinstance(waveform, Waveform):
        waveform = Waveform(np.asarray(waveform))
    if encoding == "pcm16":
        scaled = np.round(waveform.as_float64() * 32768.0)
        data = np.clip(scaled, -32768, 32767).astype(np.int16)
    elif encoding == "float32":
        data = waveform.samples
    else:
        raise FormatError(f"unknown encoding {encoding!r}")
    wavfile.write(os.fspath(path), waveform.sample_rate_hz, data)


def fit_length(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Tile short noise with wraparound; crop long noise at a random offset."""
    noise = np.asarray(noise)
    if noise.size == length:
        return noise.copy()
    if noise.size < length:
        reps = -(-length // noise.size)
        return np.tile(noise, reps)[:length]
    start = int(rng.integers(0, noise.size - length + 1))
    return noise[start:start + length].copy()


def mix_at_snr(clean: Waveform, noise: Waveform, target_snr_db: float) -> NoisyCleanPair:
    check_combinable(clean, noise)
    c = clean.as_float64()
    n = noise.as_float64()
    e_clean, e_noise = energy(c), energy(n)
    if e_clean <= 0.0:
        raise DegenerateInputError("clean signal has zero energy")
    if e_noise <= 0.0:
        raise DegenerateInputError("noise signal has zero energy")
    gain = np.sqrt(e_clean / (e_noise * 10.0 ** (target_snr_db / 10.0)))
    scaled = gain * n
    # SNR is reported on the stored float32 signals so the identity
    # noisy == clean + noise stays exact after storage.
    scaled32 = scaled.astype(np.float32)
    noisy32 = (clean.samples + scaled32).astype(np.float32)
    achieved = 10.0 * np.log10(e_clean / energy(scaled32))
    return NoisyCleanPair(
        noisy=Waveform(noisy32, clean.sample_rate_hz),
        clean=clean,
        noise=Waveform(scaled32, clean.sample_rate_hz),
        snr_db=float(achieved),
    )


def interpolate(noisy: Waveform, enhanced: Waveform, alpha: float) -> Waveform:
    """Blend enhanced and noisy signals: alpha * enhanced + (1 - alpha) * noisy."""
    check_combinable(noisy, enhanced)
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return Waveform(noisy.samples.copy(), noisy.sample_rate_hz)
    if alpha == 1.0:
        return Waveform(enhanced.samples.copy(), noisy.sample_rate_hz)
    mixed = alpha * enhanced.as_float64() + (1.0 - alpha) * noisy.as_float64()
    return Waveform(mixed.astype(np.float32), noisy.sample_rate_hz)


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    speaker_id: str
    path: str
    duration_seconds: float


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for r in records:
            writer.writerow([r.utterance_id, r.speaker_id, r.path, f"{r.duration_seconds:.6f}"])


def read_manifest(path) -> list[ManifestRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
            utt, spk, p, dur = fields
            records.append(ManifestRecord(utt, spk, p, float(dur)))
    return records


def resolve(record: ManifestRecord, manifest_path) -> Path:
    p = Path(record.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p
