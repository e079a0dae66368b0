"""Experiment configuration: a flat ``key = value`` file with ``#`` comments."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError
from .spectral import StftConfig

# Keys that locate artifacts rather than define them; excluded from the hash.
_LOCATION_KEYS = ("work_dir",)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    work_dir: str = "runs"

    # synthetic corpus
    num_speakers: int = 24
    utts_per_speaker: int = 10
    duration_s: float = 3.0
    noise_per_class: int = 4
    noise_duration_s: float = 6.0
    eval_speakers: int = 8
    agent_heldout_utts: int = 2
    mixtures_per_utt: int = 2
    snr_low_db: float = -4.0
    snr_high_db: float = 6.0

    # proxy speaker embedders (A: fine-tuning and agent init, B: reward, C: scoring)
    sv_steps: int = 300
    sv_learning_rate: float = 1e-3
    sv_speakers_per_batch: int = 8
    sv_segment_samples: int = 24000
    sv_hidden: int = 128

    # enhancer
    enhancer_fft_size: int = 512
    enhancer_hop_size: int = 128
    enhancer_hidden: int = 256
    enhancer_context: int = 2
    pretrain_steps: int = 500
    pretrain_learning_rate: float = 1e-3
    pretrain_batch_size: int = 8
    pretrain_segment_samples: int = 16000
    finetune_steps: int = 200
    finetune_learning_rate: float = 1e-4
    finetune_speakers_per_batch: int = 8
    finetune_segment_samples: int = 24000

    # interpolation agent
    agent_steps: int = 500
    agent_learning_rate: float = 1e-4
    agent_speakers_per_batch: int = 8
    agent_heldout_batches: int = 8
    agent_hidden: int = 128

    # evaluation
    snr_threshold_db: float = 4.0
    max_trials_per_class: int = 0  # 0 keeps every candidate pair

    # multi-resolution STFT loss
    stft_fft_sizes: tuple = (512, 1024, 2048)
    stft_hop_sizes: tuple = (50, 120, 240)
    stft_win_lengths: tuple = (240, 600, 1200)

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.endswith("learning_rate") and not value > 0:
                raise ConfigurationError(f"{f.name} must be > 0, got {value}")
            if f.name.endswith("_steps") and value < 0:
                raise ConfigurationError(f"{f.name} must be >= 0, got {value}")
        if self.snr_low_db > self.snr_high_db:
            raise ConfigurationError(
                f"snr range low {self.snr_low_db} exceeds high {self.snr_high_db}")
        if self.num_speakers < 2 or self.utts_per_speaker < 2:
            raise ConfigurationError("the corpus needs at least 2 speakers with 2 utterances each")
        if not 2 <= self.eval_speakers <= self.num_speakers - 2:
            raise ConfigurationError("need at least 2 evaluation and 2 training speakers")
        if not 0 <= self.agent_heldout_utts <= self.utts_per_speaker - 2:
            raise ConfigurationError("agent held-out utterances leave fewer than 2 for training")
        if self.mixtures_per_utt < 1:
            raise ConfigurationError("mixtures_per_utt must be >= 1")
        sizes = {len(self.stft_fft_sizes), len(self.stft_hop_sizes), len(self.stft_win_lengths)}
        if len(sizes) != 1 or not self.stft_fft_sizes:
            raise ConfigurationError("STFT size, hop and window lists must have equal nonzero length")
        self.stft_configs  # validates each resolution

    @property
    def stft_configs(self) -> tuple[StftConfig, ...]:
        try:
            return tuple(StftConfig(n, h, w) for n, h, w in
                         zip(self.stft_fft_sizes, self.stft_hop_sizes, self.stft_win_lengths))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        """Short hash identifying everything that affects artifact contents."""
        text = dumps(self, include_location=False).rstrip("\n")
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name: str, raw: str, default):
    try:
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"invalid value for {name}: {raw!r}") from None


def dumps(config: ExperimentConfig, include_location: bool = True) -> str:
    return "".join(f"{f.name} = {_format(getattr(config, f.name))}\n" for f in fields(config)
                   if include_location or f.name not in _LOCATION_KEYS)


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(base)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in defaults:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse(key, raw, defaults[key])
    return dataclasses.replace(base, **values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(config), encoding="utf-8")
