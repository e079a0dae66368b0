"""Toy speaker embedder and the angular prototypical objective."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .features import log_mel, mean_std_pool, mel_filterbank
from .learn import Adam, ParamSet, Tensor, dense_forward, leaky_relu, pairwise_cosine, uniform_init
from .learn import tensor as T
from .signal import Waveform, fit_length
from .spectral import StftConfig

log = logging.getLogger(__name__)

EMBEDDING_DIM = 256
MIN_EMBED_SAMPLES = 8000


@dataclass(frozen=True)
class EmbedderConfig:
    n_mels: int = 40
    frame_length: int = 400
    hop_length: int = 160
    fft_size: int = 512
    hidden: int = 128
    dim: int = EMBEDDING_DIM
    min_samples: int = MIN_EMBED_SAMPLES
    sample_rate: int = 16000


class SpeakerEmbedder:
    """Log-mel mean/std statistics -> dense -> LeakyReLU -> dense embedding."""

    def __init__(self, params: ParamSet, config: EmbedderConfig = EmbedderConfig(), prefix="sv"):
        self.params = params
        self.config = config
        self.prefix = prefix
        self.stft_config = StftConfig(config.fft_size, config.hop_length, config.frame_length)
        self.filterbank = mel_filterbank(config.n_mels, config.fft_size, config.sample_rate)

    @classmethod
    def init(cls, rng: np.random.Generator, config: EmbedderConfig = EmbedderConfig(),
             prefix="sv") -> "SpeakerEmbedder":
        n_in = 2 * config.n_mels
        params = ParamSet({
            f"{prefix}.fc1.weight": uniform_init(rng, (config.hidden, n_in), n_in),
            f"{prefix}.fc1.bias": uniform_init(rng, (config.hidden,), n_in),
            f"{prefix}.fc2.weight": uniform_init(rng, (config.dim, config.hidden), config.hidden),
            f"{prefix}.fc2.bias": uniform_init(rng, (config.dim,), config.hidden),
        })
        return cls(params, config, prefix)

    def renamed(self, prefix: str) -> "SpeakerEmbedder":
        """A trainable copy whose tensors live under a new name prefix."""
        state = {k.replace(self.prefix, prefix, 1): v for k, v in self.params.state_dict().items()}
        return SpeakerEmbedder(ParamSet(state), self.config, prefix)

    def check_length(self, length: int) -> None:
        if length < self.config.min_samples:
            raise ShapeError(
                f"embedding needs at least {self.config.min_samples} samples, got {length}")

    def features(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(_as_array(x))
        self.check_length(x.shape[-1])
        return mean_std_pool(log_mel(x, self.stft_config, self.filterbank))

    def project(self, feats) -> Tensor:
        p = self.prefix
        h = leaky_relu(dense_forward(feats, self.params[f"{p}.fc1.weight"], self.params[f"{p}.fc1.bias"]))
        return dense_forward(h, self.params[f"{p}.fc2.weight"], self.params[f"{p}.fc2.bias"])

    def embed_tensor(self, x) -> Tensor:
        return self.project(self.features(x))

    def embed(self, waveform) -> np.ndarray:
        """Embedding(s) of one waveform (T,) or a batch (B, T) as float64 arrays."""
        return self.embed_tensor(_as_array(waveform)).data

    def __call__(self, waveform) -> np.ndarray:
        return self.embed(waveform)


def _as_array(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.as_float64()
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], Waveform):
        return np.stack([w.as_float64() for w in x])
    return np.asarray(x, dtype=np.float64)


def embed(waveform, embedder: SpeakerEmbedder) -> np.ndarray:
    return embedder.embed(waveform)


# -- angular prototypical objective -------------------------------------------
W_MIN = 1e-6


class ApLossParams(ParamSet):
    """Learnable scale ``w`` and bias ``b`` of the scaled-cosine similarity."""

    def __init__(self, w: float = 10.0, b: float = -5.0):
        super().__init__({"ap.w": np.array(w), "ap.b": np.array(b)})

    @property
    def w(self) -> Tensor:
        return self["ap.w"]

    @property
    def b(self) -> Tensor:
        return self["ap.b"]

    def clamp(self) -> None:
        self.w.data = np.maximum(self.w.data, W_MIN)


def ap_loss(queries, centroids, w, b) -> Tensor:
    """Angular prototypical loss over N speakers.

    S[i, j] = w cos(query_i, centroid_j) + b and the loss is
    -mean_i log(exp(S[i, i]) / mean_j exp(S[i, j])), with j running over all
    speakers including i.
    """
    queries = queries if isinstance(queries, Tensor) else Tensor(np.asarray(queries))
    centroids = centroids if isinstance(centroids, Tensor) else Tensor(np.asarray(centroids))
    if queries.ndim != 2 or queries.shape != centroids.shape:
        raise ShapeError(f"queries {queries.shape} and centroids {centroids.shape} must be (N, d)")
    n = queries.shape[0]
    sim = pairwise_cosine(queries, centroids) * w + b
    diag = T.tsum(sim * np.eye(n), axis=-1)
    return T.mean(T.logsumexp(sim, axis=-1) - np.log(n) - diag)


@dataclass
class SpeakerBatch:
    """N speakers with exactly M utterances each (equal-length arrays)."""

    speaker_ids: list
    utterances: list  # N lists of M waveforms/arrays

    def __post_init__(self):
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise ConfigurationError("speaker ids in a batch must be distinct")
        if len(self.utterances) != len(self.speaker_ids):
            raise ConfigurationError("one utterance list per speaker required")
        counts = {len(u) for u in self.utterances}
        if len(counts) != 1:
            raise ConfigurationError("every speaker needs the same number of utterances")

    @property
    def n(self) -> int:
        return len(self.speaker_ids)

    @property
    def m(self) -> int:
        return len(self.utterances[0])


def build_ap_batch(batch: SpeakerBatch, role_rng: np.random.Generator):
    """Pick one query and one centroid utterance per speaker."""
    if batch.m != 2:
        raise ConfigurationError(f"AP batches use exactly 2 utterances per speaker, got {batch.m}")
    flips = role_rng.integers(0, 2, size=batch.n)
    queries = [utts[f] for utts, f in zip(batch.utterances, flips)]
    centroids = [utts[1 - f] for utts, f in zip(batch.utterances, flips)]
    return queries, centroids


# -- proxy training ---------------------------------------------------------------
@dataclass
class SvTrainConfig:
    steps: int = 300
    speakers_per_batch: int = 8
    segment_samples: int = 24000
    learning_rate: float = 1e-3
    noisy_fraction: float = 0.7
    snr_range_db: tuple = (-5.0, 20.0)


def train_sv_embedder(utterances_by_speaker: dict, noise_pool: list, config: SvTrainConfig,
                      seed: int, embedder_config: EmbedderConfig = EmbedderConfig(),
                      prefix: str = "sv"):
    """Train a toy speaker embedder with the AP objective and noise augmentation.

    ``utterances_by_speaker`` maps speaker id to a list of float arrays; each
    step draws ``speakers_per_batch`` speakers, two random segments each.
    Returns (embedder, ap_params, per-step losses).
    """
    if len(utterances_by_speaker) < 2:
        raise ConfigurationError("embedder training needs at least two speakers")
    rng = np.random.default_rng(seed)
    embedder = SpeakerEmbedder.init(rng, embedder_config, prefix)
    ap = ApLossParams()
    opt = Adam([embedder.params, ap], config.learning_rate)
    speakers = sorted(utterances_by_speaker)
    n = min(config.speakers_per_batch, len(speakers))
    losses = []
    for step in range(config.steps):
        chosen = rng.choice(len(speakers), size=n, replace=False)
        segs = []
        for idx in chosen:
            utts = utterances_by_speaker[speakers[idx]]
            picks = rng.choice(len(utts), size=2, replace=len(utts) < 2)
            for p in picks:
                seg = random_segment(utts[p], config.segment_samples, rng)
                if noise_pool and rng.random() < config.noisy_fraction:
                    seg = augment_with_noise(seg, noise_pool, config.snr_range_db, rng)
                segs.append(seg)
        batch = SpeakerBatch(list(chosen), [[segs[2 * i], segs[2 * i + 1]] for i in range(n)])
        queries, centroids = build_ap_batch(batch, rng)
        emb = embedder.embed_tensor(np.stack(queries + centroids))
        loss = ap_loss(emb[:n], emb[n:], ap.w, ap.b)
        loss.backward()
        opt.step()
        ap.clamp()
        losses.append(loss.item())
        if step % 50 == 0:
            log.debug("sv %s step %d loss %.4f", prefix, step, losses[-1])
    return embedder, ap, losses


def random_segment(x: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size <= length:
        return np.pad(x, (0, length - x.size))
    start = int(rng.integers(0, x.size - length + 1))
    return x[start:start + length]


def augment_with_noise(seg, noise_pool, snr_range_db, rng) -> np.ndarray:
    noise = fit_length(noise_pool[int(rng.integers(len(noise_pool)))], seg.size, rng)
    snr = rng.uniform(*snr_range_db)
    e_s, e_n = float(seg @ seg), float(noise @ noise)
    if e_s == 0.0 or e_n == 0.0:
        return seg
    return seg + np.sqrt(e_s / (e_n * 10 ** (snr / 10))) * noise
