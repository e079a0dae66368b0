"""Toy mask-based speech enhancer and its two training stages."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .embedder import (ApLossParams, SpeakerBatch, SpeakerEmbedder, ap_loss, build_ap_batch,
                       random_segment)
from .errors import ConfigurationError, FrozenParameterError, ShapeError
from .learn import Adam, ParamSet, Tensor, dense_forward, leaky_relu, uniform_init
from .learn import tensor as T
from .signal import NoisyCleanPair, Waveform
from .spectral import DEFAULT_CONFIGS, hann, ptn_loss

log = logging.getLogger(__name__)

MAG_FLOOR = 1e-7


@dataclass(frozen=True)
class EnhancerConfig:
    fft_size: int = 512
    hop_size: int = 128
    hidden: int = 256
    context: int = 2
    min_samples: int = 8000
    feature_scale: float = 4.0


class ToyEnhancer:
    """STFT log-magnitude frames -> dense -> LeakyReLU -> dense -> sigmoid mask.

    Log magnitudes are mean-normalised per utterance and frequency bin, and
    each frame sees ``context`` neighbouring frames on either side. The mask scales the noisy complex spectrum (so the noisy phase is kept)
    and the result is resynthesised by windowed overlap-add.
    """

    def __init__(self, params: ParamSet, config: EnhancerConfig = EnhancerConfig()):
        self.params = params
        self.config = config
        self.window = hann(config.fft_size)

    @classmethod
    def init(cls, rng: np.random.Generator, config: EnhancerConfig = EnhancerConfig()):
        bins = config.fft_size // 2 + 1
        n_in = bins * (2 * config.context + 1)
        params = ParamSet({
            "enhancer.fc1.weight": uniform_init(rng, (config.hidden, n_in), n_in),
            "enhancer.fc1.bias": uniform_init(rng, (config.hidden,), n_in),
            "enhancer.fc2.weight": uniform_init(rng, (bins, config.hidden), config.hidden),
            "enhancer.fc2.bias": uniform_init(rng, (bins,), config.hidden),
        })
        return cls(params, config)

    def _analysis(self, x: np.ndarray):
        n, hop = self.config.fft_size, self.config.hop_size
        length = x.shape[-1]
        left = n - hop
        padded_len = length + 2 * left
        padded_len += (-(padded_len - n)) % hop
        pad = [(0, 0)] * (x.ndim - 1) + [(left, padded_len - length - left)]
        padded = np.pad(x, pad)
        frames = T.frame(Tensor(padded), n, hop).data * self.window
        spec = np.fft.rfft(frames, n=n, axis=-1)
        norm = T.overlap_add(
            np.broadcast_to(self.window ** 2, (frames.shape[-2], n)), hop, padded_len).data
        return spec, norm, left, padded_len

    def _features(self, spec: np.ndarray) -> np.ndarray:
        logmag = np.log(np.abs(spec) + MAG_FLOOR)
        # Per-utterance mean removal makes the mask independent of input gain.
        feats = (logmag - logmag.mean(axis=-2, keepdims=True)) / self.config.feature_scale
        c = self.config.context
        if c == 0:
            return feats
        frames = feats.shape[-2]
        padded = np.pad(feats, [(0, 0)] * (feats.ndim - 2) + [(c, c), (0, 0)], mode="edge")
        return np.concatenate([padded[..., k:k + frames, :] for k in range(2 * c + 1)], axis=-1)

    def enhance_tensor(self, noisy) -> Tensor:
        """Differentiable enhancement of (T,) or (B, T) float arrays."""
        x = noisy.as_float64() if isinstance(noisy, Waveform) else np.asarray(noisy, np.float64)
        length = x.shape[-1]
        if length < self.config.min_samples:
            raise ShapeError(f"enhancement needs at least {self.config.min_samples} samples")
        n, hop = self.config.fft_size, self.config.hop_size
        spec, norm, left, padded_len = self._analysis(x)
        feats = self._features(spec)
        p = self.params
        h = leaky_relu(dense_forward(feats, p["enhancer.fc1.weight"], p["enhancer.fc1.bias"]))
        mask = T.sigmoid(dense_forward(h, p["enhancer.fc2.weight"], p["enhancer.fc2.bias"]))
        parts = np.stack([spec.real, spec.imag], axis=-1)
        masked = T.reshape(mask, mask.shape + (1,)) * parts
        frames = T.irfft(masked, n) * self.window
        out = T.overlap_add(frames, hop, padded_len) / np.where(norm > 1e-8, norm, 1.0)
        return out[..., left:left + length]

    def enhance(self, noisy: Waveform) -> Waveform:
        out = self.enhance_tensor(noisy.as_float64()).data
        return Waveform(out.astype(np.float32), noisy.sample_rate_hz)

    def __call__(self, noisy: Waveform) -> Waveform:
        return self.enhance(noisy)


def enhance(noisy: Waveform, enhancer: ToyEnhancer) -> Waveform:
    return enhancer.enhance(noisy)


@dataclass
class PretrainConfig:
    steps: int = 500
    learning_rate: float = 2e-4
    batch_size: int = 8
    segment_samples: int = 16000
    stft_configs: tuple = DEFAULT_CONFIGS


def _pair_arrays(pair):
    if isinstance(pair, NoisyCleanPair):
        return pair.noisy.as_float64(), pair.clean.as_float64()
    noisy, clean = pair
    return np.asarray(noisy, np.float64), np.asarray(clean, np.float64)


def _aligned_segments(noisy, clean, length, rng):
    if noisy.size <= length:
        pad = length - noisy.size
        return np.pad(noisy, (0, pad)), np.pad(clean, (0, pad))
    start = int(rng.integers(0, noisy.size - length + 1))
    return noisy[start:start + length], clean[start:start + length]


def pretrain_se(pairs, config: PretrainConfig, seed: int, enhancer: ToyEnhancer | None = None,
                enhancer_config: EnhancerConfig = EnhancerConfig()):
    """Minimise the multi-resolution reconstruction loss with Adam.

    Returns (enhancer, per-step losses).
    """
    pairs = [_pair_arrays(p) for p in pairs]
    if not pairs:
        raise ConfigurationError("pre-training needs at least one noisy/clean pair")
    rng = np.random.default_rng(seed)
    if enhancer is None:
        enhancer = ToyEnhancer.init(rng, enhancer_config)
    opt = Adam(enhancer.params, config.learning_rate)
    losses = []
    for step in range(config.steps):
        picks = rng.integers(0, len(pairs), size=config.batch_size)
        segs = [_aligned_segments(*pairs[i], config.segment_samples, rng) for i in picks]
        noisy = np.stack([s[0] for s in segs])
        clean = np.stack([s[1] for s in segs])
        loss = ptn_loss(enhancer.enhance_tensor(noisy), clean, config.stft_configs)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if step % 50 == 0:
            log.debug("pretrain step %d loss %.4f", step, losses[-1])
    return enhancer, losses


@dataclass
class FinetuneConfig:
    steps: int = 200
    learning_rate: float = 1e-4
    speakers_per_batch: int = 8
    segment_samples: int = 24000


def finetune_se(enhancer: ToyEnhancer, noisy_by_speaker: dict, proxy: SpeakerEmbedder,
                ap: ApLossParams, config: FinetuneConfig, seed: int):
    """Fine-tune the enhancer on the AP loss of a frozen proxy embedder.

    Both the query and the centroid utterance are enhanced before embedding.
    The enhancer and ``ap`` are updated; the proxy must be frozen and is
    verified byte-identical afterwards. Returns per-step losses.
    """
    if not proxy.params.frozen:
        raise FrozenParameterError("the proxy embedder must be frozen before fine-tuning")
    if len(noisy_by_speaker) < 2:
        raise ConfigurationError("fine-tuning needs at least two speakers")
    before = proxy.params.fingerprint()
    rng = np.random.default_rng(seed)
    opt = Adam([enhancer.params, ap], config.learning_rate)
    speakers = sorted(noisy_by_speaker)
    n = min(config.speakers_per_batch, len(speakers))
    losses = []
    for step in range(config.steps):
        chosen = rng.choice(len(speakers), size=n, replace=False)
        utts = []
        for idx in chosen:
            pool = noisy_by_speaker[speakers[idx]]
            picks = rng.choice(len(pool), size=2, replace=False)
            utts.append([random_segment(pool[p], config.segment_samples, rng) for p in picks])
        queries, centroids = build_ap_batch(SpeakerBatch(list(chosen), utts), rng)
        enhanced = enhancer.enhance_tensor(np.stack(queries + centroids))
        emb = proxy.embed_tensor(enhanced)
        loss = ap_loss(emb[:n], emb[n:], ap.w, ap.b)
        loss.backward()
        opt.step()
        ap.clamp()
        losses.append(loss.item())
        if step % 50 == 0:
            log.debug("finetune step %d loss %.4f", step, losses[-1])
    if proxy.params.fingerprint() != before:
        raise FrozenParameterError("proxy embedder parameters changed during fine-tuning")
    return losses
