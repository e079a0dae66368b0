import numpy as np
import pytest

import oracles
from lc4sv.embedder import ApLossParams, EmbedderConfig, SpeakerEmbedder
from lc4sv.enhancer import (EnhancerConfig, FinetuneConfig, PretrainConfig, ToyEnhancer,
                            finetune_se, pretrain_se)
from lc4sv.errors import FrozenParameterError, ShapeError
from lc4sv.signal import Waveform, mix_at_snr
from lc4sv.spectral import StftConfig, TINY_CONFIG, ptn_loss

TINY_ENH = EnhancerConfig(fft_size=32, hop_size=8, hidden=6, min_samples=64)
TINY_EMB = EmbedderConfig(n_mels=4, frame_length=32, hop_length=16, fft_size=32, hidden=5, dim=6,
                          min_samples=64)


def open_mask(enh):
    # Saturate the sigmoid so the mask is 1 to machine precision.
    for name in enh.params.names():
        enh.params[name].data[...] = 0.0
    enh.params["enhancer.fc2.bias"].data[...] = 60.0
    return enh


def test_open_mask_reconstructs_input(rng):
    enh = open_mask(ToyEnhancer.init(rng))
    x = rng.standard_normal(8123) * 0.2
    np.testing.assert_allclose(enh.enhance_tensor(x).data, x, atol=1e-12)


def test_closed_mask_gives_silence(rng):
    enh = open_mask(ToyEnhancer.init(rng))
    enh.params["enhancer.fc2.bias"].data[...] = -800.0
    assert np.max(np.abs(enh.enhance_tensor(rng.standard_normal(9000)).data)) < 1e-200


def test_output_length_and_type(rng):
    enh = ToyEnhancer.init(rng)
    noisy = Waveform((rng.standard_normal(10001) * 0.1).astype(np.float32))
    out = enh.enhance(noisy)
    assert out.samples.shape == (10001,) and out.samples.dtype == np.float32
    assert enh.enhance_tensor(np.stack([noisy.as_float64()] * 2)).shape == (2, 10001)


def test_short_input_rejected(rng):
    with pytest.raises(ShapeError):
        ToyEnhancer.init(rng).enhance(Waveform(np.zeros(100, np.float32)))


def test_enhancer_ptn_gradient():
    rng = np.random.default_rng(0)
    enh = ToyEnhancer.init(rng, TINY_ENH)
    noisy, clean = rng.standard_normal((2, 2, 80))
    loss = lambda: ptn_loss(enh.enhance_tensor(noisy), clean, [TINY_CONFIG, StftConfig(16, 4, 8)])
    assert oracles.param_gradcheck(loss, [enh.params]) < 1e-4


def _pairs(rng, n=6, length=2000):
    t = np.arange(length) / 16000
    out = []
    for i in range(n):
        clean = (0.3 * np.sin(2 * np.pi * (200 + 50 * i) * t) * (t * 64 % 1 < 0.6)).astype(np.float32)
        noise = rng.standard_normal(length).astype(np.float32)
        out.append(mix_at_snr(Waveform(clean), Waveform(noise), 0.0))
    return out


def test_pretraining_reduces_loss_and_is_deterministic():
    pairs = _pairs(np.random.default_rng(1))
    cfg = PretrainConfig(steps=60, learning_rate=3e-3, batch_size=4, segment_samples=800,
                         stft_configs=(TINY_CONFIG,))
    enh, losses = pretrain_se(pairs, cfg, seed=5, enhancer_config=TINY_ENH)
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    enh2, losses2 = pretrain_se(pairs, cfg, seed=5, enhancer_config=TINY_ENH)
    assert losses == losses2 and enh.params.fingerprint() == enh2.params.fingerprint()


def test_finetune_requires_frozen_proxy_and_keeps_it_intact():
    rng = np.random.default_rng(2)
    enh = ToyEnhancer.init(rng, TINY_ENH)
    proxy = SpeakerEmbedder.init(rng, TINY_EMB)
    data = {f"s{i}": [rng.standard_normal(300) for _ in range(3)] for i in range(3)}
    cfg = FinetuneConfig(steps=3, learning_rate=1e-3, speakers_per_batch=3, segment_samples=200)
    with pytest.raises(FrozenParameterError):
        finetune_se(enh, data, proxy, ApLossParams(), cfg, seed=0)
    proxy.params.freeze()
    before = proxy.params.fingerprint()
    enh_before = enh.params.fingerprint()
    losses = finetune_se(enh, data, proxy, ApLossParams(), cfg, seed=0)
    assert len(losses) == 3
    assert proxy.params.fingerprint() == before
    assert enh.params.fingerprint() != enh_before


@pytest.mark.parametrize("gain", [0.01, 3.0])
def test_enhancer_is_nearly_gain_equivariant(gain):
    rng = np.random.default_rng(8)
    enh = ToyEnhancer.init(rng)
    x = rng.standard_normal(9000) * 0.1
    out, scaled = enh.enhance_tensor(x).data, enh.enhance_tensor(gain * x).data
    # Features are mean-normalised log magnitudes, so only the magnitude floor (reached in zero-padded edge frames) breaks exactness.
    assert np.max(np.abs(scaled / gain - out)) < 1e-5 * np.max(np.abs(out))
