import numpy as np
import pytest

from lc4sv.corpus import make_speakers, synth_corpus
from lc4sv.errors import ConfigurationError


def test_same_seed_is_byte_identical():
    a = synth_corpus(3, 2, 0.5, seed=4, noise_per_class=1, noise_duration_s=0.5)
    b = synth_corpus(3, 2, 0.5, seed=4, noise_per_class=1, noise_duration_s=0.5)
    assert [u[2].tobytes() for u in a.utterances] == [u[2].tobytes() for u in b.utterances]
    assert [n[2].tobytes() for n in a.noise] == [n[2].tobytes() for n in b.noise]
    c = synth_corpus(3, 2, 0.5, seed=5, noise_per_class=1, noise_duration_s=0.5)
    assert a.utterances[0][2].tobytes() != c.utterances[0][2].tobytes()


def test_structure():
    c = synth_corpus(4, 3, 0.5, seed=0, noise_per_class=2, noise_duration_s=0.25)
    assert len(c.utterances) == 12
    assert {u[1] for u in c.utterances} == {s.speaker_id for s in c.speakers}
    assert sorted({n[1] for n in c.noise}) == ["babble", "pink", "white"]
    assert all(u[2].dtype == np.float32 and u[2].size == 8000 for u in c.utterances)
    assert all(0.29 <= np.abs(u[2]).max() <= 0.61 for u in c.utterances)


def test_speakers_have_distinct_pitch():
    f0 = [s.f0_hz for s in make_speakers(24, np.random.default_rng(0))]
    assert len(set(np.round(f0, 3))) == 24
    assert min(np.diff(sorted(f0))) > 0


def test_utterances_of_a_speaker_differ():
    c = synth_corpus(2, 2, 0.5, seed=1, noise_per_class=1, noise_duration_s=0.25)
    assert c.utterances[0][2].tobytes() != c.utterances[1][2].tobytes()


@pytest.mark.parametrize("args", [(1, 3, 1.0), (3, 1, 1.0), (3, 3, 0.0)])
def test_invalid_counts(args):
    with pytest.raises(ConfigurationError):
        synth_corpus(*args, seed=0)


def test_trained_embedder_separates_speakers():
    from lc4sv.embedder import EmbedderConfig, SvTrainConfig, train_sv_embedder

    c = synth_corpus(6, 4, 1.0, seed=3, noise_per_class=1, noise_duration_s=1.0)
    by_spk = {}
    for _, spk, x in c.utterances:
        by_spk.setdefault(spk, []).append(x.astype(np.float64))
    cfg = SvTrainConfig(steps=60, speakers_per_batch=6, segment_samples=12000, noisy_fraction=0.0)
    emb, _, _ = train_sv_embedder(by_spk, [], cfg, seed=0, embedder_config=EmbedderConfig(hidden=32))
    vecs = {spk: emb.embed(np.stack(utts)) for spk, utts in by_spk.items()}
    unit = {k: v / np.linalg.norm(v, axis=1, keepdims=True) for k, v in vecs.items()}
    same = [float(u[i] @ u[j]) for u in unit.values() for i in range(4) for j in range(i + 1, 4)]
    spks = sorted(unit)
    cross = [float(unit[a][i] @ unit[b][j]) for ai, a in enumerate(spks) for b in spks[ai + 1:]
             for i in range(4) for j in range(4)]
    assert np.mean(same) > np.mean(cross)
