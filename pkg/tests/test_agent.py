import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from lc4sv.agent import (ACTIONS, AgentTrainConfig, InterpolationAgent, RewardContext, argmax_alpha,
                         compute_reward, dqn_loss, lc4sv_process, prepare_samples, reward_matrix,
                         select_alpha, train_agent)
from lc4sv.embedder import EmbedderConfig, SpeakerEmbedder
from lc4sv.enhancer import EnhancerConfig, ToyEnhancer
from lc4sv.errors import ConfigurationError, FrozenParameterError, ShapeError
from lc4sv.signal import Waveform, interpolate

TINY_EMB = EmbedderConfig(n_mels=4, frame_length=32, hop_length=16, fft_size=32, hidden=5, dim=6,
                          min_samples=64)


def wav(x):
    return Waveform(np.asarray(x, dtype=np.float32))


class LookupEmbedder:
    """Stub that maps a waveform to a fixed vector keyed by its bytes."""

    def __init__(self, table):
        self.table = table

    def __call__(self, w):
        return self.table[w.samples.tobytes()]


def random_context(rng, n=3, m=2, length=32):
    noisy = [[wav(rng.standard_normal(length)) for _ in range(m)] for _ in range(n)]
    enhanced = [[wav(rng.standard_normal(length)) for _ in range(m)] for _ in range(n)]
    return RewardContext(noisy, enhanced, int(rng.integers(n)), int(rng.integers(m)))


def linear_embedder(rng, length=32, dim=5):
    proj = rng.standard_normal((dim, length))
    return lambda w: proj @ w.as_float64()


def test_hand_planted_two_speaker_reward():
    # Each signal carries a distinct constant so the stub can look it up.
    sig = {k: wav(np.full(4, v)) for k, v in
           dict(n0=0.1, n1=0.2, n2=0.3, n3=0.4, e0=0.5, e1=0.6, e2=0.7, e3=0.8).items()}
    vec = {"n0": [1, 0], "n1": [1, 1], "n2": [0, 1], "n3": [-1, 1],
           "e0": [1, 0.2], "e1": [0.5, 1], "e2": [0.1, 1], "e3": [-1, 0.3]}
    table = {sig[k].samples.tobytes(): np.array(v, float) for k, v in vec.items()}
    ctx = RewardContext([[sig["n0"], sig["n1"]], [sig["n2"], sig["n3"]]],
                        [[sig["e0"], sig["e1"]], [sig["e2"], sig["e3"]]], 0, 0)
    got = compute_reward(ctx, 0.0, LookupEmbedder(table))
    c = oracles.cos
    expected = (c(vec["n0"], vec["n1"]) - c(vec["e0"], vec["e1"])
                + 0.5 * ((c(vec["e0"], vec["e2"]) - c(vec["n0"], vec["n2"]))
                         + (c(vec["e0"], vec["e3"]) - c(vec["n0"], vec["n3"]))))
    assert abs(got - expected) < 1e-9


def test_reward_matches_brute_force_on_random_batches():
    rng = np.random.default_rng(0)
    for _ in range(60):
        ctx = random_context(rng, n=int(rng.integers(2, 4)))
        f = linear_embedder(rng)
        alpha = ACTIONS[int(rng.integers(11))]
        s, u = ctx.speaker, ctx.utterance
        interp = lambda a, b: f(interpolate(ctx.noisy[a][b], ctx.enhanced[a][b], alpha))
        enh = lambda a, b: f(ctx.enhanced[a][b])
        negs = [(a, b) for a in range(len(ctx.noisy)) if a != s for b in range(2)]
        expected = oracles.reward(enh(s, u), interp(s, u), enh(s, 1 - u), interp(s, 1 - u),
                                  [enh(*k) for k in negs], [interp(*k) for k in negs])
        assert abs(compute_reward(ctx, alpha, f) - expected) < 1e-9


def test_reward_is_zero_at_alpha_one():
    rng = np.random.default_rng(1)
    for _ in range(100):
        ctx = random_context(rng, n=int(rng.integers(2, 5)))
        assert abs(compute_reward(ctx, 1.0, linear_embedder(rng))) < 1e-9


def test_reward_needs_negatives(rng):
    ctx = random_context(rng, n=1)
    with pytest.raises(ConfigurationError):
        compute_reward(ctx, 0.5, linear_embedder(rng))


@given(st.integers(0, 2**32 - 1))
def test_reward_matrix_agrees_with_direct_path_and_is_bounded(seed):
    rng = np.random.default_rng(seed)
    ctx = random_context(rng, n=3)
    f = linear_embedder(rng)
    enh = np.array([[f(w) for w in row] for row in ctx.enhanced])
    interp = np.array([[[f(interpolate(ctx.noisy[s][u], ctx.enhanced[s][u], a)) for u in range(2)]
                        for s in range(3)] for a in ACTIONS])
    mat = reward_matrix(enh, interp)
    assert mat.shape == (3, 2, 11)
    assert np.all(np.abs(mat) <= 4.0)
    assert np.all(np.abs(mat[..., -1]) < 1e-12)
    a = int(rng.integers(11))
    direct = compute_reward(ctx, ACTIONS[a], f)
    assert abs(mat[ctx.speaker, ctx.utterance, a] - direct) < 1e-9


def test_dqn_loss_examples():
    zero = np.zeros(11)
    assert dqn_loss(zero, zero).item() == 0.0
    e = zero.copy()
    e[3] = 0.5
    assert dqn_loss(zero, e).item() == pytest.approx(0.125 / 11, abs=1e-15)
    e[3] = 2.0
    assert dqn_loss(zero, e).item() == pytest.approx(1.5 / 11, abs=1e-15)
    with pytest.raises(ShapeError):
        dqn_loss(np.zeros(10), np.zeros(10))
    with pytest.raises(ShapeError):
        dqn_loss(np.zeros(11), np.zeros(10))


def test_dqn_loss_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(60):
        p, a = rng.uniform(-3, 3, (2, 11))
        assert abs(dqn_loss(p, a).item() - oracles.dqn(p, a)) < 1e-9


def test_dqn_loss_smooth_at_unit_error():
    def loss(err):
        a = np.zeros(11)
        a[0] = err
        return dqn_loss(np.zeros(11), a).item() * 11

    h = 1e-6
    assert loss(1 - h) == pytest.approx(0.5, abs=2e-6) and loss(1 + h) == pytest.approx(0.5, abs=2e-6)
    left = (loss(1 - h) - loss(1 - 2 * h)) / h
    right = (loss(1 + 2 * h) - loss(1 + h)) / h
    assert left == pytest.approx(1.0, abs=1e-4) and right == pytest.approx(1.0, abs=1e-4)


def test_argmax_ties_choose_smallest_alpha():
    assert argmax_alpha(np.zeros(11)) == 0.0
    r = np.zeros(11)
    r[[4, 7]] = 1.0
    assert argmax_alpha(r) == 0.4
    with pytest.raises(ShapeError):
        argmax_alpha(np.zeros(5))


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_selection_invariant_to_positive_rescaling(seed, scale):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(11)
    x = wav(rng.standard_normal(4000))
    base = select_alpha(x, x, None, predictor=lambda s, e, b: r)
    assert select_alpha(x, x, None, predictor=lambda s, e, b: r * scale) == base


def tiny_agent(rng):
    return InterpolationAgent.init(rng, embedder_config=TINY_EMB, hidden=7)


def test_agent_param_names_and_shapes():
    agent = InterpolationAgent.init(np.random.default_rng(0))
    shapes = {k: v.shape for k, v in agent.state_dict().items()}
    assert shapes["agent.snr_embeddings"] == (6, 256)
    assert shapes["agent.fc1.weight"] == (128, 768)
    assert shapes["agent.fc2.weight"] == (11, 128)
    assert all(k.startswith("agent.") for k in shapes)


def test_agent_forward_dqn_gradient():
    rng = np.random.default_rng(4)
    agent = tiny_agent(rng)
    noisy, enhanced = rng.standard_normal((2, 3, 96))
    bins = np.array([0, 5, 2])
    target = rng.uniform(-1.5, 1.5, (3, 11))
    loss = lambda: dqn_loss(agent.forward_tensor(noisy, enhanced, bins), target)
    assert oracles.param_gradcheck(loss, agent.param_sets) < 1e-4


def test_lc4sv_process_recomposes(rng):
    enh = ToyEnhancer.init(rng)
    agent = InterpolationAgent.init(rng)
    noisy = wav(rng.standard_normal(16000) * 0.1)
    out, alpha = lc4sv_process(noisy, enh, agent)
    assert alpha in ACTIONS
    assert out == interpolate(noisy, enh.enhance(noisy), alpha)


def _training_setup(seed=0):
    rng = np.random.default_rng(seed)
    enh = ToyEnhancer.init(rng, EnhancerConfig(fft_size=64, hop_size=16, hidden=8, min_samples=64))
    env = SpeakerEmbedder.init(rng, TINY_EMB)
    agent = InterpolationAgent.init(rng, embedder=env, hidden=9)
    data = {f"s{i}": [rng.standard_normal(4000) * 0.1 * (i + 1) for _ in range(3)] for i in range(4)}
    return enh, env, agent, data


def test_train_agent_respects_frozen_models():
    enh, env, agent, data = _training_setup()
    samples = prepare_samples(data, enh, env, agent)
    cfg = AgentTrainConfig(steps=30, learning_rate=1e-2, speakers_per_batch=3, heldout_batches=2)
    with pytest.raises(FrozenParameterError):
        train_agent(agent, samples, samples, cfg, seed=0, frozen=[enh.params, env.params])
    enh.params.freeze()
    env.params.freeze()
    before = (enh.params.fingerprint(), env.params.fingerprint())
    out = train_agent(agent, samples, samples, cfg, seed=0, frozen=[enh.params, env.params])
    assert (enh.params.fingerprint(), env.params.fingerprint()) == before
    assert out["heldout_final"] < out["heldout_initial"]
    assert agent.embedder.prefix == "agent.wave"
