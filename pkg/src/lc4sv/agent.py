"""The interpolation agent: reward, Q-regression objective, training and inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .embedder import EmbedderConfig, SpeakerEmbedder
from .errors import ConfigurationError, FrozenParameterError, ShapeError
from .learn import Adam, ParamSet, Tensor, cosine_similarity, dense_forward, leaky_relu, uniform_init
from .learn import tensor as T
from .signal import Waveform, check_combinable, interpolate
from .wada import SNR_BINS, SnrBin, estimate_snr_wada, snr_to_bin

log = logging.getLogger(__name__)

ACTIONS = tuple(round(0.1 * i, 1) for i in range(11))
NUM_ACTIONS = len(ACTIONS)
NUM_SNR_BINS = len(SNR_BINS)
HIDDEN = 128


class InterpolationAgent:
    """Waveform embedder + SNR embedding table + coefficient-reward predictor.

    The waveform embedder is shared between the noisy and enhanced inputs;
    the two 256-d embeddings and the SNR embedding are concatenated and fed
    to a one-hidden-layer MLP with one output per action.
    """

    def __init__(self, embedder: SpeakerEmbedder, params: ParamSet):
        self.embedder = embedder
        self.params = params

    @classmethod
    def init(cls, rng: np.random.Generator, embedder: SpeakerEmbedder | None = None,
             embedder_config: EmbedderConfig = EmbedderConfig(), hidden: int = HIDDEN):
        if embedder is None:
            embedder = SpeakerEmbedder.init(rng, embedder_config, prefix="agent.wave")
        elif embedder.prefix != "agent.wave":
            embedder = embedder.renamed("agent.wave")
        dim = embedder.config.dim
        n_in = 3 * dim
        params = ParamSet({
            "agent.snr_embeddings": uniform_init(rng, (NUM_SNR_BINS, dim), dim),
            "agent.fc1.weight": uniform_init(rng, (hidden, n_in), n_in),
            "agent.fc1.bias": uniform_init(rng, (hidden,), n_in),
            "agent.fc2.weight": uniform_init(rng, (NUM_ACTIONS, hidden), hidden),
            "agent.fc2.bias": uniform_init(rng, (NUM_ACTIONS,), hidden),
        })
        return cls(embedder, params)

    @property
    def param_sets(self):
        return [self.embedder.params, self.params]

    def state_dict(self):
        return {**self.embedder.params.state_dict(), **self.params.state_dict()}

    def load_state_dict(self, state):
        self.embedder.params.load_state_dict({k: v for k, v in state.items() if k.startswith("agent.wave.")})
        self.params.load_state_dict({k: v for k, v in state.items() if not k.startswith("agent.wave.")})

    def predict_from_features(self, noisy_feats, enhanced_feats, bin_index) -> Tensor:
        """Predicted rewards (..., 11) from precomputed embedder features."""
        bin_index = np.asarray(bin_index, dtype=np.int64)
        e_noisy = self.embedder.project(noisy_feats)
        e_enh = self.embedder.project(enhanced_feats)
        e_snr = T.getitem(self.params["agent.snr_embeddings"], bin_index)
        joint = T.concat([e_noisy, e_enh, e_snr], axis=-1)
        p = self.params
        h = leaky_relu(dense_forward(joint, p["agent.fc1.weight"], p["agent.fc1.bias"]))
        return dense_forward(h, p["agent.fc2.weight"], p["agent.fc2.bias"])

    def forward_tensor(self, noisy, enhanced, bin_index) -> Tensor:
        return self.predict_from_features(self.embedder.features(noisy),
                                          self.embedder.features(enhanced), bin_index)

    def predict(self, noisy: np.ndarray, enhanced: np.ndarray, bin_index) -> np.ndarray:
        return self.forward_tensor(noisy, enhanced, bin_index).data


def _bin_index(bin_) -> int:
    return bin_.index if isinstance(bin_, SnrBin) else int(bin_)


def agent_forward(noisy: Waveform, enhanced: Waveform, bin_: SnrBin, agent: InterpolationAgent):
    """Predicted reward for each of the 11 coefficients."""
    check_combinable(noisy, enhanced)
    return agent.predict(noisy.as_float64(), enhanced.as_float64(), _bin_index(bin_))


# -- reward and objective -------------------------------------------------------
def reward_matrix(enhanced_emb: np.ndarray, interp_emb: np.ndarray) -> np.ndarray:
    """Rewards for every signal of an N-speaker, M-utterance batch.

    ``enhanced_emb`` is (N, M, d); ``interp_emb`` is (A, N, M, d) with one
    slice per action. Returns (N, M, A). For each anchor the positive is the
    other utterance(s) of its speaker (averaged when M > 2) and the negatives
    are all utterances of other speakers (averaged).
    """
    enhanced_emb = np.asarray(enhanced_emb, dtype=np.float64)
    interp_emb = np.asarray(interp_emb, dtype=np.float64)
    n, m, _ = enhanced_emb.shape
    if n < 2:
        raise ConfigurationError("rewards need at least one negative speaker in the batch")
    if m < 2:
        raise ConfigurationError("rewards need a positive utterance per speaker")

    def unit(x):
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    e = unit(enhanced_emb).reshape(n * m, -1)
    cos_e = e @ e.T
    speaker = np.repeat(np.arange(n), m)
    same = speaker[:, None] == speaker[None, :]
    pos_mask = same & ~np.eye(n * m, dtype=bool)
    neg_mask = ~same
    pos_e = (cos_e * pos_mask).sum(1) / pos_mask.sum(1)
    neg_e = (cos_e * neg_mask).sum(1) / neg_mask.sum(1)
    out = np.empty((n * m, interp_emb.shape[0]))
    for a in range(interp_emb.shape[0]):
        x = unit(interp_emb[a]).reshape(n * m, -1)
        cos_i = x @ x.T
        pos_i = (cos_i * pos_mask).sum(1) / pos_mask.sum(1)
        neg_i = (cos_i * neg_mask).sum(1) / neg_mask.sum(1)
        out[:, a] = (pos_i - pos_e) + (neg_e - neg_i)
    return out.reshape(n, m, -1)


@dataclass
class RewardContext:
    """One anchor signal within a batch of noisy/enhanced utterance pairs.

    ``noisy[s][u]`` and ``enhanced[s][u]`` hold utterance ``u`` of speaker
    ``s``; the anchor is ``(speaker, utterance)``.
    """

    noisy: list
    enhanced: list
    speaker: int
    utterance: int


def compute_reward(context: RewardContext, alpha: float, env_embedder) -> float:
    """Reward of coefficient ``alpha`` for the anchor signal of ``context``.

    ``env_embedder`` is any callable mapping a waveform to an embedding.
    """
    n = len(context.noisy)
    if n < 2:
        raise ConfigurationError("rewards need at least one negative speaker in the batch")

    def cos(a, b):
        return float(cosine_similarity(np.asarray(a, np.float64), np.asarray(b, np.float64)).data)

    def interp(s, u):
        return env_embedder(interpolate(context.noisy[s][u], context.enhanced[s][u], alpha))

    def enh(s, u):
        return env_embedder(context.enhanced[s][u])

    s0, u0 = context.speaker, context.utterance
    positives = [u for u in range(len(context.noisy[s0])) if u != u0]
    negatives = [(s, u) for s in range(n) if s != s0 for u in range(len(context.noisy[s]))]
    x_t, x_h = interp(s0, u0), enh(s0, u0)
    pos = np.mean([cos(x_t, interp(s0, u)) - cos(x_h, enh(s0, u)) for u in positives])
    neg = np.mean([cos(x_h, enh(s, u)) - cos(x_t, interp(s, u)) for s, u in negatives])
    return float(pos + neg)


def dqn_loss(predicted, actual) -> Tensor:
    """Mean smooth-L1 distance between actual and predicted rewards over actions.

    Leading batch axes are averaged as well.
    """
    predicted = predicted if isinstance(predicted, Tensor) else Tensor(np.asarray(predicted))
    actual = np.asarray(actual.data if isinstance(actual, Tensor) else actual, dtype=np.float64)
    if predicted.shape != actual.shape or predicted.shape[-1] != NUM_ACTIONS:
        raise ShapeError(f"predicted {predicted.shape} and actual {actual.shape} rewards must be (..., 11)")
    return T.mean(T.smooth_l1(actual - predicted))


# -- training ----------------------------------------------------------------------
@dataclass
class AgentTrainConfig:
    steps: int = 500
    learning_rate: float = 1e-4
    speakers_per_batch: int = 8
    heldout_batches: int = 8


@dataclass
class AgentSample:
    """Per-utterance quantities fixed during agent training."""

    speaker: str
    noisy_feats: np.ndarray
    enhanced_feats: np.ndarray
    bin_index: int
    enhanced_emb: np.ndarray   # (d,)
    interp_emb: np.ndarray     # (A, d)


def prepare_samples(noisy_by_speaker: dict, enhancer, env_embedder: SpeakerEmbedder,
                    agent: InterpolationAgent) -> list[AgentSample]:
    """Enhance every utterance once and embed all interpolations with the frozen env model."""
    samples = []
    for spk in sorted(noisy_by_speaker):
        for x in noisy_by_speaker[spk]:
            noisy = x if isinstance(x, Waveform) else Waveform(np.asarray(x, np.float32))
            enhanced = enhancer.enhance(noisy)
            interps = np.stack([interpolate(noisy, enhanced, a).as_float64() for a in ACTIONS])
            interp_emb = env_embedder.embed(interps)
            enh_emb = interp_emb[-1]
            samples.append(AgentSample(
                speaker=spk,
                noisy_feats=agent.embedder.features(noisy.as_float64()).data,
                enhanced_feats=agent.embedder.features(enhanced.as_float64()).data,
                bin_index=snr_to_bin(estimate_snr_wada(noisy)).index,
                enhanced_emb=enh_emb,
                interp_emb=interp_emb,
            ))
    return samples


def sample_batch(samples_by_speaker: dict, n: int, rng: np.random.Generator):
    speakers = sorted(samples_by_speaker)
    chosen = rng.choice(len(speakers), size=min(n, len(speakers)), replace=False)
    batch = []
    for idx in chosen:
        pool = samples_by_speaker[speakers[idx]]
        picks = rng.choice(len(pool), size=2, replace=False)
        batch.append([pool[p] for p in picks])
    return batch


def batch_targets(batch) -> np.ndarray:
    enh = np.stack([[s.enhanced_emb for s in utts] for utts in batch])
    interp = np.stack([[s.interp_emb for s in utts] for utts in batch])  # (N, M, A, d)
    return reward_matrix(enh, np.moveaxis(interp, 2, 0))


def batch_loss(agent: InterpolationAgent, batch, targets) -> Tensor:
    flat = [s for utts in batch for s in utts]
    pred = agent.predict_from_features(
        np.stack([s.noisy_feats for s in flat]),
        np.stack([s.enhanced_feats for s in flat]),
        np.array([s.bin_index for s in flat]))
    return dqn_loss(pred, targets.reshape(len(flat), -1))


def _group(samples):
    out: dict = {}
    for s in samples:
        out.setdefault(s.speaker, []).append(s)
    return {k: v for k, v in out.items() if len(v) >= 2}


def train_agent(agent: InterpolationAgent, train_samples: list[AgentSample],
                heldout_samples: list[AgentSample], config: AgentTrainConfig, seed: int,
                frozen=()):
    """Regress predicted rewards onto actual rewards for all 11 actions.

    ``frozen`` lists parameter sets (enhancer, environment embedder) that must
    stay untouched; they are checked byte-for-byte after training. Returns a
    dict with per-step losses and held-out losses before/after training.
    """
    for ps in frozen:
        if not ps.frozen:
            raise FrozenParameterError("enhancer and environment embedder must be frozen")
    fingerprints = [ps.fingerprint() for ps in frozen]
    rng = np.random.default_rng(seed)
    train = _group(train_samples)
    heldout = _group(heldout_samples)
    if len(train) < 2:
        raise ConfigurationError("agent training needs at least two speakers with two utterances")
    eval_rng = np.random.default_rng(seed + 1)
    heldout_batches = []
    if len(heldout) >= 2:
        for _ in range(config.heldout_batches):
            b = sample_batch(heldout, config.speakers_per_batch, eval_rng)
            heldout_batches.append((b, batch_targets(b)))

    def heldout_loss():
        if not heldout_batches:
            return float("nan")
        return float(np.mean([batch_loss(agent, b, t).item() for b, t in heldout_batches]))

    initial = heldout_loss()
    opt = Adam(agent.param_sets, config.learning_rate)
    losses = []
    for step in range(config.steps):
        batch = sample_batch(train, config.speakers_per_batch, rng)
        loss = batch_loss(agent, batch, batch_targets(batch))
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if step % 100 == 0:
            log.debug("agent step %d loss %.5f", step, losses[-1])
    final = heldout_loss()
    for ps, fp in zip(frozen, fingerprints):
        if ps.fingerprint() != fp:
            raise FrozenParameterError("a frozen model changed during agent training")
    return {"losses": losses, "heldout_initial": initial, "heldout_final": final}


# -- inference ------------------------------------------------------------------------
def argmax_alpha(predicted) -> float:
    """Coefficient with the highest predicted reward; ties go to the smallest."""
    predicted = np.asarray(predicted, dtype=np.float64)
    if predicted.shape != (NUM_ACTIONS,):
        raise ShapeError(f"expected {NUM_ACTIONS} predicted rewards, got {predicted.shape}")
    return ACTIONS[int(np.argmax(predicted))]


def select_alpha(noisy: Waveform, enhanced: Waveform, agent, predictor=None) -> float:
    """Pick the interpolation coefficient for one utterance.

    ``predictor`` overrides the agent's reward prediction, with the same
    ``(noisy, enhanced, bin)`` signature as :func:`agent_forward`.
    """
    bin_ = snr_to_bin(estimate_snr_wada(noisy))
    predict = predictor or (lambda s, e, b: agent_forward(s, e, b, agent))
    return argmax_alpha(predict(noisy, enhanced, bin_))


def lc4sv_process(noisy: Waveform, enhancer, agent, predictor=None):
    """Enhance, choose a coefficient, and blend: returns (waveform, alpha)."""
    enhanced = enhancer.enhance(noisy) if hasattr(enhancer, "enhance") else enhancer(noisy)
    alpha = select_alpha(noisy, enhanced, agent, predictor)
    return interpolate(noisy, enhanced, alpha), alpha
