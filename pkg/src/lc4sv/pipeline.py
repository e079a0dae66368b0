"""Stage orchestration: every stage reads upstream artifacts from disk and
writes its own into a directory named after the stage and the config hash.

Layout under ``work_dir``::

    mix-<hash>/          corpus WAVs, manifests, trial list, proxy embedders
    pretrain-se-<hash>/  se_ptn.ckpt
    finetune-se-<hash>/  se_sv.ckpt, ap.ckpt
    train-agent-<hash>/  agent.ckpt
    eval-<hash>/         report.tsv, per-condition score dumps, alpha log

Each stage directory is assembled under a temporary name and renamed into
place, so a crash never leaves a half-written stage behind. It also holds a
``run.log`` with the config hash, seed and final metrics.
"""
from __future__ import annotations

import logging
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from .agent import AgentTrainConfig, InterpolationAgent, lc4sv_process, prepare_samples, train_agent
from .config import ExperimentConfig
from .corpus import synth_corpus
from .embedder import ApLossParams, EmbedderConfig, SpeakerEmbedder, SvTrainConfig, train_sv_embedder
from .enhancer import EnhancerConfig, FinetuneConfig, PretrainConfig, ToyEnhancer, finetune_se, pretrain_se
from .errors import ConfigurationError
from .evaluation import (Evaluator, build_trial_list, default_conditions, format_alpha_log,
                         format_report, format_scores, read_trial_list, write_trial_list)
from .learn import ParamSet, checkpoint
from .signal import (ManifestRecord, Waveform, fit_length, mix_at_snr, read_manifest, read_wav,
                     write_manifest, write_wav)
from .spectral import ptn_loss

log = logging.getLogger(__name__)

STAGES = ("mix", "pretrain-se", "finetune-se", "train-agent", "eval", "process")
PRETRAIN_MONITOR_PAIRS = 8


# -- model configs derived from the experiment config --------------------------------
def enhancer_config(cfg: ExperimentConfig) -> EnhancerConfig:
    return EnhancerConfig(fft_size=cfg.enhancer_fft_size, hop_size=cfg.enhancer_hop_size,
                          hidden=cfg.enhancer_hidden, context=cfg.enhancer_context)


def embedder_config(cfg: ExperimentConfig) -> EmbedderConfig:
    return EmbedderConfig(hidden=cfg.sv_hidden)


def stage_dir(cfg: ExperimentConfig, stage: str) -> Path:
    return Path(cfg.work_dir) / f"{stage}-{cfg.digest()}"


def _require(path: Path) -> Path:
    if not path.exists():
        raise ConfigurationError(f"missing prerequisite artifact: {path}")
    return path


class _StageWriter:
    """Collects a stage's outputs in a temp dir and swaps it into place on success."""

    def __init__(self, final: Path):
        self.final = final
        final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=final.parent, prefix=f".{final.name}."))

    def path(self, name: str) -> Path:
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def text(self, name: str, text: str) -> None:
        self.path(name).write_text(text, encoding="utf-8")

    def tensors(self, name: str, tensors: dict) -> None:
        checkpoint.save(self.path(name), tensors)

    def commit(self) -> Path:
        if self.final.exists():
            old = self.final.with_name(f".{self.final.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(self.final, old)
            os.replace(self.tmp, self.final)
            shutil.rmtree(old)
        else:
            os.replace(self.tmp, self.final)
        return self.final

    def abort(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def _run_log(cfg: ExperimentConfig, stage: str, metrics: dict) -> str:
    lines = [f"stage = {stage}", f"config_hash = {cfg.digest()}", f"seed = {cfg.seed}"]
    lines += [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in metrics.items()]
    return "\n".join(lines) + "\n"


def read_run_log(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition(" = ")
        out[key] = value
    return out


def _load_params(path: Path) -> ParamSet:
    state = checkpoint.load(_require(path))
    return ParamSet({k: v.astype(np.float64) for k, v in state.items()})


def _state32(*param_sets) -> dict:
    out = {}
    for ps in param_sets:
        out.update({k: v.astype(np.float32) for k, v in ps.state_dict().items()})
    return out


# -- corpus bookkeeping ----------------------------------------------------------------
@dataclass(frozen=True)
class NoisyRecord:
    noisy_id: str
    speaker_id: str
    clean_id: str
    split: str        # train, agent-heldout or eval
    mixture: int
    snr_db: float
    path: str


def _write_noisy_index(records, path) -> None:
    rows = [f"{r.noisy_id}\t{r.speaker_id}\t{r.clean_id}\t{r.split}\t{r.mixture}\t{r.snr_db!r}\t{r.path}"
            for r in records]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_noisy_index(path) -> list[NoisyRecord]:
    out = []
    for line in Path(_require(Path(path))).read_text(encoding="utf-8").splitlines():
        if line:
            nid, spk, cid, split, mix, snr, p = line.split("\t")
            out.append(NoisyRecord(nid, spk, cid, split, int(mix), float(snr), p))
    return out


class Corpus:
    """Read access to the artifacts of the ``mix`` stage."""

    def __init__(self, root: Path):
        self.root = _require(root)
        self.clean_records = {r.utterance_id: r for r in read_manifest(_require(root / "clean.tsv"))}
        self.noisy_records = read_noisy_index(root / "noisy.tsv")
        self._cache: dict = {}

    def wav(self, relpath: str) -> Waveform:
        if relpath not in self._cache:
            self._cache[relpath] = read_wav(_require(self.root / relpath))
        return self._cache[relpath]

    def noisy(self, split: str, mixture: int | None = None) -> list[NoisyRecord]:
        return [r for r in self.noisy_records if r.split == split
                and (mixture is None or r.mixture == mixture)]

    def pair(self, rec: NoisyRecord):
        return self.wav(rec.path), self.wav(self.clean_records[rec.clean_id].path)

    def by_speaker(self, records) -> dict:
        out: dict = {}
        for r in records:
            out.setdefault(r.speaker_id, []).append(self.wav(r.path).as_float64())
        return out

    def proxy(self, name: str, cfg: ExperimentConfig) -> SpeakerEmbedder:
        params = _load_params(self.root / f"proxy_{name}.ckpt")
        return SpeakerEmbedder(params, embedder_config(cfg), prefix=f"proxy_{name}")


# -- stages ------------------------------------------------------------------------------
def _split_speakers(cfg, speaker_ids):
    ordered = sorted(speaker_ids)
    return ordered[:-cfg.eval_speakers], ordered[-cfg.eval_speakers:]


def stage_mix(cfg: ExperimentConfig, out: _StageWriter) -> dict:
    corpus = synth_corpus(cfg.num_speakers, cfg.utts_per_speaker, cfg.duration_s, cfg.seed,
                          cfg.noise_per_class, cfg.noise_duration_s)
    train_spk, eval_spk = _split_speakers(cfg, [s.speaker_id for s in corpus.speakers])
    clean_records = []
    for utt, spk, x in corpus.utterances:
        rel = f"clean/{utt}.wav"
        write_wav(Waveform(x), out.path(rel), encoding="float32")
        clean_records.append(ManifestRecord(utt, spk, rel, x.size / 16000))
    write_manifest(clean_records, out.path("clean.tsv"))
    # Alternate noise files between the training and the test pool.
    train_noise, test_noise = [], []
    noise_rows = []
    for i, (nid, cls, x) in enumerate(corpus.noise):
        write_wav(Waveform(x), out.path(f"noise/{nid}.wav"), encoding="float32")
        (train_noise if i % 2 == 0 else test_noise).append((nid, x.astype(np.float64)))
        noise_rows.append(f"{nid}\t{cls}\t{'train' if i % 2 == 0 else 'test'}")
    out.text("noise.tsv", "\n".join(noise_rows) + "\n")

    rng = np.random.default_rng([cfg.seed, 10])
    records = []
    by_speaker: dict = {}
    for utt, spk, x in corpus.utterances:
        by_speaker.setdefault(spk, []).append(utt)
    heldout = {u for spk in train_spk for u in by_speaker[spk][len(by_speaker[spk]) - cfg.agent_heldout_utts:]}
    clean = {utt: x for utt, _, x in corpus.utterances}
    speaker_of = {utt: spk for utt, spk, _ in corpus.utterances}
    for utt in sorted(clean):
        spk = speaker_of[utt]
        if spk in eval_spk:
            split, pool, count = "eval", test_noise, 1
        else:
            split, pool, count = ("agent-heldout" if utt in heldout else "train"), train_noise, cfg.mixtures_per_utt
        for k in range(count):
            nid, noise = pool[int(rng.integers(len(pool)))]
            noise = fit_length(noise, clean[utt].size, rng)
            pair = mix_at_snr(Waveform(clean[utt]), Waveform(noise.astype(np.float32)),
                              float(rng.uniform(cfg.snr_low_db, cfg.snr_high_db)))
            noisy_id = f"{utt}-m{k}"
            rel = f"noisy/{noisy_id}.wav"
            write_wav(pair.noisy, out.path(rel), encoding="float32")
            records.append(NoisyRecord(noisy_id, spk, utt, split, k, pair.snr_db, rel))
    _write_noisy_index(records, out.path("noisy.tsv"))
    trials = build_trial_list([(r.noisy_id, r.speaker_id) for r in records if r.split == "eval"],
                              seed=cfg.seed, max_per_class=cfg.max_trials_per_class or None)
    write_trial_list(trials, out.path("trials.txt"))

    # Three independently seeded proxy embedders trained on clean training speakers.
    utts = {spk: [clean[u].astype(np.float64) for u in by_speaker[spk]] for spk in train_spk}
    sv_cfg = SvTrainConfig(steps=cfg.sv_steps, speakers_per_batch=cfg.sv_speakers_per_batch,
                           segment_samples=cfg.sv_segment_samples, learning_rate=cfg.sv_learning_rate)
    metrics = {"num_utterances": len(clean), "num_noisy": len(records), "num_trials": len(trials)}
    for k, name in enumerate("abc"):
        emb, ap, losses = train_sv_embedder(utts, [x for _, x in train_noise], sv_cfg,
                                            seed=cfg.seed * 1000 + 20 + k,
                                            embedder_config=embedder_config(cfg),
                                            prefix=f"proxy_{name}")
        out.tensors(f"proxy_{name}.ckpt", _state32(emb.params))
        out.tensors(f"proxy_{name}_ap.ckpt", _state32(ap))
        if losses:
            metrics[f"proxy_{name}_loss_first10"] = float(np.mean(losses[:10]))
            metrics[f"proxy_{name}_loss_last10"] = float(np.mean(losses[-10:]))
    return metrics


def _monitor_batch(cfg, corpus: Corpus):
    recs = corpus.noisy("train", mixture=0)
    rng = np.random.default_rng([cfg.seed, 30])
    picks = sorted(rng.choice(len(recs), size=min(PRETRAIN_MONITOR_PAIRS, len(recs)), replace=False))
    pairs = [corpus.pair(recs[i]) for i in picks]
    return (np.stack([n.as_float64() for n, _ in pairs]), np.stack([c.as_float64() for _, c in pairs]))


def stage_pretrain(cfg: ExperimentConfig, out: _StageWriter) -> dict:
    corpus = Corpus(stage_dir(cfg, "mix"))
    pairs = [tuple(w.as_float64() for w in corpus.pair(r)) for r in corpus.noisy("train")]
    rng = np.random.default_rng([cfg.seed, 31])
    enhancer = ToyEnhancer.init(rng, enhancer_config(cfg))
    noisy, clean = _monitor_batch(cfg, corpus)
    initial = ptn_loss(enhancer.enhance_tensor(noisy), clean, cfg.stft_configs).item()
    pcfg = PretrainConfig(steps=cfg.pretrain_steps, learning_rate=cfg.pretrain_learning_rate,
                          batch_size=cfg.pretrain_batch_size,
                          segment_samples=cfg.pretrain_segment_samples,
                          stft_configs=cfg.stft_configs)
    enhancer, losses = pretrain_se(pairs, pcfg, seed=cfg.seed * 1000 + 32, enhancer=enhancer)
    final = ptn_loss(enhancer.enhance_tensor(noisy), clean, cfg.stft_configs).item()
    out.tensors("se_ptn.ckpt", _state32(enhancer.params))
    out.text("losses.tsv", "".join(f"{i}\t{v!r}\n" for i, v in enumerate(losses)))
    return {"monitor_loss_initial": initial, "monitor_loss_final": final,
            "monitor_reduction": 1.0 - final / initial}


def load_enhancer(cfg: ExperimentConfig, stage: str, name: str) -> ToyEnhancer:
    return ToyEnhancer(_load_params(stage_dir(cfg, stage) / name), enhancer_config(cfg))


def stage_finetune(cfg: ExperimentConfig, out: _StageWriter) -> dict:
    corpus = Corpus(stage_dir(cfg, "mix"))
    enhancer = load_enhancer(cfg, "pretrain-se", "se_ptn.ckpt")
    proxy = corpus.proxy("a", cfg)
    proxy.params.freeze()
    ap_state = checkpoint.load(_require(corpus.root / "proxy_a_ap.ckpt"))
    ap = ApLossParams(float(ap_state["ap.w"]), float(ap_state["ap.b"]))
    fcfg = FinetuneConfig(steps=cfg.finetune_steps, learning_rate=cfg.finetune_learning_rate,
                          speakers_per_batch=cfg.finetune_speakers_per_batch,
                          segment_samples=cfg.finetune_segment_samples)
    data = corpus.by_speaker(corpus.noisy("train", mixture=0))
    losses = finetune_se(enhancer, data, proxy, ap, fcfg, seed=cfg.seed * 1000 + 40)
    out.tensors("se_sv.ckpt", _state32(enhancer.params))
    out.tensors("ap.ckpt", _state32(ap))
    out.text("losses.tsv", "".join(f"{i}\t{v!r}\n" for i, v in enumerate(losses)))
    if not losses:
        return {}
    return {"ap_loss_first10": float(np.mean(losses[:10])), "ap_loss_last10": float(np.mean(losses[-10:]))}


def load_agent(cfg: ExperimentConfig) -> InterpolationAgent:
    state = checkpoint.load(_require(stage_dir(cfg, "train-agent") / "agent.ckpt"))
    rng = np.random.default_rng(0)
    agent = InterpolationAgent.init(rng, embedder_config=embedder_config(cfg), hidden=cfg.agent_hidden)
    agent.load_state_dict({k: v.astype(np.float64) for k, v in state.items()})
    return agent


def stage_train_agent(cfg: ExperimentConfig, out: _StageWriter) -> dict:
    corpus = Corpus(stage_dir(cfg, "mix"))
    enhancer = load_enhancer(cfg, "finetune-se", "se_sv.ckpt")
    enhancer.params.freeze()
    env = corpus.proxy("b", cfg)
    env.params.freeze()
    init_from = corpus.proxy("a", cfg)
    agent = InterpolationAgent.init(np.random.default_rng([cfg.seed, 50]), embedder=init_from,
                                    hidden=cfg.agent_hidden)

    def samples(split):
        recs = corpus.noisy(split, mixture=0)
        return prepare_samples({s: [corpus.wav(r.path) for r in recs if r.speaker_id == s]
                                for s in sorted({r.speaker_id for r in recs})},
                               enhancer, env, agent)

    acfg = AgentTrainConfig(steps=cfg.agent_steps, learning_rate=cfg.agent_learning_rate,
                            speakers_per_batch=cfg.agent_speakers_per_batch,
                            heldout_batches=cfg.agent_heldout_batches)
    result = train_agent(agent, samples("train"), samples("agent-heldout"), acfg,
                         seed=cfg.seed * 1000 + 51, frozen=[enhancer.params, env.params])
    out.tensors("agent.ckpt", {k: v.astype(np.float32) for k, v in agent.state_dict().items()})
    out.text("losses.tsv", "".join(f"{i}\t{v!r}\n" for i, v in enumerate(result["losses"])))
    return {"heldout_dqn_initial": result["heldout_initial"], "heldout_dqn_final": result["heldout_final"]}


def eval_threads() -> int:
    raw = os.environ.get("LC4SV_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"LC4SV_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError("LC4SV_THREADS must be >= 1")
    return value


def stage_eval(cfg: ExperimentConfig, out: _StageWriter) -> dict:
    corpus = Corpus(stage_dir(cfg, "mix"))
    models = {
        "embedder": corpus.proxy("c", cfg),
        "se_ptn": load_enhancer(cfg, "pretrain-se", "se_ptn.ckpt"),
        "se_sv": load_enhancer(cfg, "finetune-se", "se_sv.ckpt"),
        "agent": load_agent(cfg),
    }
    trials = read_trial_list(_require(corpus.root / "trials.txt"))
    utterances = {r.noisy_id: corpus.wav(r.path) for r in corpus.noisy("eval")}
    evaluator = Evaluator(utterances, models, threads=eval_threads(),
                          snr_threshold_db=cfg.snr_threshold_db)
    results = [evaluator.run_condition(c, trials) for c in default_conditions()]
    out.text("report.tsv", format_report(results))
    for r in results:
        out.text(f"scores/{r.condition}.tsv", format_scores(r))
    lc4sv = next(r for r in results if r.condition == "LC4SV")
    out.text("alpha_log.tsv", format_alpha_log(lc4sv))
    return {f"eer_percent[{r.condition}]": 100.0 * r.eer for r in results}


_STAGE_FUNCS = {
    "mix": stage_mix,
    "pretrain-se": stage_pretrain,
    "finetune-se": stage_finetune,
    "train-agent": stage_train_agent,
    "eval": stage_eval,
}


def run_stage(stage: str, cfg: ExperimentConfig) -> Path:
    """Run one training/evaluation stage and return its output directory."""
    if stage not in _STAGE_FUNCS:
        raise ConfigurationError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    writer = _StageWriter(stage_dir(cfg, stage))
    try:
        # Single-threaded BLAS keeps floating-point reductions, and so artifacts, reproducible.
        with threadpool_limits(limits=1):
            metrics = _STAGE_FUNCS[stage](cfg, writer)
        writer.text("config.txt", cfgmod.dumps(cfg, include_location=False))
        writer.text("run.log", _run_log(cfg, stage, metrics))
    except BaseException:
        writer.abort()
        raise
    path = writer.commit()
    log.info("%s finished -> %s", stage, path)
    return path


def run_all(cfg: ExperimentConfig, stages=STAGES[:-1]) -> dict:
    return {stage: run_stage(stage, cfg) for stage in stages}


def process_file(cfg: ExperimentConfig, in_path, out_path) -> float:
    """Apply the trained enhancer and agent to one WAV file; returns the chosen alpha."""
    enhancer = load_enhancer(cfg, "finetune-se", "se_sv.ckpt")
    agent = load_agent(cfg)
    noisy = read_wav(in_path)
    with threadpool_limits(limits=1):
        processed, alpha = lc4sv_process(noisy, enhancer, agent)
    out_path = Path(out_path)
    fd, tmp = tempfile.mkstemp(dir=out_path.parent if out_path.parent.exists() else None, suffix=".wav")
    os.close(fd)
    try:
        write_wav(processed, tmp, encoding="float32")
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return alpha
