"""Trial lists, EER / MinDCF, and the processing conditions compared in the report."""
from __future__ import annotations

import itertools
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agent import ACTIONS, select_alpha
from .errors import ConfigurationError, FormatError
from .signal import Waveform, interpolate
from .wada import estimate_snr_wada

SNR_THRESHOLD_DB = 4.0


@dataclass(frozen=True)
class TrialPair:
    enroll_id: str
    test_id: str
    target: bool


@dataclass(frozen=True)
class ScoredTrial:
    trial: TrialPair
    score: float


@dataclass(frozen=True)
class DcfConfig:
    p_target: float = 0.05
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0 or self.c_miss <= 0 or self.c_fa <= 0:
            raise ConfigurationError(f"invalid detection cost settings {self}")


def build_trial_list(records, seed: int, max_per_class: int | None = None) -> list[TrialPair]:
    """Balanced target/nontarget pairs over (utterance_id, speaker_id) records.

    Every within-speaker pair is a target candidate; nontargets are drawn
    without replacement from all cross-speaker pairs. The class sizes are
    equalised by subsampling the larger candidate set.
    """
    items = sorted((r.utterance_id, r.speaker_id) if hasattr(r, "utterance_id") else tuple(r)
                   for r in records)
    by_speaker: dict = {}
    for utt, spk in items:
        by_speaker.setdefault(spk, []).append(utt)
    if len(by_speaker) < 2 or any(len(v) < 2 for v in by_speaker.values()):
        raise ConfigurationError("trial lists need >= 2 speakers with >= 2 utterances each")
    targets = [(a, b) for utts in by_speaker.values() for a, b in itertools.combinations(utts, 2)]
    speaker_of = dict(items)
    nontargets = [(a[0], b[0]) for a, b in itertools.combinations(items, 2)
                  if speaker_of[a[0]] != speaker_of[b[0]]]
    count = min(len(targets), len(nontargets))
    if max_per_class is not None:
        count = min(count, max_per_class)
    rng = np.random.default_rng(seed)
    pick_t = np.sort(rng.choice(len(targets), size=count, replace=False))
    pick_n = np.sort(rng.choice(len(nontargets), size=count, replace=False))
    trials = [TrialPair(*targets[i], True) for i in pick_t]
    trials += [TrialPair(*nontargets[i], False) for i in pick_n]
    order = rng.permutation(len(trials))
    return [trials[i] for i in order]


def write_trial_list(trials, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{int(t.target)} {t.enroll_id} {t.test_id}\n")


def read_trial_list(path) -> list[TrialPair]:
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3 or fields[0] not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: expected 'label enroll_id test_id'")
            trials.append(TrialPair(fields[1], fields[2], fields[0] == "1"))
    return trials


def _split(scores, labels=None):
    if labels is None:
        scores, labels = [s.score for s in scores], [s.trial.target for s in scores]
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    tar, non = scores[labels], scores[~labels]
    if tar.size == 0 or non.size == 0:
        raise ConfigurationError("metrics need at least one target and one nontarget trial")
    return tar, non


def error_rates(tar: np.ndarray, non: np.ndarray):
    """(thresholds, P_miss, P_fa) with acceptance meaning score >= threshold.

    Thresholds are the distinct scores followed by +inf, so the first point
    accepts everything and the last rejects everything.
    """
    thresholds = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    tar_sorted, non_sorted = np.sort(tar), np.sort(non)
    p_miss = np.searchsorted(tar_sorted, thresholds, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(non_sorted, thresholds, side="left") / non.size
    return thresholds, p_miss, p_fa


def compute_eer(scores, labels=None) -> float:
    """Equal error rate, linearly interpolated on the (P_fa, P_miss) polyline."""
    tar, non = _split(scores, labels)
    _, p_miss, p_fa = error_rates(tar, non)
    diff = p_miss - p_fa  # goes from -1 (accept all) to +1 (reject all)
    k = int(np.flatnonzero(diff >= 0.0)[0])
    if diff[k] == 0.0:
        return float(p_fa[k])
    d0, d1 = diff[k - 1], diff[k]
    lam = -d0 / (d1 - d0)
    return float(p_fa[k - 1] + lam * (p_fa[k] - p_fa[k - 1]))


def compute_min_dcf(scores, labels=None, cfg: DcfConfig = DcfConfig()) -> float:
    """Normalised minimum detection cost over all score thresholds."""
    if isinstance(labels, DcfConfig):
        cfg, labels = labels, None
    tar, non = _split(scores, labels)
    _, p_miss, p_fa = error_rates(tar, non)
    cost = cfg.c_miss * cfg.p_target * p_miss + cfg.c_fa * (1.0 - cfg.p_target) * p_fa
    default = min(cfg.c_miss * cfg.p_target, cfg.c_fa * (1.0 - cfg.p_target))
    return float(cost.min() / default)


# -- processing conditions ---------------------------------------------------------
_CONST = re.compile(r"^CONST_ALPHA\((\d(?:\.\d+)?)\)$")
BASE_CONDITIONS = ("NOISY", "SE-PTN", "SE-SV", "SE-SV-SNR")


def const_alpha(alpha: float) -> str:
    return f"CONST_ALPHA({alpha:.1f})"


def default_conditions():
    return list(BASE_CONDITIONS) + [const_alpha(a) for a in ACTIONS] + ["LC4SV"]


def parse_condition(name: str):
    if name in BASE_CONDITIONS or name == "LC4SV":
        return name, None
    m = _CONST.match(name)
    if m:
        alpha = float(m.group(1))
        if 0.0 <= alpha <= 1.0:
            return "CONST_ALPHA", alpha
    raise ConfigurationError(f"unknown condition {name!r}")


@dataclass
class ConditionResult:
    condition: str
    eer: float
    min_dcf: float
    scored: list
    alphas: dict = field(default_factory=dict)

    @property
    def num_trials(self) -> int:
        return len(self.scored)


class Evaluator:
    """Runs trials through a processing condition and scores them.

    ``models`` may contain ``se_ptn`` and ``se_sv`` enhancers, an ``agent``
    and must contain the scoring ``embedder``. Enhanced signals, SNR
    estimates and per-condition embeddings are cached per utterance.
    """

    def __init__(self, utterances: dict, models: dict, threads: int = 1,
                 snr_threshold_db: float = SNR_THRESHOLD_DB, dcf: DcfConfig = DcfConfig()):
        if "embedder" not in models:
            raise ConfigurationError("evaluation needs a scoring embedder")
        self.utterances = utterances
        self.models = models
        self.threads = max(1, int(threads))
        self.snr_threshold_db = snr_threshold_db
        self.dcf = dcf
        self._enhanced: dict = {}
        self._snr: dict = {}

    def _model(self, key):
        if self.models.get(key) is None:
            raise ConfigurationError(f"condition requires the {key!r} model checkpoint")
        return self.models[key]

    def enhanced(self, kind: str, utt: str) -> Waveform:
        key = (kind, utt)
        if key not in self._enhanced:
            self._enhanced[key] = self._model(kind).enhance(self.utterances[utt])
        return self._enhanced[key]

    def snr(self, utt: str) -> float:
        if utt not in self._snr:
            self._snr[utt] = estimate_snr_wada(self.utterances[utt])
        return self._snr[utt]

    def process(self, condition: str, utt: str):
        """Processed waveform and the coefficient used (None when not a blend)."""
        kind, alpha = parse_condition(condition)
        noisy = self.utterances[utt]
        if kind == "NOISY":
            return noisy, 0.0
        if kind == "SE-PTN":
            return self.enhanced("se_ptn", utt), 1.0
        if kind == "SE-SV":
            return self.enhanced("se_sv", utt), 1.0
        if kind == "SE-SV-SNR":
            if self.snr(utt) >= self.snr_threshold_db:
                return noisy, 0.0
            return self.enhanced("se_sv", utt), 1.0
        if kind == "CONST_ALPHA":
            return interpolate(noisy, self.enhanced("se_sv", utt), alpha), alpha
        enhanced = self.enhanced("se_sv", utt)
        chosen = select_alpha(noisy, enhanced, self._model("agent"))
        return interpolate(noisy, enhanced, chosen), chosen

    def _embed_one(self, condition, utt):
        wav, alpha = self.process(condition, utt)
        return utt, self.models["embedder"].embed(wav), alpha

    def embeddings(self, condition: str, utt_ids):
        utt_ids = sorted(set(utt_ids))
        # Cache fills are not thread-safe; warm them serially first.
        kind, _ = parse_condition(condition)
        for utt in utt_ids:
            if kind in ("SE-SV-SNR",):
                self.snr(utt)
            if kind in ("SE-SV", "SE-SV-SNR", "CONST_ALPHA", "LC4SV"):
                self.enhanced("se_sv", utt)
            if kind == "SE-PTN":
                self.enhanced("se_ptn", utt)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                rows = list(pool.map(lambda u: self._embed_one(condition, u), utt_ids))
        else:
            rows = [self._embed_one(condition, u) for u in utt_ids]
        return {u: e for u, e, _ in rows}, {u: a for u, _, a in rows}

    def run_condition(self, condition: str, trials) -> ConditionResult:
        ids = [t.enroll_id for t in trials] + [t.test_id for t in trials]
        emb, alphas = self.embeddings(condition, ids)
        unit = {u: e / np.linalg.norm(e) for u, e in emb.items()}
        scored = [ScoredTrial(t, float(unit[t.enroll_id] @ unit[t.test_id])) for t in trials]
        return ConditionResult(condition, compute_eer(scored), compute_min_dcf(scored, cfg=self.dcf),
                               scored, alphas)


def run_condition(condition: str, trials, models: dict, utterances: dict, **kwargs) -> ConditionResult:
    return Evaluator(utterances, models, **kwargs).run_condition(condition, trials)


def format_report(results) -> str:
    lines = ["condition\teer_percent\tmin_dcf\tnum_trials"]
    for r in results:
        lines.append(f"{r.condition}\t{100.0 * r.eer:.4f}\t{r.min_dcf:.4f}\t{r.num_trials}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    rows = {}
    for line in text.strip().splitlines()[1:]:
        cond, eer, dcf, n = line.split("\t")
        rows[cond] = {"eer_percent": float(eer), "min_dcf": float(dcf), "num_trials": int(n)}
    return rows


def format_scores(result: ConditionResult) -> str:
    """Per-trial dump for one condition; alpha_used lists the enrol and test coefficients."""
    lines = ["trial_id\tscore\talpha_used"]
    for s in result.scored:
        a_e, a_t = result.alphas.get(s.trial.enroll_id), result.alphas.get(s.trial.test_id)
        used = "" if a_e is None or a_t is None else f"{a_e:.1f},{a_t:.1f}"
        lines.append(f"{s.trial.enroll_id}:{s.trial.test_id}\t{s.score:.8f}\t{used}")
    return "\n".join(lines) + "\n"


def format_alpha_log(result: ConditionResult) -> str:
    lines = ["utterance_id\talpha"]
    lines += [f"{u}\t{a:.1f}" for u, a in sorted(result.alphas.items())]
    return "\n".join(lines) + "\n"
