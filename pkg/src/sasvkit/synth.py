"""Synthetic speaker/CM embedding corpora with controllable separability.

Each partition (train, dev, eval) gets its own speakers. A speaker is a
random unit-norm centroid; bona fide speaker embeddings add isotropic
Gaussian noise whose expected norm is ``speaker_spread``. Spoofed utterances
copy the attacked speaker's centroid with extra noise, so a cosine ASV system
cannot tell them from targets.

The CM side is driven by a scalar bona fide logit: ``+sep/2`` for bona fide
and ``-sep/2`` for spoofs, plus unit Gaussian noise. The logit store holds
``(logit, 0)`` pairs; the CM embedding places the logit along a fixed unit
direction and fills the orthogonal complement with unit-variance noise.

Sampling uses numpy's PCG64 generator and its ziggurat normal sampler, whose
streams are fixed for a given seed across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingStore, save_store
from .protocol import (
    BONAFIDE, EnrolmentModel, ProtocolSet, Trial, TrainRow, TrialKey,
    write_enrolment_file, write_train_table, write_trial_file,
)


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 20  # per partition
    utts_per_speaker: int = 10
    n_attacks: int = 3
    spoofs_per_attack_per_speaker: int = 4
    enrol_per_model: int = 3
    nontargets_per_model: int = 8
    spk_dim: int = 192
    cm_dim: int = 160
    speaker_spread: float = 1.0
    spoof_extra_spread: float = 0.5
    spoof_cm_separation: float = 6.0
    seed: int = 0

    def validate(self):
        counts = ("n_speakers", "utts_per_speaker", "n_attacks",
                  "spoofs_per_attack_per_speaker", "enrol_per_model")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.nontargets_per_model < 0:
            raise ValueError("nontargets_per_model must be >= 0")
        if self.utts_per_speaker <= self.enrol_per_model:
            raise ValueError("utts_per_speaker must exceed enrol_per_model")
        if self.spk_dim < 2 or self.cm_dim < 2:
            raise ValueError("embedding dimensions must be >= 2")
        for name in ("speaker_spread", "spoof_extra_spread", "spoof_cm_separation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class SynthCorpus:
    config: SynthConfig
    spk_store: EmbeddingStore
    cm_emb_store: EmbeddingStore
    cm_logit_store: EmbeddingStore
    train_rows: list[TrainRow]
    dev: ProtocolSet
    eval: ProtocolSet


FILES = {
    "spk_emb": "spk_emb",
    "cm_emb": "cm_emb",
    "cm_logits": "cm_logits",
    "train_table": "train_table.txt",
    "dev_trials": "dev_trials.txt",
    "dev_enrolment": "dev_enrolment.txt",
    "eval_trials": "eval_trials.txt",
    "eval_enrolment": "eval_enrolment.txt",
}


def _f32(a: np.ndarray) -> np.ndarray:
    # values are exactly representable in both file formats
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class _Builder:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        u = self.rng.standard_normal(cfg.cm_dim)
        self.cm_dir = u / np.linalg.norm(u)
        self.ids: list[str] = []
        self.spk: list[np.ndarray] = []
        self.cm_emb: list[np.ndarray] = []
        self.logit: list[float] = []

    def centroid(self) -> np.ndarray:
        c = self.rng.standard_normal(self.cfg.spk_dim)
        return c / np.linalg.norm(c)

    def utterance(self, uid: str, centroid: np.ndarray, spoofed: bool):
        cfg = self.cfg
        spread = cfg.speaker_spread
        if spoofed:
            spread = float(np.hypot(spread, cfg.spoof_extra_spread))
        spk = centroid + spread / np.sqrt(cfg.spk_dim) * self.rng.standard_normal(cfg.spk_dim)
        sign = -1.0 if spoofed else 1.0
        logit = sign * cfg.spoof_cm_separation / 2 + self.rng.standard_normal()
        noise = self.rng.standard_normal(cfg.cm_dim)
        noise -= (noise @ self.cm_dir) * self.cm_dir
        self.ids.append(uid)
        self.spk.append(spk)
        self.cm_emb.append(logit * self.cm_dir + noise)
        self.logit.append(logit)


def _attack_ids(cfg: SynthConfig, part: str) -> list[str]:
    # eval attack ids are disjoint from train/dev
    first = 1 if part != "eval" else cfg.n_attacks + 1
    return [f"A{first + i:02d}" for i in range(cfg.n_attacks)]


def _partition(b: _Builder, part: str):
    cfg = b.cfg
    bona: dict[str, list[str]] = {}
    spoofs: dict[str, list[tuple[str, str]]] = {}
    rows = []
    n = 0
    for s in range(cfg.n_speakers):
        spk = f"{part}_spk{s:03d}"
        c = b.centroid()
        bona[spk] = []
        for _ in range(cfg.utts_per_speaker):
            uid = f"{part}_u{n:06d}"
            n += 1
            b.utterance(uid, c, False)
            bona[spk].append(uid)
            rows.append(TrainRow(spk, uid, BONAFIDE))
        spoofs[spk] = []
        for a in _attack_ids(cfg, part):
            for _ in range(cfg.spoofs_per_attack_per_speaker):
                uid = f"{part}_u{n:06d}"
                n += 1
                b.utterance(uid, c, True)
                spoofs[spk].append((uid, a))
                rows.append(TrainRow(spk, uid, a))
    return bona, spoofs, rows


def _protocol(b: _Builder, bona, spoofs) -> ProtocolSet:
    cfg = b.cfg
    k = cfg.enrol_per_model
    enrol = {spk: EnrolmentModel(spk, tuple(u[:k])) for spk, u in bona.items()}
    tests = {spk: u[k:] for spk, u in bona.items()}
    trials = []
    for spk in bona:
        trials += [Trial(spk, u, BONAFIDE, TrialKey.target()) for u in tests[spk]]
        pool = [u for other, us in tests.items() if other != spk for u in us]
        n_non = min(cfg.nontargets_per_model, len(pool))
        for i in np.sort(b.rng.choice(len(pool), size=n_non, replace=False)):
            trials.append(Trial(spk, pool[i], BONAFIDE, TrialKey.nontarget()))
        trials += [Trial(spk, u, a, TrialKey.spoof(a)) for u, a in spoofs[spk]]
    order = b.rng.permutation(len(trials))
    return ProtocolSet(tuple(trials[i] for i in order), enrol)


def generate(config: SynthConfig = SynthConfig()) -> SynthCorpus:
    config.validate()
    b = _Builder(config)
    _, _, train_rows = _partition(b, "train")
    dev_bona, dev_spoof, _ = _partition(b, "dev")
    eval_bona, eval_spoof, _ = _partition(b, "eval")
    dev = _protocol(b, dev_bona, dev_spoof)
    ev = _protocol(b, eval_bona, eval_spoof)
    logits = np.column_stack([b.logit, np.zeros(len(b.logit))])
    return SynthCorpus(
        config,
        EmbeddingStore(b.ids, _f32(np.stack(b.spk))),
        EmbeddingStore(b.ids, _f32(np.stack(b.cm_emb))),
        EmbeddingStore(b.ids, _f32(logits)),
        train_rows, dev, ev,
    )


def corpus_paths(out_dir, format: str = "text") -> dict[str, Path]:
    ext = ".bin" if format == "binary" else ".txt"
    out = Path(out_dir)
    return {k: out / (v + ext if k in ("spk_emb", "cm_emb", "cm_logits") else v)
            for k, v in FILES.items()}


def write_corpus(corpus: SynthCorpus, out_dir, format: str = "text") -> dict[str, Path]:
    paths = corpus_paths(out_dir, format)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    save_store(corpus.spk_store, paths["spk_emb"], format)
    save_store(corpus.cm_emb_store, paths["cm_emb"], format)
    save_store(corpus.cm_logit_store, paths["cm_logits"], format)
    write_train_table(corpus.train_rows, paths["train_table"])
    write_trial_file(corpus.dev.trials, paths["dev_trials"])
    write_enrolment_file(corpus.dev.enrolments, paths["dev_enrolment"])
    write_trial_file(corpus.eval.trials, paths["eval_trials"])
    write_enrolment_file(corpus.eval.enrolments, paths["eval_enrolment"])
    return paths
