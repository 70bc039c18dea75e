"""ASV cosine scores, CM softmax scores and score-sum fusion.

Score file: one line per trial,
``<speaker_model> <test_utt> <source> <key> <score>``, score written with 17
significant digits so float64 values survive a round trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingStore, mean_enrolment
from .errors import EmbeddingError, ProtocolError, ScoringError
from .protocol import ProtocolSet, Trial, parse_trials


class ScoreKind(str, Enum):
    ASV = "asv"
    CM = "cm"
    FUSED = "fused"


_RANGES = {ScoreKind.ASV: (-1.0, 1.0), ScoreKind.CM: (0.0, 1.0)}


@dataclass(frozen=True)
class ScoreSet:
    trials: tuple[Trial, ...]
    scores: np.ndarray
    kind: ScoreKind = ScoreKind.FUSED

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64).reshape(-1)
        if len(scores) != len(self.trials):
            raise ScoringError(f"{len(self.trials)} trials but {len(scores)} scores")
        if not np.isfinite(scores).all():
            raise ScoringError(f"non-finite score at trial {np.flatnonzero(~np.isfinite(scores))[0] + 1}")
        kind = ScoreKind(self.kind)
        if kind in _RANGES:
            lo, hi = _RANGES[kind]
            bad = np.flatnonzero((scores < lo) | (scores > hi))
            if bad.size:
                raise ScoringError(
                    f"{kind.value} score {scores[bad[0]]!r} at trial {bad[0] + 1} outside [{lo}, {hi}]")
        scores.flags.writeable = False
        object.__setattr__(self, "trials", tuple(self.trials))
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "kind", kind)

    def __len__(self) -> int:
        return len(self.trials)

    def select(self, mask) -> tuple[list[Trial], np.ndarray]:
        mask = np.asarray(mask, dtype=bool)
        return [t for t, m in zip(self.trials, mask) if m], self.scores[mask]


def cosine_score(enrol, test) -> float:
    enrol = np.asarray(enrol, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if enrol.shape != test.shape:
        raise ScoringError(f"dimension mismatch: enrol {enrol.shape} vs test {test.shape}")
    ne = np.linalg.norm(enrol)
    nt = np.linalg.norm(test)
    if ne == 0:
        raise ScoringError("zero-norm enrolment embedding")
    if nt == 0:
        raise ScoringError("zero-norm test embedding")
    c = float(np.dot(enrol, test) / (ne * nt))
    return min(1.0, max(-1.0, c))


def cm_score(logits) -> float:
    """Softmax probability of the bona fide class from ``(bonafide, spoof)`` logits."""
    b, s = (float(x) for x in logits)
    if not (math.isfinite(b) and math.isfinite(s)):
        raise ScoringError(f"non-finite CM logits ({b}, {s})")
    m = max(b, s)
    eb = math.exp(b - m)
    es = math.exp(s - m)
    return eb / (eb + es)


def score_sum(asv: float, cm: float, cm_weight: float = 1.0) -> float:
    if not -1.0 <= asv <= 1.0:
        raise ScoringError(f"ASV score {asv} outside [-1, 1]")
    if not 0.0 <= cm <= 1.0:
        raise ScoringError(f"CM score {cm} outside [0, 1]")
    if not 0.0 < cm_weight <= 1.0:
        raise ScoringError(f"CM weight {cm_weight} outside (0, 1]")
    return asv + cm_weight * cm


def _cm_value(cm_store: EmbeddingStore, utt: str) -> float:
    rec = cm_store.get(utt, "CM store")
    if cm_store.dim == 2:
        return cm_score(rec)
    if cm_store.dim == 1:
        v = float(rec[0])
        if not 0.0 <= v <= 1.0:
            raise ScoringError(f"precomputed CM score {v} for {utt!r} outside [0, 1]")
        return v
    raise ScoringError(f"bad CM record for {utt!r}: dimension {cm_store.dim}, expected 2 logits or 1 score")


def score_protocol(protocol: ProtocolSet, spk_store: EmbeddingStore | None,
                   cm_store: EmbeddingStore | None, mode: str = "b1", *,
                   cm_weight: float = 1.0, normalize_enrol: bool = False) -> ScoreSet:
    """Score every trial of ``protocol`` in order.

    ``mode`` is ``asv`` (cosine against the mean enrolment embedding), ``cm``
    (bona fide probability of the test utterance) or ``b1`` (their sum).
    ``cm_store`` holds either 2-d ``(bonafide, spoof)`` logit records or 1-d
    precomputed probabilities.
    """
    mode = mode.lower()
    if mode not in ("asv", "cm", "b1"):
        raise ValueError(f"unknown scoring mode {mode!r}")
    need_asv = mode in ("asv", "b1")
    need_cm = mode in ("cm", "b1")
    if need_asv and spk_store is None:
        raise ScoringError(f"mode {mode} needs a speaker embedding store")
    if need_cm and cm_store is None:
        raise ScoringError(f"mode {mode} needs a CM store")
    if need_cm and cm_store.dim not in (1, 2):
        raise ScoringError(f"bad CM record dimension {cm_store.dim}, expected 2 logits or 1 score")

    enrol_cache: dict[str, np.ndarray] = {}
    out = np.empty(len(protocol.trials))
    for i, t in enumerate(protocol.trials):
        try:
            if need_asv:
                if t.speaker_model not in enrol_cache:
                    enrol_cache[t.speaker_model] = mean_enrolment(
                        spk_store, protocol.enrolments[t.speaker_model], normalize_enrol)
                asv = cosine_score(enrol_cache[t.speaker_model], spk_store.get(t.test_utt, "speaker store"))
            if need_cm:
                cm = _cm_value(cm_store, t.test_utt)
        except (ScoringError, EmbeddingError) as e:
            raise type(e)(f"trial {i + 1} ({t.speaker_model} {t.test_utt}): {e}") from None
        if mode == "asv":
            out[i] = asv
        elif mode == "cm":
            out[i] = cm
        else:
            out[i] = score_sum(asv, cm, cm_weight)
    kind = {"asv": ScoreKind.ASV, "cm": ScoreKind.CM, "b1": ScoreKind.FUSED}[mode]
    return ScoreSet(protocol.trials, out, kind)


def format_score(x: float) -> str:
    return f"{x:.17g}"


def write_score_file(scores: ScoreSet, path) -> None:
    lines = [f"{t.to_line()} {format_score(s)}\n" for t, s in zip(scores.trials, scores.scores.tolist())]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_score_file(path, kind: ScoreKind | str = ScoreKind.FUSED, *,
                    strict_attack_ids: bool = True) -> ScoreSet:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ScoringError(f"cannot read score file {path}: {e.strerror or e}") from e
    trial_lines, values = [], []
    for lineno, line in enumerate(raw, start=1):
        parts = line.split()
        if not parts:
            trial_lines.append("")
            continue
        if len(parts) != 5:
            raise ScoringError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            values.append(float(parts[4]))
        except ValueError:
            raise ScoringError(f"{path}:{lineno}: bad score {parts[4]!r}") from None
        trial_lines.append(" ".join(parts[:4]))
    try:
        trials, _ = parse_trials(trial_lines, str(path), strict_attack_ids=strict_attack_ids)
    except ProtocolError as e:
        raise ScoringError(str(e)) from None
    return ScoreSet(tuple(trials), np.array(values), kind)


def aligned(a: ScoreSet, b: ScoreSet) -> bool:
    return len(a) == len(b) and all(x == y for x, y in zip(a.trials, b.trials))

