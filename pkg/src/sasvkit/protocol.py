"""Trial protocols and enrolment-model definitions.

Trial file: one trial per line, four whitespace-separated fields::

    <speaker_model> <test_utt> <source> <key>

``<key>`` is one of ``target``, ``nontarget``, ``spoof`` (case-insensitive);
``<source>`` is ``bonafide`` or an attack id such as ``A07``.

Enrolment file: one model per line::

    <speaker_model> <utt1>,<utt2>,...
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ProtocolError

log = logging.getLogger(__name__)

BONAFIDE = "bonafide"
ATTACK_ID_RE = re.compile(r"^A\d+$")


class KeyKind(str, Enum):
    TARGET = "target"
    NONTARGET = "nontarget"
    SPOOF = "spoof"


class Subset(str, Enum):
    SV = "sv"
    SPF = "spf"
    SASV = "sasv"


@dataclass(frozen=True)
class TrialKey:
    kind: KeyKind
    attack_id: str | None = None

    def __post_init__(self):
        if (self.kind is KeyKind.SPOOF) != (self.attack_id is not None):
            raise ValueError("attack_id must be given iff the key is spoof")

    @classmethod
    def target(cls) -> "TrialKey":
        return cls(KeyKind.TARGET)

    @classmethod
    def nontarget(cls) -> "TrialKey":
        return cls(KeyKind.NONTARGET)

    @classmethod
    def spoof(cls, attack_id: str) -> "TrialKey":
        return cls(KeyKind.SPOOF, attack_id)


@dataclass(frozen=True)
class Trial:
    speaker_model: str
    test_utt: str
    source: str
    key: TrialKey

    def __post_init__(self):
        if self.key.kind is KeyKind.SPOOF:
            ok = self.source == self.key.attack_id
        else:
            ok = self.source == BONAFIDE
        if not ok:
            raise ValueError(
                f"source {self.source!r} inconsistent with key {self.key.kind.value!r}"
            )

    @property
    def is_target(self) -> bool:
        return self.key.kind is KeyKind.TARGET

    @property
    def is_nontarget(self) -> bool:
        return self.key.kind is KeyKind.NONTARGET

    @property
    def is_spoof(self) -> bool:
        return self.key.kind is KeyKind.SPOOF

    @property
    def is_bonafide(self) -> bool:
        return self.key.kind is not KeyKind.SPOOF

    def to_line(self) -> str:
        return f"{self.speaker_model} {self.test_utt} {self.source} {self.key.kind.value}"


@dataclass(frozen=True)
class EnrolmentModel:
    speaker_model: str
    enrol_utts: tuple[str, ...]

    def __post_init__(self):
        if not self.enrol_utts:
            raise ValueError(f"model {self.speaker_model!r} has no enrolment utterances")
        dup = [u for u, c in Counter(self.enrol_utts).items() if c > 1]
        if dup:
            raise ValueError(f"model {self.speaker_model!r} repeats utterance(s) {dup}")

    def to_line(self) -> str:
        return f"{self.speaker_model} {','.join(self.enrol_utts)}"


@dataclass(frozen=True)
class ProtocolSet:
    trials: tuple[Trial, ...]
    enrolments: Mapping[str, EnrolmentModel] = field(default_factory=dict)
    n_duplicates: int = 0

    def __post_init__(self):
        missing = sorted({t.speaker_model for t in self.trials} - set(self.enrolments))
        if missing:
            raise ProtocolError(
                f"{len(missing)} speaker model(s) without enrolment, e.g. {missing[0]!r}"
            )

    def __len__(self) -> int:
        return len(self.trials)

    def subset(self, which: Subset | str) -> list[Trial]:
        return subset(self.trials, which)


def make_trial(speaker_model: str, test_utt: str, source: str, key: str, *,
               strict_attack_ids: bool = True) -> Trial:
    """Build a :class:`Trial` from raw tokens, canonicalising case."""
    k = key.lower()
    if source.lower() == BONAFIDE:
        source = BONAFIDE
    if k == "target":
        tkey = TrialKey.target()
    elif k == "nontarget":
        tkey = TrialKey.nontarget()
    elif k == "spoof":
        if source == BONAFIDE:
            raise ValueError("spoof trial with bonafide source")
        if strict_attack_ids and not ATTACK_ID_RE.match(source):
            raise ValueError(f"attack id {source!r} does not match 'A<digits>'")
        tkey = TrialKey.spoof(source)
    else:
        raise ValueError(f"unknown key token {key!r}")
    return Trial(speaker_model, test_utt, source, tkey)


def _read_lines(path) -> list[str]:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ProtocolError(f"cannot read {path}: {e.strerror or e}") from e


def parse_trials(lines: Iterable[str], name: str = "<trials>", *,
                 strict_attack_ids: bool = True) -> tuple[list[Trial], int]:
    """Parse trial lines; return the trials and the number of duplicate lines."""
    trials = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise ProtocolError(f"{name}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            trials.append(make_trial(*parts, strict_attack_ids=strict_attack_ids))
        except ValueError as e:
            raise ProtocolError(f"{name}:{lineno}: {e}") from None
    n_dup = len(trials) - len(set(trials))
    if n_dup:
        log.warning("%s: %d duplicate trial line(s) retained", name, n_dup)
    return trials, n_dup


def parse_trial_file(path, *, strict_attack_ids: bool = True) -> tuple[list[Trial], int]:
    return parse_trials(_read_lines(path), str(path), strict_attack_ids=strict_attack_ids)


def parse_enrolments(lines: Iterable[str], name: str = "<enrolment>") -> dict[str, EnrolmentModel]:
    models: dict[str, EnrolmentModel] = {}
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        spk = parts[0]
        if len(parts) == 1:
            raise ProtocolError(f"{name}:{lineno}: empty enrolment list for {spk!r}")
        if len(parts) > 2:
            raise ProtocolError(f"{name}:{lineno}: expected 2 fields, got {len(parts)}")
        utts = tuple(u for u in parts[1].split(","))
        if any(not u for u in utts):
            raise ProtocolError(f"{name}:{lineno}: empty utterance id in list for {spk!r}")
        if spk in models:
            raise ProtocolError(f"{name}:{lineno}: duplicate speaker model {spk!r}")
        try:
            models[spk] = EnrolmentModel(spk, utts)
        except ValueError as e:
            raise ProtocolError(f"{name}:{lineno}: {e}") from None
    return models


def parse_enrolment_file(path) -> dict[str, EnrolmentModel]:
    return parse_enrolments(_read_lines(path), str(path))


def load_protocol(trial_path, enrolment_path, *, strict_attack_ids: bool = True) -> ProtocolSet:
    trials, n_dup = parse_trial_file(trial_path, strict_attack_ids=strict_attack_ids)
    enrol = parse_enrolment_file(enrolment_path)
    return ProtocolSet(tuple(trials), enrol, n_dup)


def subset(trials: Iterable[Trial], which: Subset | str) -> list[Trial]:
    """Trials used for one of the three EERs, in their original order.

    SV keeps target and non-target trials, SPF keeps target and spoof trials,
    SASV keeps everything.
    """
    which = Subset(which)
    if which is Subset.SV:
        return [t for t in trials if t.is_bonafide]
    if which is Subset.SPF:
        return [t for t in trials if not t.is_nontarget]
    return list(trials)


def write_trial_file(trials: Iterable[Trial], path) -> None:
    Path(path).write_text("".join(t.to_line() + "\n" for t in trials), encoding="utf-8")


def write_enrolment_file(models: Mapping[str, EnrolmentModel], path) -> None:
    Path(path).write_text("".join(m.to_line() + "\n" for m in models.values()),
                          encoding="utf-8")


# -- training tables -----------------------------------------------------------
# One utterance per line: ``<speaker> <utt> <source>``. Spoofed utterances name
# the speaker they imitate and carry their attack id as source.

@dataclass(frozen=True)
class TrainRow:
    speaker: str
    utt: str
    source: str

    @property
    def is_bonafide(self) -> bool:
        return self.source == BONAFIDE


def parse_train_table(path) -> list[TrainRow]:
    rows = []
    seen = set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise ProtocolError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        spk, utt, src = parts
        if src.lower() == BONAFIDE:
            src = BONAFIDE
        if utt in seen:
            raise ProtocolError(f"{path}:{lineno}: duplicate utterance {utt!r}")
        seen.add(utt)
        rows.append(TrainRow(spk, utt, src))
    return rows


def write_train_table(rows: Iterable[TrainRow], path) -> None:
    Path(path).write_text("".join(f"{r.speaker} {r.utt} {r.source}\n" for r in rows),
                          encoding="utf-8")
