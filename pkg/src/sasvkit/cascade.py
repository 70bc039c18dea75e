"""Cascaded CM -> ASV decisions evaluated by half-total error rate.

HTERs are error counts at fixed thresholds and are not comparable to EERs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import MetricError
from .metrics import eer
from .protocol import Subset, Trial
from .scoring import ScoreSet, aligned


class Provenance(str, Enum):
    DEV_EER = "dev-EER-point"
    MANUAL = "manual"


@dataclass(frozen=True)
class Thresholds:
    tau_cm: float
    tau_asv: float
    provenance: Provenance = Provenance.MANUAL

    def __post_init__(self):
        if not (np.isfinite(self.tau_cm) and np.isfinite(self.tau_asv)):
            raise ValueError("thresholds must be finite")


def pick_thresholds(dev_cm: ScoreSet, dev_asv: ScoreSet) -> Thresholds:
    """EER-point thresholds of each subsystem on development data.

    The CM threshold separates bona fide trials (target and non-target) from
    spoofs; the ASV threshold separates targets from non-targets.
    """
    cm_bona = np.array([t.is_bonafide for t in dev_cm.trials], dtype=bool)
    if not cm_bona.any() or cm_bona.all():
        raise MetricError("CM development set needs both bona fide and spoof trials")
    tar = np.array([t.is_target for t in dev_asv.trials], dtype=bool)
    non = np.array([t.is_nontarget for t in dev_asv.trials], dtype=bool)
    if not tar.any() or not non.any():
        raise MetricError("ASV development set needs both target and non-target trials")
    tau_cm = eer(dev_cm.scores[cm_bona], dev_cm.scores[~cm_bona]).threshold
    tau_asv = eer(dev_asv.scores[tar], dev_asv.scores[non]).threshold
    return Thresholds(tau_cm, tau_asv, Provenance.DEV_EER)


def decide(cm: float, asv: float, th: Thresholds) -> bool:
    """Accept only if the CM gate passes and the ASV score clears its threshold."""
    if cm < th.tau_cm:
        return False
    return asv >= th.tau_asv


def cascade_decisions(cm: ScoreSet, asv: ScoreSet, th: Thresholds) -> list[tuple[Trial, bool]]:
    if not aligned(cm, asv):
        raise MetricError("CM and ASV score sets are not aligned trial by trial")
    return [(t, decide(c, a, th))
            for t, c, a in zip(cm.trials, cm.scores.tolist(), asv.scores.tolist())]


@dataclass(frozen=True)
class Confusion:
    """Accept/reject counts per trial class."""
    target_acc: int = 0
    target_rej: int = 0
    nontarget_acc: int = 0
    nontarget_rej: int = 0
    spoof_acc: int = 0
    spoof_rej: int = 0

    @classmethod
    def count(cls, decisions: Sequence[tuple[Trial, bool]]) -> "Confusion":
        c = dict.fromkeys(("target_acc", "target_rej", "nontarget_acc",
                           "nontarget_rej", "spoof_acc", "spoof_rej"), 0)
        for t, acc in decisions:
            c[f"{t.key.kind.value}_{'acc' if acc else 'rej'}"] += 1
        return cls(**c)

    @property
    def n_target(self) -> int:
        return self.target_acc + self.target_rej

    @property
    def n_nontarget(self) -> int:
        return self.nontarget_acc + self.nontarget_rej

    @property
    def n_spoof(self) -> int:
        return self.spoof_acc + self.spoof_rej

    def frr(self) -> float:
        return self.target_rej / self.n_target

    def far(self, which: Subset | str) -> float:
        which = Subset(which)
        if which is Subset.SV:
            return self.nontarget_acc / self.n_nontarget
        if which is Subset.SPF:
            return self.spoof_acc / self.n_spoof
        return (self.nontarget_acc + self.spoof_acc) / (self.n_nontarget + self.n_spoof)

    def hter(self, which: Subset | str) -> float:
        which = Subset(which)
        neg = {Subset.SV: self.n_nontarget, Subset.SPF: self.n_spoof,
               Subset.SASV: self.n_nontarget + self.n_spoof}[which]
        if self.n_target == 0 or neg == 0:
            raise MetricError(f"{which.value} subset needs at least one positive and one negative trial")
        return 0.5 * (self.far(which) + self.frr())


def hter(decisions: Sequence[tuple[Trial, bool]], which: Subset | str) -> float:
    return Confusion.count(decisions).hter(which)


@dataclass(frozen=True)
class HterReport:
    sv_hter: float | None
    spf_hter: float | None
    sasv_hter: float
    confusion: Confusion
    thresholds: Thresholds


def cascade_report(decisions: Sequence[tuple[Trial, bool]], th: Thresholds) -> HterReport:
    c = Confusion.count(decisions)
    sv = c.hter(Subset.SV) if c.n_nontarget else None
    spf = c.hter(Subset.SPF) if c.n_spoof else None
    return HterReport(sv, spf, c.hter(Subset.SASV), c, th)


def format_hter_report(rep: HterReport, label: str = "Cascade") -> str:
    def pct(x):
        return "-" if x is None else f"{100 * x:.2f}"

    def val(x):
        return "NA" if x is None else repr(float(x))

    width = max(len(label), 7)
    c = rep.confusion
    lines = [
        "# HTER at fixed thresholds; not comparable to EER values",
        f"{'':<{width}}  {'SV-HTER':>8}  {'SPF-HTER':>8}  {'SASV-HTER':>9}",
        f"{label:<{width}}  {pct(rep.sv_hter):>8}  {pct(rep.spf_hter):>8}  {pct(rep.sasv_hter):>9}",
        "",
        f"sv_hter={val(rep.sv_hter)}",
        f"spf_hter={val(rep.spf_hter)}",
        f"sasv_hter={val(rep.sasv_hter)}",
        f"tau_cm={val(rep.thresholds.tau_cm)}",
        f"tau_asv={val(rep.thresholds.tau_asv)}",
        f"threshold_provenance={rep.thresholds.provenance.value}",
    ]
    for name in ("target_acc", "target_rej", "nontarget_acc", "nontarget_rej", "spoof_acc", "spoof_rej"):
        lines.append(f"{name}={getattr(c, name)}")
    return "\n".join(lines) + "\n"
