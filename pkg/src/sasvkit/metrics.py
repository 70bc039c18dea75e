"""Equal error rates over SV, SPF and SASV trial subsets.

Decision convention: a trial is accepted when ``score >= threshold``. Hence
``FRR(t)`` is the fraction of positives scoring below ``t`` and ``FAR(t)``
the fraction of negatives scoring at or above ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from .protocol import KeyKind
from .scoring import ScoreSet


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_positive: int
    n_negative: int

    @property
    def percent(self) -> float:
        return 100.0 * self.eer


def _check(pos, neg) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(pos, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg, dtype=np.float64).reshape(-1)
    if pos.size == 0:
        raise MetricError("no positive scores")
    if neg.size == 0:
        raise MetricError("no negative scores")
    if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
        raise MetricError("non-finite score")
    return pos, neg


def error_counts(pos, neg, thresholds) -> tuple[np.ndarray, np.ndarray]:
    """Counts of rejected positives and accepted negatives at each threshold."""
    pos = np.sort(pos)
    neg = np.sort(neg)
    fr = np.searchsorted(pos, thresholds, side="left")
    fa = neg.size - np.searchsorted(neg, thresholds, side="left")
    return fr, fa


def det_points(pos, neg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Operating points ``(thresholds, frr, far)``.

    Thresholds are ``-inf``, every distinct score in increasing order, and
    ``+inf``; FRR rises from 0 to 1 while FAR falls from 1 to 0.
    """
    pos, neg = _check(pos, neg)
    t = np.concatenate(([-np.inf], np.unique(np.concatenate((pos, neg))), [np.inf]))
    fr, fa = error_counts(pos, neg, t)
    return t, fr / pos.size, fa / neg.size


def eer(pos, neg) -> EerResult:
    """Equal error rate with linear interpolation between operating points.

    The FAR/FRR crossing is located with exact integer arithmetic. When the
    two rates coincide over a run of thresholds, the EER is that common rate
    and the threshold is the middle of the score interval producing it.
    Otherwise the rates are interpolated linearly between the last point with
    FRR < FAR and the first with FRR > FAR, and the threshold is interpolated
    with the same weight.
    """
    pos, neg = _check(pos, neg)
    n_p, n_n = pos.size, neg.size
    t = np.concatenate(([-np.inf], np.unique(np.concatenate((pos, neg))), [np.inf]))
    fr, fa = error_counts(pos, neg, t)
    # sign of FRR - FAR, exact in integers
    d = fr.astype(np.int64) * n_n - fa.astype(np.int64) * n_p
    i = int(np.argmax(d >= 0))
    if d[i] == 0:
        j = i
        while j + 1 < len(d) and d[j + 1] == 0:
            j += 1
        # d < 0 at the lowest score and d > 0 at +inf, so t[i-1] and t[j] are finite
        return EerResult(float(fr[i] / n_p), float(0.5 * (t[i - 1] + t[j])), n_p, n_n)
    a = i - 1
    w = -d[a] / (d[i] - d[a])
    frr = fr[a] / n_p + w * (fr[i] / n_p - fr[a] / n_p)
    far = fa[a] / n_n + w * (fa[i] / n_n - fa[a] / n_n)
    if np.isinf(t[i]):
        threshold = t[a]
    else:
        threshold = t[a] + w * (t[i] - t[a])
    return EerResult(float(0.5 * (frr + far)), float(threshold), n_p, n_n)


def eer_oracle(pos, neg) -> float:
    """Brute-force EER used only to cross-check :func:`eer`.

    Evaluates every threshold at ``-inf``, ``+inf`` and the midpoints of
    consecutive distinct scores, picks the one minimising ``|FAR - FRR|``
    and returns ``(FAR + FRR) / 2`` there.
    """
    pos, neg = _check(pos, neg)
    s = np.unique(np.concatenate((pos, neg)))
    cands = [-np.inf, np.inf] + [0.5 * (a + b) for a, b in zip(s[:-1], s[1:])]
    t = np.array(cands)[:, None]
    frr = (pos[None, :] < t).sum(axis=1) / pos.size
    far = (neg[None, :] >= t).sum(axis=1) / neg.size
    k = int(np.argmin(np.abs(far - frr)))
    return float(0.5 * (far[k] + frr[k]))


def _masks(trials):
    kinds = np.array([t.key.kind.value for t in trials])
    return (kinds == KeyKind.TARGET.value, kinds == KeyKind.NONTARGET.value,
            kinds == KeyKind.SPOOF.value)


@dataclass(frozen=True)
class EvalReport:
    sv: EerResult | None
    spf: EerResult | None
    sasv: EerResult
    per_attack: dict[str, EerResult] = field(default_factory=dict)
    n_target: int = 0
    n_nontarget: int = 0
    n_spoof: int = 0

    @property
    def pooled_spf(self) -> EerResult | None:
        return self.spf


def evaluate(scores: ScoreSet) -> EvalReport:
    """SV-, SPF- and SASV-EER plus the per-attack SPF breakdown.

    Target trials are the positives of every metric. SV negatives are the
    non-target trials, SPF negatives the spoof trials, SASV negatives both.
    A metric whose negative class is empty is reported as ``None``.
    """
    tar, non, spf = _masks(scores.trials)
    if not tar.any():
        raise MetricError("score set has no target trials")
    if not (non.any() or spf.any()):
        raise MetricError("score set has no negative trials")
    s = scores.scores
    p = s[tar]
    sv = eer(p, s[non]) if non.any() else None
    sp = eer(p, s[spf]) if spf.any() else None
    sasv = eer(p, s[non | spf])
    attacks = np.array([t.key.attack_id or "" for t in scores.trials])
    per_attack = {a: eer(p, s[spf & (attacks == a)])
                  for a in sorted(set(attacks[spf].tolist()))}
    return EvalReport(sv, sp, sasv, per_attack,
                      int(tar.sum()), int(non.sum()), int(spf.sum()))


# -- reporting -----------------------------------------------------------------

def _pct(r: EerResult | None) -> str:
    return "-" if r is None else f"{r.percent:.2f}"


def _val(x) -> str:
    return "NA" if x is None else repr(float(x))


def format_report(report: EvalReport, label: str = "system") -> str:
    """Human-readable table (percentages, 2 d.p.) followed by a key=value block."""
    width = max(len(label), 6)
    lines = [
        f"{'':<{width}}  {'SV-EER':>8}  {'SPF-EER':>8}  {'SASV-EER':>8}",
        f"{label:<{width}}  {_pct(report.sv):>8}  {_pct(report.spf):>8}  {_pct(report.sasv):>8}",
        "",
        f"n_target={report.n_target}",
        f"n_nontarget={report.n_nontarget}",
        f"n_spoof={report.n_spoof}",
    ]
    for name, r in (("sv", report.sv), ("spf", report.spf), ("sasv", report.sasv)):
        lines.append(f"{name}_eer={_val(r and r.eer)}")
    for name, r in (("sv", report.sv), ("spf", report.spf), ("sasv", report.sasv)):
        lines.append(f"threshold_{name}={_val(r and r.threshold)}")
    for a, r in report.per_attack.items():
        lines.append(f"spf_eer_{a}={_val(r.eer)}")
    return "\n".join(lines) + "\n"


def format_breakdown(reports: dict[str, EvalReport]) -> str:
    """Per-attack SPF-EER table with a pooled column, one row per system."""
    attacks = sorted({a for r in reports.values() for a in r.per_attack})
    width = max([len(k) for k in reports] + [6])
    head = f"{'System':<{width}}" + "".join(f"  {a:>6}" for a in attacks) + f"  {'P':>6}"
    lines = [head]
    for label, r in reports.items():
        cells = "".join(f"  {_pct(r.per_attack.get(a)):>6}" for a in attacks)
        lines.append(f"{label:<{width}}{cells}  {_pct(r.pooled_spf):>6}")
    lines.append("")
    for label, r in reports.items():
        for a in attacks:
            res = r.per_attack.get(a)
            lines.append(f"{label}.spf_eer_{a}={_val(res and res.eer)}")
        lines.append(f"{label}.spf_eer_pooled={_val(r.pooled_spf and r.pooled_spf.eer)}")
    return "\n".join(lines) + "\n"
