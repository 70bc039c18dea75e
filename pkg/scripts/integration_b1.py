"""Check score-sum (B1) EERs computed from externally supplied embeddings.

Inputs are an evaluation trial file, its enrolment file, a speaker embedding
store (192-d) and a CM store holding ``(bonafide, spoof)`` logits per test
utterance. The computed SV/SPF/SASV-EERs are compared with reference values
(percent) within ``--tol`` percentage points; exit status 1 on mismatch.

Usage::

    python3 scripts/integration_b1.py --protocol eval_trials.txt \\
        --enrolment eval_enrol.txt --spk-emb spk.bin --cm-emb cm.bin --format binary
"""

import argparse
import sys

from sasvkit.embeddings import load_store
from sasvkit.metrics import evaluate, format_report
from sasvkit.protocol import load_protocol
from sasvkit.scoring import score_protocol


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--protocol", required=True)
    ap.add_argument("--enrolment", required=True)
    ap.add_argument("--spk-emb", required=True)
    ap.add_argument("--cm-emb", required=True)
    ap.add_argument("--format", choices=("text", "binary"), default="text")
    ap.add_argument("--expect", type=float, nargs=3, default=(1.66, 1.76, 1.71),
                    metavar=("SV", "SPF", "SASV"), help="reference EERs in percent")
    ap.add_argument("--tol", type=float, default=0.05, help="tolerance in percentage points")
    args = ap.parse_args()

    protocol = load_protocol(args.protocol, args.enrolment)
    scores = score_protocol(protocol, load_store(args.spk_emb, args.format),
                            load_store(args.cm_emb, args.format), "b1")
    rep = evaluate(scores)
    print(format_report(rep, "B1"))
    ok = True
    for name, got, want in zip(("SV", "SPF", "SASV"), (rep.sv, rep.spf, rep.sasv), args.expect):
        diff = got.percent - want
        status = "ok" if abs(diff) <= args.tol else "MISMATCH"
        ok &= status == "ok"
        print(f"{name}-EER {got.percent:.2f}% vs {want:.2f}% ({diff:+.3f} pp) {status}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
