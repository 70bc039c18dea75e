"""Command-line front end.

Every subcommand writes its outputs into ``--out DIR`` together with a single
``manifest.json``. Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import cascade, fusion_mlp, metrics, synth
from .embeddings import load_store
from .errors import InputError, NumericalError
from .manifest import start
from .protocol import load_protocol, parse_train_table
from .scoring import ScoreKind, read_score_file, score_protocol, write_score_file

log = logging.getLogger("sasvkit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items()) if k != "func"}


def _load_protocol(args, man):
    for p in (args.protocol, args.enrolment):
        if not Path(p).is_file():
            raise InputError(f"file not found: {p}")
        man.add_input(p)
    return load_protocol(args.protocol, args.enrolment,
                         strict_attack_ids=not args.loose_attack_ids)


def _load(path, fmt, man):
    store = load_store(path, fmt)
    man.add_input(path)
    return store


def cmd_score(args, argv):
    man = start(argv, _config(args))
    protocol = _load_protocol(args, man)
    spk = _load(args.spk_emb, args.format, man) if args.mode in ("asv", "b1") else None
    cm = _load(args.cm_emb, args.format, man) if args.mode in ("cm", "b1") else None
    scores = score_protocol(protocol, spk, cm, args.mode, cm_weight=args.cm_weight,
                            normalize_enrol=args.normalize_enrol)
    out = _out_dir(args)
    write_score_file(scores, out / "scores.txt")
    man.add_output(out / "scores.txt")
    man.write(out)
    print(f"wrote {len(scores)} {scores.kind.value} scores to {out / 'scores.txt'}")


def cmd_train_fusion(args, argv):
    man = start(argv, _config(args), args.seed)
    if not Path(args.train_table).is_file():
        raise InputError(f"file not found: {args.train_table}")
    rows = parse_train_table(args.train_table)
    man.add_input(args.train_table)
    spk = _load(args.spk_emb, args.format, man)
    cm = _load(args.cm_emb, args.format, man)
    pairs = fusion_mlp.build_train_pairs(rows, args.seed)
    cfg = fusion_mlp.TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        hidden=tuple(args.hidden), negative_slope=args.negative_slope,
        lr_max=args.lr_max, lr_min=args.lr_min, period=args.period,
        restart_mult=args.restart_mult)
    result = fusion_mlp.train(spk, cm, pairs, cfg)
    x, y = fusion_mlp.pair_inputs(pairs, spk, cm)
    acc = fusion_mlp.accuracy(result.params, x, y)
    out = _out_dir(args)
    fusion_mlp.save_model(result.params, out / "model.bin", result.metadata)
    fusion_mlp.write_loss_trace(result.trace, out / "loss.csv")
    (out / "train_summary.txt").write_text(
        f"n_pairs={len(pairs)}\nsteps={len(result.trace)}\ntrain_accuracy={acc!r}\n"
        + (f"final_loss={result.trace[-1][2]!r}\n" if result.trace else ""),
        encoding="utf-8")
    for name in ("model.bin", "loss.csv", "train_summary.txt"):
        man.add_output(out / name)
    man.write(out)
    print(f"trained on {len(pairs)} pairs, {len(result.trace)} steps; "
          f"train accuracy {100 * acc:.2f}%")


def cmd_score_fusion(args, argv):
    man = start(argv, _config(args))
    params, _ = fusion_mlp.load_model(args.model)
    man.add_input(args.model)
    protocol = _load_protocol(args, man)
    spk = _load(args.spk_emb, args.format, man)
    cm = _load(args.cm_emb, args.format, man)
    scores = fusion_mlp.score_b2(params, protocol, spk, cm, args.normalize_enrol)
    out = _out_dir(args)
    write_score_file(scores, out / "scores.txt")
    man.add_output(out / "scores.txt")
    man.write(out)
    print(f"wrote {len(scores)} fused scores to {out / 'scores.txt'}")


def _read_scores(path, man, args, kind=ScoreKind.FUSED):
    scores = read_score_file(path, kind, strict_attack_ids=not args.loose_attack_ids)
    man.add_input(path)
    return scores


def cmd_eval(args, argv):
    man = start(argv, _config(args))
    scores = _read_scores(args.scores, man, args)
    report = metrics.evaluate(scores)
    text = metrics.format_report(report, args.label)
    out = _out_dir(args)
    (out / "report.txt").write_text(text, encoding="utf-8")
    man.add_output(out / "report.txt")
    man.write(out)
    print(text, end="")


def cmd_cascade(args, argv):
    man = start(argv, _config(args))
    dev_cm = _read_scores(args.dev_cm, man, args, ScoreKind.CM)
    dev_asv = _read_scores(args.dev_asv, man, args, ScoreKind.ASV)
    ev_cm = _read_scores(args.eval_cm, man, args, ScoreKind.CM)
    ev_asv = _read_scores(args.eval_asv, man, args, ScoreKind.ASV)
    if args.tau_cm is not None and args.tau_asv is not None:
        th = cascade.Thresholds(args.tau_cm, args.tau_asv, cascade.Provenance.MANUAL)
    else:
        th = cascade.pick_thresholds(dev_cm, dev_asv)
    rep = cascade.cascade_report(cascade.cascade_decisions(ev_cm, ev_asv, th), th)
    text = cascade.format_hter_report(rep, args.label)
    out = _out_dir(args)
    (out / "hter.txt").write_text(text, encoding="utf-8")
    man.add_output(out / "hter.txt")
    man.write(out)
    print(text, end="")


def cmd_breakdown(args, argv):
    man = start(argv, _config(args))
    reports = {}
    for item in args.scores:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = Path(item).parent.name or item, item
        reports[label] = metrics.evaluate(_read_scores(path, man, args))
    text = metrics.format_breakdown(reports)
    out = _out_dir(args)
    (out / "breakdown.txt").write_text(text, encoding="utf-8")
    man.add_output(out / "breakdown.txt")
    man.write(out)
    print(text, end="")


def cmd_synth(args, argv):
    cfg = synth.SynthConfig(
        n_speakers=args.n_speakers, utts_per_speaker=args.utts_per_speaker,
        n_attacks=args.n_attacks, spoofs_per_attack_per_speaker=args.spoofs_per_attack,
        enrol_per_model=args.enrol_per_model, nontargets_per_model=args.nontargets_per_model,
        spk_dim=args.spk_dim, cm_dim=args.cm_dim, speaker_spread=args.speaker_spread,
        spoof_extra_spread=args.spoof_extra_spread,
        spoof_cm_separation=args.spoof_cm_separation, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as e:
        raise InputError(str(e)) from None
    man = start(argv, _config(args), args.seed)
    corpus = synth.generate(cfg)
    out = _out_dir(args)
    paths = synth.write_corpus(corpus, out, args.format)
    for p in paths.values():
        man.add_output(p)
    man.write(out)
    print(f"wrote synthetic corpus to {out} "
          f"({len(corpus.dev)} dev / {len(corpus.eval)} eval trials, "
          f"{len(corpus.train_rows)} training utterances)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sasvkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, protocol=True, embeddings=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--loose-attack-ids", action="store_true",
                        help="accept attack ids not of the form A<digits>")
        if protocol:
            sp.add_argument("--protocol", required=True, help="trial file")
            sp.add_argument("--enrolment", required=True, help="enrolment file")
        if embeddings:
            sp.add_argument("--spk-emb", help="speaker embedding store")
            sp.add_argument("--cm-emb", help="CM store (logits/scores or embeddings)")
            sp.add_argument("--format", choices=("text", "binary"), default="text")
            sp.add_argument("--normalize-enrol", action="store_true",
                            help="length-normalise enrolment embeddings before averaging")

    sp = sub.add_parser("score", help="ASV, CM or score-sum (B1) scores")
    common(sp)
    sp.add_argument("--mode", choices=("asv", "cm", "b1"), default="b1")
    sp.add_argument("--cm-weight", type=float, default=1.0)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("train-fusion", help="train the DNN fusion back end (B2)")
    common(sp, protocol=False)
    sp.add_argument("--train-table", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--hidden", type=int, nargs="+", default=list(fusion_mlp.HIDDEN))
    sp.add_argument("--negative-slope", type=float, default=0.01)
    sp.add_argument("--lr-max", type=float, default=0.1)
    sp.add_argument("--lr-min", type=float, default=0.001)
    sp.add_argument("--period", type=int, default=None, help="restart period in steps (default: one epoch)")
    sp.add_argument("--restart-mult", type=int, default=1)
    sp.set_defaults(func=cmd_train_fusion)

    sp = sub.add_parser("score-fusion", help="score a protocol with a trained B2 model")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_score_fusion)

    sp = sub.add_parser("eval", help="SV-, SPF- and SASV-EER of a score file")
    common(sp, protocol=False, embeddings=False)
    sp.add_argument("--scores", required=True)
    sp.add_argument("--label", default="system")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("cascade", help="cascaded CM->ASV decisions, HTER report")
    common(sp, protocol=False, embeddings=False)
    sp.add_argument("--dev-cm", required=True, help="dev CM score file")
    sp.add_argument("--dev-asv", required=True, help="dev ASV score file")
    sp.add_argument("--eval-cm", required=True, help="eval CM score file")
    sp.add_argument("--eval-asv", required=True, help="eval ASV score file")
    sp.add_argument("--tau-cm", type=float, help="manual CM threshold (with --tau-asv)")
    sp.add_argument("--tau-asv", type=float, help="manual ASV threshold (with --tau-cm)")
    sp.add_argument("--label", default="Cascade")
    sp.set_defaults(func=cmd_cascade)

    sp = sub.add_parser("breakdown", help="per-attack SPF-EER table")
    common(sp, protocol=False, embeddings=False)
    sp.add_argument("--scores", required=True, action="append", metavar="[LABEL=]PATH")
    sp.set_defaults(func=cmd_breakdown)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--format", choices=("text", "binary"), default="text")
    d = synth.SynthConfig()
    sp.add_argument("--n-speakers", type=int, default=d.n_speakers)
    sp.add_argument("--utts-per-speaker", type=int, default=d.utts_per_speaker)
    sp.add_argument("--n-attacks", type=int, default=d.n_attacks)
    sp.add_argument("--spoofs-per-attack", type=int, default=d.spoofs_per_attack_per_speaker)
    sp.add_argument("--enrol-per-model", type=int, default=d.enrol_per_model)
    sp.add_argument("--nontargets-per-model", type=int, default=d.nontargets_per_model)
    sp.add_argument("--spk-dim", type=int, default=d.spk_dim)
    sp.add_argument("--cm-dim", type=int, default=d.cm_dim)
    sp.add_argument("--speaker-spread", type=float, default=d.speaker_spread)
    sp.add_argument("--spoof-extra-spread", type=float, default=d.spoof_extra_spread)
    sp.add_argument("--spoof-cm-separation", type=float, default=d.spoof_cm_separation)
    sp.set_defaults(func=cmd_synth)
    return p


def _required_stores(args) -> list[str]:
    if args.command == "score":
        return [n for n, modes in (("spk_emb", ("asv", "b1")), ("cm_emb", ("cm", "b1")))
                if args.mode in modes]
    if args.command in ("train-fusion", "score-fusion"):
        return ["spk_emb", "cm_emb"]
    return []


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in _required_stores(args):
        if getattr(args, name) is None:
            parser.error(f"--{name.replace('_', '-')} is required for {args.command}")
    try:
        args.func(args, argv)
    except NumericalError as e:
        print(f"sasvkit: numerical failure: {e}", file=sys.stderr)
        return 2
    except (InputError, OSError) as e:
        print(f"sasvkit: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
