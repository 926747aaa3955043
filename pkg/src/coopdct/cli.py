"""Command-line entry point: annotate, mine-attrs, train, transfer, evaluate.

Exit status is 0 on success, 1 on a usage error (bad flags, unknown config
keys) and 2 when a pipeline stage fails at run time.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import constraints, corpus, decode, evaluation, trainer
from .corpus import Domain
from .netcore import load_checkpoint

USAGE_ERROR, RUNTIME_ERROR = 1, 2
DOMAINS = {"src": Domain.SOURCE, "tgt": Domain.TARGET}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _lexicon_args(p):
    p.add_argument("--adjectives", help="adjective lexicon, whitespace separated")
    p.add_argument("--proper-nouns", help="proper-noun lexicon, whitespace separated")
    p.add_argument("--markers", help="attribute marker file from mine-attrs")
    p.add_argument("--max-len", type=int, default=corpus.DEFAULT_MAX_LEN)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coopdct", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("annotate", help="write constraint profile TSVs for both corpora")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--src-annotations", help="external POS/tree-height TSV for --src")
    p.add_argument("--tgt-annotations", help="external POS/tree-height TSV for --tgt")
    _lexicon_args(p)

    p = sub.add_parser("mine-attrs", help="mine salient domain n-grams")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="marker file to write")
    p.add_argument("--gamma", type=float, default=15.0)
    p.add_argument("--lambda-s", type=float, default=1.0)
    p.add_argument("--max-n", type=int, default=4)

    p = sub.add_parser("train", help="train a model; extra --key value pairs override the config",
                       epilog="any TrainConfig field may be given as --field value")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--profiles", help="directory holding src_profiles.tsv and tgt_profiles.tsv")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("transfer", help="rewrite sentences into the other domain")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="defaults to <input>.<direction>")
    p.add_argument("--direction", choices=(decode.SRC2TGT, decode.TGT2SRC), default=decode.SRC2TGT)
    p.add_argument("--strategy", choices=("greedy", "nucleus"), default="greedy")
    p.add_argument("--p", type=float, default=0.6)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-decode-len", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tsv", action="store_true", help="also write source<TAB>transferred")

    p = sub.add_parser("evaluate", help="score transferred sentences")
    p.add_argument("--source", required=True)
    p.add_argument("--transferred", required=True)
    p.add_argument("--target-domain", choices=tuple(DOMAINS), default="tgt")
    p.add_argument("--train-src", required=True, help="source training corpus (classifier)")
    p.add_argument("--train-tgt", required=True, help="target training corpus (classifier, fluency)")
    p.add_argument("--ckpt", help="checkpoint whose embeddings back the similarity scorer")
    p.add_argument("--acc-scores", help="external index<TAB>score TSV replacing the classifier")
    p.add_argument("--fl-scores", help="external index<TAB>score TSV replacing the fluency scorer")
    p.add_argument("--sim-scores", help="external index<TAB>score TSV replacing the similarity scorer")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prefix", default="eval")
    p.add_argument("--seed", type=int, default=0)
    _lexicon_args(p)
    return parser


def _echo(out_dir: Path, name: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in sorted(vars(args).items()) if k != "func"]
    (out_dir / f"{name}.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _lexicons(args) -> tuple[constraints.Lexicons, constraints.AttributeMarkerSet | None]:
    lex = constraints.Lexicons.from_files(args.adjectives, args.proper_nouns)
    markers = constraints.AttributeMarkerSet.load(args.markers) if args.markers else None
    return lex, markers


def _plain_sequences(path, domain: Domain, max_len: int) -> list[corpus.TokenSequence]:
    # profiles only look at words, so a throwaway vocabulary is enough
    lines = corpus.read_lines(path)
    vocab = corpus.vocabulary_from_sentences([ln for ln in lines if ln.strip()], max_vocab=10**9)
    return corpus.encode_corpus(lines, vocab, domain, max_len)


def cmd_annotate(args) -> None:
    out = Path(args.out)
    _echo(out, "annotate", args)
    lex, markers = _lexicons(args)
    for key, path, ann_path in (("src", args.src, args.src_annotations), ("tgt", args.tgt, args.tgt_annotations)):
        seqs = _plain_sequences(path, DOMAINS[key], args.max_len)
        ann = None
        if ann_path:
            ann = constraints.load_annotations(ann_path, [len(s) for s in seqs])
            ann = [ann[i] for i in range(len(seqs))]
        profiles = constraints.profile_corpus(seqs, lex, markers, ann)
        constraints.write_profiles(out / f"{key}_profiles.tsv", profiles)


def cmd_mine_attrs(args) -> None:
    src = [ln for ln in corpus.read_lines(args.src) if ln.strip()]
    tgt = [ln for ln in corpus.read_lines(args.tgt) if ln.strip()]
    markers = constraints.mine_attribute_markers(src, tgt, args.gamma, args.lambda_s, args.max_n)
    out = Path(args.out)
    _echo(out.parent, "mine-attrs", args)
    markers.save(out)


def _train_config(args, extra: list[str]) -> trainer.TrainConfig:
    overrides = {}
    it = iter(extra)
    for flag in it:
        if not flag.startswith("--"):
            raise UsageError(f"unexpected argument {flag!r}")
        key, sep, value = flag[2:].partition("=")
        if not sep:
            value = next(it, None)
            if value is None:
                raise UsageError(f"missing value for {flag}")
        overrides[key.replace("-", "_")] = value
    try:
        config = trainer.read_config(args.config) if args.config else trainer.TrainConfig()
        return config.with_overrides(**overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args, extra: list[str]) -> None:
    config = _train_config(args, extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = corpus.build_vocabulary([args.src, args.tgt], config.max_vocab)
    vocab.save(out / "vocab.txt")
    corpora = {Domain.SOURCE: corpus.load_corpus(args.src, vocab, Domain.SOURCE, config.max_len),
               Domain.TARGET: corpus.load_corpus(args.tgt, vocab, Domain.TARGET, config.max_len)}
    profiles = None
    if args.profiles:
        pdir = Path(args.profiles)
        profiles = {Domain.SOURCE: constraints.read_profiles(pdir / "src_profiles.tsv"),
                    Domain.TARGET: constraints.read_profiles(pdir / "tgt_profiles.tsv")}
        for d in profiles:
            if len(profiles[d]) != len(corpora[d]):
                raise constraints.ConstraintError(
                    f"{d.name.lower()} profiles: {len(profiles[d])} rows for {len(corpora[d])} sentences")
    trainer.train(config, corpora, vocab.id_to_token, out, profiles=profiles, resume=args.resume)


def cmd_transfer(args) -> None:
    payload = load_checkpoint(args.ckpt)
    vocab = corpus.Vocabulary(payload["vocab"][len(corpus.RESERVED):])
    max_len = int(payload["config"].get("max_len", corpus.DEFAULT_MAX_LEN))
    src_dom, _ = decode.direction_domains(args.direction)
    lines = corpus.read_lines(args.input)
    # keep line alignment: blank input lines map to blank output lines
    keep = [i for i, ln in enumerate(lines) if ln.strip()]
    seqs = [corpus.encode_sentence(lines[i], vocab, max_len, src_dom) for i in keep]
    cfg = decode.DecodeConfig(args.strategy, args.p, args.temperature, args.max_decode_len, args.seed)
    out_seqs = decode.transfer(payload["model"], seqs, args.direction, cfg, vocab)
    result = [""] * len(lines)
    for i, s in zip(keep, out_seqs):
        result[i] = s.raw_text
    out = Path(args.output or f"{args.input}.{args.direction}")
    _echo(out.parent, "transfer", args)
    out.write_text("".join(r + "\n" for r in result), encoding="utf-8")
    if args.tsv:
        rows = [f"{a}\t{b}" for a, b in zip(lines, result)]
        out.with_suffix(out.suffix + ".tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")


def cmd_evaluate(args) -> None:
    out = Path(args.out)
    _echo(out, "evaluate", args)
    source = corpus.read_lines(args.source)
    transferred = corpus.read_lines(args.transferred)
    if len(source) != len(transferred):
        raise evaluation.EvaluationError(f"{len(source)} source lines vs {len(transferred)} transferred lines")
    n = len(source)
    train_src = [ln for ln in corpus.read_lines(args.train_src) if ln.strip()]
    train_tgt = [ln for ln in corpus.read_lines(args.train_tgt) if ln.strip()]
    target = DOMAINS[args.target_domain]
    acc = evaluation.load_external_scores(args.acc_scores, n) if args.acc_scores else None
    fl = evaluation.load_external_scores(args.fl_scores, n) if args.fl_scores else None
    sim = evaluation.load_external_scores(args.sim_scores, n) if args.sim_scores else None
    if acc is None:
        clf = evaluation.train_domain_classifier(train_src, train_tgt, seed=args.seed)
        acc = clf.acc(transferred, target)
    if fl is None:
        fluency_corpus = train_tgt if target == Domain.TARGET else train_src
        fl = evaluation.FluencyScorer(fluency_corpus, seed=args.seed).fl(transferred)
    if sim is None:
        if not args.ckpt:
            raise UsageError("similarity needs --ckpt or --sim-scores")
        payload = load_checkpoint(args.ckpt)
        vocab = corpus.Vocabulary(payload["vocab"][len(corpus.RESERVED):])
        sim = evaluation.SimilarityScorer.from_model(payload["model"], vocab).sim(source, transferred)
    profiles_src = profiles_tr = None
    if args.markers or args.adjectives or args.proper_nouns:
        lex, markers = _lexicons(args)
        profiles_src = _line_profiles(source, target.other, args.max_len, lex, markers)
        profiles_tr = _line_profiles(transferred, target, args.max_len, lex, markers)
    report = evaluation.evaluate_system(source, transferred, target, None, profiles_src, profiles_tr,
                                        acc=acc, fl=fl, sim=sim)
    report.write(out, args.prefix)
    sys.stdout.write(report.to_text())


def _line_profiles(lines, domain: Domain, max_len: int, lex, markers) -> list[constraints.ConstraintProfile]:
    # one profile per line, blank lines included, so rows stay aligned
    out = []
    for ln in lines:
        seq = corpus.TokenSequence((corpus.UNK,) * len(ln.split()[:max_len]), domain, ln)
        out.append(constraints.extract_profile(seq, constraints.builtin_annotate(seq, lex), markers))
    return out


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, extra = parser.parse_known_args(argv)
        if extra and args.command != "train":
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        if args.command == "train":
            cmd_train(args, extra)
        else:
            {"annotate": cmd_annotate, "mine-attrs": cmd_mine_attrs, "transfer": cmd_transfer,
             "evaluate": cmd_evaluate}[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - every stage failure maps to one exit code
        module = type(exc).__module__.rsplit(".", 1)[-1]
        if module in ("builtins", "__main__"):
            module = "coopdct"
        sys.stderr.write(f"coopdct {args.command}: {module}: {exc}\n")
        return RUNTIME_ERROR
    return 0


def main() -> None:
    sys.exit(run())
