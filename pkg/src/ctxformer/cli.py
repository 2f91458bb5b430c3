"""Command-line entry point.

Subcommands: gen (synthetic corpus), train, translate, eval, bench, probe.
Shared flags: --config PATH, --seed N, --preset {paper,toy}, --out PATH.
The CTXFORMER_THREADS environment variable caps BLAS parallelism (read
before numpy loads, which is why heavyweight imports happen lazily).

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime/numerical.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path


def _cap_threads() -> None:
    cap = os.environ.get("CTXFORMER_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="key=value config file")
    sub.add_argument("--preset", choices=("paper", "toy"), default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", type=Path, default=None, help="output directory or file")
    sub.add_argument("--data", type=Path, default=None, help="corpus directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxformer",
        description="hybrid-attention translation toolkit on synthetic corpora",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate corpus splits")
    _common_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated corpus")
    _common_flags(p)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="beam-decode a file of source sentences")
    _common_flags(p)
    p.add_argument("input", type=Path)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="score hypotheses against references")
    _common_flags(p)
    p.add_argument("hyp", type=Path)
    p.add_argument("ref", type=Path)
    p.add_argument("--corpus", type=Path, default=None, help="tagged corpus for tag accuracy")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="complexity table and measured op counts")
    _common_flags(p)
    p.add_argument("--n-list", default="64,128,256")
    p.add_argument("--d-list", default="64,128")
    p.add_argument("--f-list", default="3,7")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("probe", help="cosine similarity of two words in context")
    _common_flags(p)
    p.add_argument("sentence", help="space-separated source sentence")
    p.add_argument("word_a")
    p.add_argument("word_b")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.set_defaults(func=cmd_probe)
    return parser


def _load_config(args):
    from .config import load_run_config

    rc = load_run_config(
        config_path=args.config,
        preset=args.preset,
        seed=args.seed,
        out=str(args.out) if args.out is not None else None,
    )
    if args.data is not None:
        rc.data_dir = str(args.data)
    return rc


def _read_split(rc, split: str):
    from .config import corpus_paths
    from .data import read_corpus
    from .errors import DataError

    path = corpus_paths(rc)[split]
    if not path.exists():
        raise DataError(f"missing corpus file: {path}")
    return read_corpus(path)


def _build_vocabs(train_records):
    from .data import vocab_from_corpus

    src_vocab = vocab_from_corpus(r[0] for r in train_records)
    tgt_vocab = vocab_from_corpus(r[1] for r in train_records)
    return src_vocab, tgt_vocab


def _build_model(rc, src_vocab, tgt_vocab):
    from .model import Seq2SeqModel

    rc.model.vocab_src = len(src_vocab)
    rc.model.vocab_tgt = len(tgt_vocab)
    return Seq2SeqModel(rc.model, seed=rc.seed)


def _load_trained_model(rc, args):
    from .errors import DataError
    from .training import load_checkpoint

    ckpt_path = args.checkpoint or Path(rc.out_dir) / "averaged.bin"
    if not Path(ckpt_path).exists():
        raise DataError(f"missing checkpoint: {ckpt_path}")
    train_records = _read_split(rc, "train")
    src_vocab, tgt_vocab = _build_vocabs(train_records)
    model = _build_model(rc, src_vocab, tgt_vocab)
    model.load_state(load_checkpoint(ckpt_path).params)
    return model, src_vocab, tgt_vocab


# ----------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    rc = _load_config(args)
    from .data import generate_corpus, split_corpus, write_corpus

    out_dir = Path(args.out) if args.out is not None else Path(rc.data_dir)
    _, lines = generate_corpus(rc.seed, rc.n_pairs, rc.max_sentence_len)
    train, valid, test = split_corpus(lines)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        write_corpus(out_dir / f"{name}.txt", part)
    print(f"wrote {len(train)}/{len(valid)}/{len(test)} records to {out_dir}")
    return 0


def cmd_train(args) -> int:
    rc = _load_config(args)
    from .data import records_to_pairs
    from .training import Trainer

    train_records = _read_split(rc, "train")
    src_vocab, tgt_vocab = _build_vocabs(train_records)
    model = _build_model(rc, src_vocab, tgt_vocab)
    pairs = records_to_pairs(train_records, src_vocab, tgt_vocab)
    out_dir = Path(rc.out_dir)
    trainer = Trainer(model, pairs, rc.train, out_dir=out_dir, log_path=out_dir / "metrics.log")
    if args.resume is not None:
        trainer.resume_from(args.resume)
    lines = trainer.run()
    print(f"trained to step {trainer.state.opt_step}; {len(lines) - 1} metric lines")
    print(f"checkpoints and metrics.log in {out_dir}")
    return 0


def cmd_translate(args) -> int:
    rc = _load_config(args)
    from .inference import beam_search

    model, src_vocab, tgt_vocab = _load_trained_model(rc, args)
    text = Path(args.input).read_text(encoding="utf-8")
    sentences = [line.split() for line in text.splitlines() if line.strip()]
    out_lines = []
    for words in sentences:
        result = beam_search(src_vocab.encode(words), model, rc.decode)
        out_lines.append(" ".join(tgt_vocab.decode(result.tokens)))
        if not result.finished:
            print(f"warning: decode budget exhausted for: {' '.join(words)}", file=sys.stderr)
    out_path = Path(args.out) if args.out is not None else Path(rc.out_dir) / "translations.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(out_lines) + ("\n" if out_lines else ""), encoding="utf-8")
    print(f"translated {len(out_lines)} sentences to {out_path}")
    return 0


def cmd_eval(args) -> int:
    rc = _load_config(args)
    from .data import read_corpus
    from .errors import DataError
    from .inference import bleu, exact_match, tag_accuracies

    # keep empty lines: an empty hypothesis is still a (bad) translation
    hyp_lines = [l.split() for l in Path(args.hyp).read_text(encoding="utf-8").splitlines()]
    ref_lines = [l.split() for l in Path(args.ref).read_text(encoding="utf-8").splitlines()]
    if len(hyp_lines) != len(ref_lines):
        raise DataError(
            f"line count mismatch: {len(hyp_lines)} hypotheses vs {len(ref_lines)} references"
        )
    report = {
        "bleu": f"{bleu(hyp_lines, ref_lines):.4f}",
        "exact_match": f"{exact_match(hyp_lines, ref_lines):.4f}",
    }
    if args.corpus is not None:
        records = read_corpus(args.corpus)
        model, src_vocab, _ = _load_trained_model(rc, args)
        pos_acc, ner_acc = tag_accuracies(records, model, src_vocab)
        report["pos_acc"] = f"{pos_acc:.4f}"
        report["ner_acc"] = f"{ner_acc:.4f}"
    text = "\n".join(f"{k}={v}" for k, v in report.items())
    print(text)
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_table, format_table, scaling_checks
    from .errors import ConfigError

    def parse_list(raw):
        try:
            values = tuple(int(v) for v in str(raw).split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"bad list {raw!r}: {exc}") from exc
        if not values:
            raise ConfigError(f"empty list {raw!r}")
        return values

    rows = bench_table(parse_list(args.n_list), parse_list(args.d_list), parse_list(args.f_list))
    checks = scaling_checks(rows)
    print(format_table(rows, checks))
    return 0


def cmd_probe(args) -> int:
    rc = _load_config(args)
    from .inference import PROBE_LAYERS, cosine_probe

    model, src_vocab, _ = _load_trained_model(rc, args)
    words = args.sentence.split()
    for layer in PROBE_LAYERS:
        sim = cosine_probe(args.word_a, args.word_b, words, model, src_vocab, layer)
        print(f"{layer}={sim:.6f}")
    return 0


def main(argv=None) -> int:
    _cap_threads()
    from .errors import ConfigError, DataError, NumericsError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
