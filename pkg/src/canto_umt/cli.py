"""``canto-umt`` command-line entry point.

Exit codes:
    0  success
    2  usage or configuration error
    3  input error (missing, unreadable or malformed input files)
    4  stage or training failure
    5  output directory locked by another run
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, build_config, validate_config

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_STAGE, EXIT_LOCKED = 0, 2, 3, 4, 5

log = logging.getLogger("canto_umt")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def load_config(args, check_paths: bool = False) -> ExperimentConfig:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    if args.config:
        return validate_config(args.config, overrides=overrides, check_paths=check_paths)
    return build_config({}, overrides=overrides, check_paths=check_paths)


def out_dir(args) -> Path:
    if not args.out_dir:
        raise UsageError("--out-dir is required for this command")
    return Path(args.out_dir)


def read_text_arg(path: str | None) -> list[str]:
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


def write_text_arg(path: str | None, lines) -> None:
    text = "".join(line + "\n" for line in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def emit_rows(rows) -> None:
    for k, v in rows:
        print(f"{k}\t{v}")


# --------------------------------------------------------------------------
# commands


def cmd_pipeline_run(args) -> int:
    from .corpus import PipelineConfig, run_pipeline

    cfg = load_config(args)
    paths = sorted({p for pattern in args.inputs for p in glob.glob(pattern)})
    if not paths:
        raise FileNotFoundError(f"no input files match {args.inputs}")
    stats = run_pipeline(
        PipelineConfig(cfg.foreign_threshold, cfg.downsample_label, cfg.downsample_target),
        paths,
        out_dir(args),
        seed=cfg.seed,
    )
    sys.stdout.write(stats.report())
    return EXIT_OK


def cmd_tokenize(args) -> int:
    from .segmentation import Lexicon, tokenize

    if args.scheme == "word" and not args.lexicon:
        raise UsageError("--lexicon is required for --scheme word")
    lex = Lexicon.load(args.lexicon) if args.lexicon else None
    lines = read_text_arg(args.input)
    write_text_arg(args.output, (tokenize(ln, args.scheme, lex).to_line() for ln in lines))
    return EXIT_OK


def _read_tokenized(path: str) -> list[list[str]]:
    return [ln.split() for ln in read_text_arg(path)]


def cmd_bpe_learn(args) -> int:
    from .bpe import learn_bpe

    if args.mode == "separate" and len(args.inputs) != 2:
        raise UsageError("--mode separate needs exactly two input corpora")
    corpora = [_read_tokenized(p) for p in args.inputs]
    learned = learn_bpe(corpora, args.num_merges, args.mode)
    out = Path(args.merges_out)
    if args.mode == "joint":
        learned.save(out)
        written = [out]
    else:
        written = []
        for lang, table in zip(("L1", "L2"), learned):
            p = out.with_name(f"{out.stem}.{lang}{out.suffix}")
            table.save(p)
            written.append(p)
    for p in written:
        print(f"merges\t{p}")
    return EXIT_OK


def cmd_bpe_apply(args) -> int:
    from .bpe import MergeTable, apply_bpe

    table = MergeTable.load(args.merges)
    lines = read_text_arg(args.input)
    write_text_arg(args.output, (" ".join(apply_bpe(ln.split(), table).tokens) for ln in lines))
    return EXIT_OK


def cmd_embed_train(args) -> int:
    from .embeddings import export_embeddings, train_skipgram

    cfg = load_config(args)
    corpus = [s for p in args.inputs for s in _read_tokenized(p)]
    emb = train_skipgram(
        corpus,
        dim=args.dim or cfg.embedding_dim,
        window=cfg.embed_window,
        negatives=cfg.embed_negatives,
        epochs=args.epochs or cfg.embed_epochs,
        seed=cfg.seed,
    )
    export_embeddings(emb, args.output)
    emit_rows([("tokens", len(emb)), ("dim", emb.dim)] + [(f"loss_epoch{i + 1}", f"{v:.6f}") for i, v in enumerate(emb.history)])
    return EXIT_OK


def cmd_embed_map(args) -> int:
    from .embeddings import (
        EmbeddingMatrix,
        build_anchor_dict,
        export_embeddings,
        import_embeddings,
        learn_mapping,
        load_anchors,
        normalize_embeddings,
    )

    x = import_embeddings(args.src)
    y = import_embeddings(args.tgt)
    anchors = build_anchor_dict(x, y) if args.anchors == "identical" else load_anchors(args.anchors, x, y)
    mapping = learn_mapping(x, y, anchors, self_learning_iters=args.self_learning)
    export_embeddings(mapping.apply(x), args.output)
    if args.tgt_output:
        export_embeddings(EmbeddingMatrix(y.tokens, normalize_embeddings(y.vectors), y.counts), args.tgt_output)
    rows = [("anchors", len(anchors))]
    for i, (before, after) in enumerate(mapping.history):
        rows.append((f"objective_{i}", f"{before:.6f}\t{after:.6f}"))
    emit_rows(rows)
    return EXIT_OK


def cmd_embed_pivot_private(args) -> int:
    from .embeddings import compose_pivot_private, export_embeddings, import_embeddings

    shared = import_embeddings(args.shared)
    a, b, report = compose_pivot_private(
        shared, import_embeddings(args.private_a), import_embeddings(args.private_b), half_dim=args.half_dim
    )
    export_embeddings(a, args.out_a)
    export_embeddings(b, args.out_b)
    emit_rows(
        [
            ("missing_shared_a", report.missing_shared["a"]),
            ("missing_shared_b", report.missing_shared["b"]),
            ("missing_private_a", report.missing_private["a"]),
            ("missing_private_b", report.missing_private["b"]),
        ]
    )
    return EXIT_OK


def cmd_umt_train(args) -> int:
    from .embeddings import import_embeddings
    from .experiment import Experiment
    from .models import build_model
    from .training import NoiseConfig, Trainer, TrainingSchedule, encode_corpus, init_embeddings
    from .vocab import LANGS, Vocab

    cfg = load_config(args)
    args.out = args.out or str(out_dir(args))
    corpora_tok = {"L1": _read_tokenized(args.l1), "L2": _read_tokenized(args.l2)}
    if cfg.joint_vocab:
        joint = Vocab.build(corpora_tok["L1"] + corpora_tok["L2"])
        vocabs = {lang: joint for lang in LANGS}
    else:
        vocabs = {lang: Vocab.build(corpora_tok[lang]) for lang in LANGS}
    model = build_model(Experiment(cfg, args.out).model_config(vocabs))
    pretrained = {"L1": args.emb_l1, "L2": args.emb_l2}
    if args.embeddings:
        pretrained = {"L1": args.embeddings, "L2": None if cfg.joint_vocab else args.embeddings}
    for lang, path in pretrained.items():
        if path:
            n = init_embeddings(
                model, lang, vocabs[lang], import_embeddings(path), float(model.embedding(lang).weight.detach().std())
            )
            log.info("initialised %d %s embedding rows from %s", n, lang, path)
    corpora = {lang: encode_corpus(corpora_tok[lang], vocabs[lang], cfg.max_len) for lang in LANGS}
    schedule = TrainingSchedule(
        steps=cfg.steps, batch_size=cfg.batch_size, dae_ratio=cfg.dae_ratio, bt_ratio=cfg.bt_ratio,
        warmup_frac=cfg.warmup_frac, lr=cfg.lr, checkpoint_every=cfg.checkpoint_every, seed=cfg.seed,
    )
    meta = {
        "scheme": cfg.scheme,
        "lexicon": cfg.lexicon,
        "corpora": {"L1": str(Path(args.l1).resolve()), "L2": str(Path(args.l2).resolve())},
    }
    merges = {"L1": args.merges_l1 or args.merges, "L2": args.merges_l2 or args.merges}
    if cfg.scheme == "bpe":
        if not all(merges.values()):
            raise UsageError("scheme bpe needs --merges (joint) or both --merges-l1 and --merges-l2")
        meta["bpe"] = {lang: Path(path).read_text(encoding="utf-8") for lang, path in merges.items()}
    elif any(merges.values()):
        raise UsageError(f"merge tables given but the configured scheme is {cfg.scheme}")
    trainer = Trainer(model, vocabs, corpora, schedule, NoiseConfig(cfg.p_drop, cfg.shuffle_k), args.out, meta)
    trainer.train()
    emit_rows([("steps", trainer.step), ("skipped_pairs", trainer.skipped_pairs),
               ("checkpoint", Path(args.out) / "checkpoint_last.ckpt")])
    return EXIT_OK


def cmd_umt_resume(args) -> int:
    from .models.checkpoint import load_checkpoint
    from .training import Trainer, encode_corpus

    ckpt = load_checkpoint(args.checkpoint)
    paths = {"L1": args.l1, "L2": args.l2}
    stored = ckpt.extra.get("meta", {}).get("corpora", {})
    for lang in paths:
        paths[lang] = paths[lang] or stored.get(lang)
        if not paths[lang]:
            raise UsageError(f"checkpoint does not record the {lang} corpus; pass --{lang.lower()}")
    max_len = ckpt.model.cfg.max_len
    corpora = {lang: encode_corpus(_read_tokenized(p), ckpt.vocabs[lang], max_len) for lang, p in paths.items()}
    target = args.out or str(Path(args.checkpoint).parent)
    trainer = Trainer.resume(args.checkpoint, corpora, out_dir=target)
    trainer.train(until=args.until)
    emit_rows([("steps", trainer.step), ("checkpoint", Path(target) / "checkpoint_last.ckpt")])
    return EXIT_OK


def cmd_translate(args) -> int:
    from .decoding import translate
    from .experiment import load_bundle

    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    bundle = load_bundle(args.model, args.lexicon)
    lines = read_text_arg(args.input)
    out = []
    for n, line in enumerate(lines, 1):
        tr = translate(bundle, line, args.src_lang, beam_size=args.beam, max_len=args.max_len)
        if args.with_meta:
            out.append(f"{tr.text}\t{tr.score:.6f}\t{tr.unk_count}\t{int(tr.truncated)}")
        else:
            out.append(tr.text)
            if tr.unk_count:
                log.warning("line %d: %d unknown token(s)", n, tr.unk_count)
    write_text_arg(args.output, out)
    return EXIT_OK


def cmd_eval_bleu(args) -> int:
    from .bleu import char_bleu

    report = char_bleu(read_text_arg(args.hyp), read_text_arg(args.ref), strip_punct=args.strip_punct)
    sys.stdout.write(report.dumps())
    return EXIT_OK


def cmd_eval_baseline(args) -> int:
    from .charset import ConversionTable, baseline_evaluate

    table = ConversionTable.load(args.table) if args.table else ConversionTable.bundled()
    report = baseline_evaluate(read_text_arg(args.src), read_text_arg(args.ref), table, args.strip_punct)
    sys.stdout.write(report.dumps())
    return EXIT_OK


def cmd_experiment_run(args) -> int:
    from .experiment import run_experiment

    if not args.config:
        raise UsageError("experiment run needs --config")
    cfg = load_config(args, check_paths=True)
    if not cfg.inputs and not cfg.l1_corpus:
        raise ConfigError([("inputs", "set inputs or l1_corpus/l2_corpus")])
    for warning in cfg.pairing_warnings():
        log.warning(warning)
    manifest = run_experiment(cfg, out_dir(args), force=args.force)
    rows = [("config_hash", manifest.config_hash)]
    rows += [(f"stage_{s.name}", "cached" if s.cached else "ran") for s in manifest.stages]
    summary = out_dir(args) / "eval" / "summary.tsv"
    if summary.is_file():
        rows += [tuple(ln.split("\t", 1)) for ln in summary.read_text(encoding="utf-8").splitlines() if ln]
    emit_rows(rows)
    return EXIT_OK


def cmd_report(args) -> int:
    from .corpus import PipelineStats
    from .plotting import plot_bleu_bars, plot_length_histogram, plot_loss_curves
    from .training import read_metrics

    run = Path(args.run_dir or out_dir(args))
    if not run.is_dir():
        raise FileNotFoundError(f"run directory not found: {run}")
    figs = Path(args.figures_dir) if args.figures_dir else run / "figures"
    figs.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[str, object]] = []
    stats_path = run / "pipeline" / "stats.txt"
    if stats_path.is_file():
        stats = PipelineStats.read(stats_path, run / "pipeline" / "length_hist.tsv")
        rows += [(f"pipeline_{k}", v) for k, v in stats.counts.items()]
        rows.append(("figure_length_histogram", plot_length_histogram(stats.histogram, figs / "length_histogram.png")))
    metrics_path = run / "train" / "metrics.tsv"
    if metrics_path.is_file():
        metrics = read_metrics(metrics_path)
        rows.append(("train_steps", len(metrics)))
        for task in ("dae", "bt"):
            tail = [m[3] for m in metrics[-200:] if m[1] == task and m[3] == m[3]]
            if tail:
                rows.append((f"train_final_{task}_loss", f"{sum(tail) / len(tail):.6f}"))
        rows.append(("figure_loss_curves", plot_loss_curves(metrics, figs / "loss_curves.png")))
    summary = run / "eval" / "summary.tsv"
    if summary.is_file():
        scores = {}
        for ln in summary.read_text(encoding="utf-8").splitlines():
            if not ln:
                continue
            k, v = ln.split("\t", 1)
            rows.append((f"eval_{k}", v))
            try:
                scores[k] = float(v)
            except ValueError:
                pass
        if scores:
            rows.append(("figure_bleu", plot_bleu_bars(scores, figs / "bleu.png")))
    if not rows:
        raise FileNotFoundError(f"nothing to report in {run}")
    emit_rows(rows)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps an absent flag from
    # overwriting a value given before the subcommand name
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="flat key = value experiment configuration", **kw)
    g.add_argument("--seed", type=int, help="override the configured seed", **kw)
    g.add_argument("--out-dir", help="output directory", **kw)
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr", **kw)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="canto-umt", description="Unsupervised Mandarin-Cantonese MT workbench.",
                                parents=[_global_flags(suppress=False)])
    p.add_argument("--version", action="version", version=f"canto-umt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(parent, name, fn, help_text):
        sp = parent.add_parser(name, help=help_text, parents=[common])
        sp.set_defaults(fn=fn)
        return sp

    pipe = sub.add_parser("pipeline", help="corpus cleaning and routing").add_subparsers(dest="sub", required=True)
    sp = add(pipe, "run", cmd_pipeline_run, "cut, strip, filter and label raw text dumps")
    sp.add_argument("--in", dest="inputs", action="append", required=True, help="input file or glob (repeatable)")

    sp = add(sub, "tokenize", cmd_tokenize, "character or dictionary-word tokenization")
    sp.add_argument("--scheme", choices=("char", "word"), default="char")
    sp.add_argument("--lexicon")
    sp.add_argument("--input", help="input file (default stdin)")
    sp.add_argument("--output", help="output file (default stdout)")

    bpe = sub.add_parser("bpe", help="byte-pair encoding").add_subparsers(dest="sub", required=True)
    sp = add(bpe, "learn", cmd_bpe_learn, "learn merges from word-tokenized corpora")
    sp.add_argument("inputs", nargs="+", help="word-tokenized corpora (L1 [L2])")
    sp.add_argument("--merges-out", required=True)
    sp.add_argument("--num-merges", type=int, default=50000)
    sp.add_argument("--mode", choices=("joint", "separate"), default="joint")
    sp = add(bpe, "apply", cmd_bpe_apply, "segment a word-tokenized corpus")
    sp.add_argument("--merges", required=True)
    sp.add_argument("--input")
    sp.add_argument("--output")

    emb = sub.add_parser("embed", help="embedding training and alignment").add_subparsers(dest="sub", required=True)
    sp = add(emb, "train", cmd_embed_train, "skip-gram with negative sampling")
    sp.add_argument("inputs", nargs="+", help="tokenized corpora, concatenated")
    sp.add_argument("--output", required=True)
    sp.add_argument("--dim", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=0)
    sp = add(emb, "map", cmd_embed_map, "orthogonal mapping of --src onto --tgt")
    sp.add_argument("--src", required=True)
    sp.add_argument("--tgt", required=True)
    sp.add_argument("--anchors", default="identical", help="'identical' or a tokenA<TAB>tokenB file")
    sp.add_argument("--self-learning", type=int, default=0)
    sp.add_argument("--output", required=True, help="mapped source embeddings")
    sp.add_argument("--tgt-output", help="normalized target embeddings")
    sp = add(emb, "pivot-private", cmd_embed_pivot_private, "concatenate shared and private halves")
    sp.add_argument("--shared", required=True)
    sp.add_argument("--private-a", required=True)
    sp.add_argument("--private-b", required=True)
    sp.add_argument("--out-a", required=True)
    sp.add_argument("--out-b", required=True)
    sp.add_argument("--half-dim", type=int, default=256)

    umt = sub.add_parser("umt", help="unsupervised training").add_subparsers(dest="sub", required=True)
    sp = add(umt, "train", cmd_umt_train, "denoising and back-translation training")
    sp.add_argument("--l1", required=True, help="tokenized L1 corpus")
    sp.add_argument("--l2", required=True, help="tokenized L2 corpus")
    sp.add_argument("--out", help="output directory (default --out-dir)")
    sp.add_argument("--embeddings", help="pretrained vectors for the joint vocabulary")
    sp.add_argument("--emb-l1")
    sp.add_argument("--emb-l2")
    sp.add_argument("--merges", help="joint BPE merge table (scheme bpe)")
    sp.add_argument("--merges-l1")
    sp.add_argument("--merges-l2")
    sp = add(umt, "resume", cmd_umt_resume, "continue from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--l1")
    sp.add_argument("--l2")
    sp.add_argument("--out")
    sp.add_argument("--until", type=int, help="stop at this step (default: the schedule's)")

    sp = add(sub, "translate", cmd_translate, "translate sentences with a checkpoint")
    sp.add_argument("--model", required=True)
    sp.add_argument("--src-lang", choices=("L1", "L2"), required=True)
    sp.add_argument("--beam", type=int, default=1)
    sp.add_argument("--max-len", type=int, default=100)
    sp.add_argument("--lexicon")
    sp.add_argument("--input")
    sp.add_argument("--output")
    sp.add_argument("--with-meta", action="store_true", help="text<TAB>score<TAB>unk<TAB>truncated")

    ev = sub.add_parser("eval", help="character BLEU").add_subparsers(dest="sub", required=True)
    sp = add(ev, "bleu", cmd_eval_bleu, "score hypotheses against references")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--strip-punct", action="store_true")
    sp = add(ev, "baseline", cmd_eval_baseline, "character-set conversion baseline")
    sp.add_argument("--src", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--table", help="conversion table (default: bundled)")
    sp.add_argument("--strip-punct", action="store_true")

    ex = sub.add_parser("experiment", help="staged experiment runs").add_subparsers(dest="sub", required=True)
    sp = add(ex, "run", cmd_experiment_run, "run all stages with caching")
    sp.add_argument("--force", action="store_true", help="ignore cached stages")

    sp = add(sub, "report", cmd_report, "summarize a run and render figures")
    sp.add_argument("--run-dir", help="experiment output directory (default --out-dir)")
    sp.add_argument("--figures-dir", help="where to write PNGs (default <run>/figures)")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    from .experiment import LockError, StageError
    from .models.checkpoint import CheckpointError
    from .training import TrainingError

    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"canto-umt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LockError as exc:
        print(f"canto-umt: error: {exc}", file=sys.stderr)
        return EXIT_LOCKED
    except (StageError, TrainingError) as exc:
        print(f"canto-umt: error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, UnicodeDecodeError, CheckpointError, ValueError, json.JSONDecodeError) as exc:
        print(f"canto-umt: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
