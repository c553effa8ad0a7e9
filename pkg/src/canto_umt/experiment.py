"""Staged, cached experiment runs with a content-hash manifest.

An experiment runs pipeline, tokenize, bpe, embeddings, train and eval in
order, each in its own subdirectory of the output directory. A stage's cache
key hashes its settings together with the content hashes of its input files,
so it reruns exactly when one of those changed. ``manifest.json`` is written
last and lists every stage's inputs and outputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import __version__
from .bleu import char_bleu
from .bpe import MergeTable, apply_bpe, learn_bpe
from .charset import ConversionTable, baseline_evaluate
from .config import ExperimentConfig
from .corpus import LABEL_FILES, LanguageLabel, PipelineConfig, run_pipeline
from .decoding import ModelBundle, translate
from .embeddings import (
    EmbeddingMatrix,
    build_anchor_dict,
    compose_pivot_private,
    export_embeddings,
    import_embeddings,
    learn_mapping,
    normalize_embeddings,
    train_skipgram,
)
from .models import ModelConfig, build_model
from .models.checkpoint import load_checkpoint
from .segmentation import Lexicon, tokenize
from .training import NoiseConfig, Trainer, TrainingSchedule, encode_corpus, init_embeddings
from .vocab import LANGS, Vocab, other_lang

logger = logging.getLogger(__name__)

STAGES = ("pipeline", "tokenize", "bpe", "embeddings", "train", "eval")
STAGE_FILE = ".stage.json"
LOCK_FILE = ".canto-umt.lock"
MANIFEST_FILE = "manifest.json"

# which pipeline output feeds which model language
LANG_LABELS = {"L1": LanguageLabel.MANDARIN, "L2": LanguageLabel.CANTONESE}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        super().__init__(f"stage {stage} failed: {cause}")


class LockError(RuntimeError):
    pass


def git_hash(path: str | Path) -> str:
    """Git blob hash of a file's contents."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(f"blob {len(data)}\0".encode())
    h.update(data)
    return h.hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


@dataclass
class StageRecord:
    name: str
    key: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    cached: bool
    started: str = ""
    finished: str = ""


@dataclass
class RunManifest:
    config_hash: str
    config: dict
    tool_version: str
    stages: list[StageRecord] = field(default_factory=list)
    started: str = ""
    finished: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        d["stages"] = [StageRecord(**s) for s in d["stages"]]
        return cls(**d)

    def stage(self, name: str) -> StageRecord:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)


class DirectoryLock:
    """Exclusive writer lock on an output directory."""

    def __init__(self, directory: Path):
        self.path = directory / LOCK_FILE

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"{self.path.parent} is locked by another run (remove {self.path} if stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


# --------------------------------------------------------------------------
# file helpers


def write_lines(path: Path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def read_lines(path: Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def read_tokenized(path: Path) -> list[list[str]]:
    return [line.split(" ") if line else [] for line in read_lines(path)]


def write_tokenized(path: Path, sents) -> None:
    write_lines(path, (" ".join(s) for s in sents))


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


# --------------------------------------------------------------------------
# stages


@dataclass
class Stage:
    name: str
    params: dict
    inputs: list[Path]
    run: Callable[[Path], None]


class Experiment:
    def __init__(self, cfg: ExperimentConfig, out_dir: str | Path):
        self.cfg = cfg
        self.out = Path(out_dir)

    def dir(self, stage: str) -> Path:
        return self.out / stage

    # -- data sources ---------------------------------------------------------

    def corpus_path(self, lang: str) -> Path:
        if self.cfg.inputs:
            return self.dir("pipeline") / LABEL_FILES[LANG_LABELS[lang]]
        return Path(self.cfg.l1_corpus if lang == "L1" else self.cfg.l2_corpus)

    def lexicon(self) -> Lexicon | None:
        return Lexicon.load(self.cfg.lexicon) if self.cfg.lexicon else None

    def final_tokens_path(self, lang: str) -> Path:
        stage = "bpe" if self.cfg.scheme == "bpe" else "tokenize"
        return self.dir(stage) / f"{lang}.tok"

    def merges_paths(self) -> dict[str, Path]:
        if self.cfg.bpe_mode == "joint":
            return {lang: self.dir("bpe") / "merges.txt" for lang in LANGS}
        return {lang: self.dir("bpe") / f"merges_{lang}.txt" for lang in LANGS}

    # -- stage bodies ---------------------------------------------------------

    def run_pipeline(self, out: Path) -> None:
        c = self.cfg
        pcfg = PipelineConfig(c.foreign_threshold, c.downsample_label, c.downsample_target)
        run_pipeline(pcfg, c.input_files(), out, seed=c.seed)

    def run_tokenize(self, out: Path) -> None:
        scheme = "word" if self.cfg.scheme == "bpe" else self.cfg.scheme
        lex = self.lexicon()
        for lang in LANGS:
            lines = [ln for ln in read_lines(self.corpus_path(lang)) if ln.strip()]
            toks = (tokenize(ln, scheme, lex).tokens for ln in lines)
            write_tokenized(out / f"{lang}.tok", (t for t in toks if t))

    def run_bpe(self, out: Path) -> None:
        corpora = {lang: read_tokenized(self.dir("tokenize") / f"{lang}.tok") for lang in LANGS}
        learned = learn_bpe([corpora["L1"], corpora["L2"]], self.cfg.bpe_merges, self.cfg.bpe_mode)
        tables = {lang: learned for lang in LANGS} if isinstance(learned, MergeTable) else dict(zip(LANGS, learned))
        for lang, path in self.merges_paths().items():
            tables[lang].save(path)
        for lang in LANGS:
            write_tokenized(out / f"{lang}.tok", (apply_bpe(s, tables[lang]).tokens for s in corpora[lang]))

    def _skipgram(self, corpus, dim: int, seed: int) -> EmbeddingMatrix:
        c = self.cfg
        return train_skipgram(
            corpus, dim=dim, window=c.embed_window, negatives=c.embed_negatives, epochs=c.embed_epochs, seed=seed
        )

    def run_embeddings(self, out: Path) -> None:
        c = self.cfg
        corpora = {lang: read_tokenized(self.final_tokens_path(lang)) for lang in LANGS}
        if c.joint_vocab:
            joint = Vocab.build(corpora["L1"] + corpora["L2"])
            vocabs = {lang: joint for lang in LANGS}
        else:
            vocabs = {lang: Vocab.build(corpora[lang]) for lang in LANGS}
        for lang in LANGS:
            vocabs[lang].save(out / f"vocab_{lang}.tsv")
        dim = c.embedding_dim
        report = {"route": c.embed_route}
        if c.embed_route == "concat":
            emb = self._skipgram(corpora["L1"] + corpora["L2"], dim, c.seed)
            export_embeddings(emb, out / "emb_joint.vec")
            report["epoch_losses"] = emb.history
        elif c.embed_route == "mapping":
            x = self._skipgram(corpora["L1"], dim, c.seed)
            y = self._skipgram(corpora["L2"], dim, c.seed + 1)
            mapping = learn_mapping(x, y, build_anchor_dict(x, y), self_learning_iters=c.self_learning)
            export_embeddings(mapping.apply(x), out / "emb_L1.vec")
            export_embeddings(EmbeddingMatrix(y.tokens, normalize_embeddings(y.vectors), y.counts), out / "emb_L2.vec")
            report["mapping_history"] = mapping.history
        elif c.embed_route == "pivot-private":
            half = dim // 2
            shared = self._skipgram(corpora["L1"] + corpora["L2"], half, c.seed)
            priv = {lang: self._skipgram(corpora[lang], half, c.seed + 1 + i) for i, lang in enumerate(LANGS)}
            ea, eb, pp = compose_pivot_private(shared, priv["L1"], priv["L2"], half_dim=half)
            export_embeddings(ea, out / "emb_L1.vec")
            export_embeddings(eb, out / "emb_L2.vec")
            report["missing_shared"] = pp.missing_shared
            report["missing_private"] = pp.missing_private
        (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    def load_vocabs(self) -> dict[str, Vocab]:
        return {lang: Vocab.load(self.dir("embeddings") / f"vocab_{lang}.tsv") for lang in LANGS}

    def model_config(self, vocabs: dict[str, Vocab]) -> ModelConfig:
        c = self.cfg
        return ModelConfig(
            variant=c.variant,
            vocab_sizes={lang: len(vocabs[lang]) for lang in LANGS},
            d_model=c.d_model,
            emb_dim=c.embed_dim or None,
            heads=c.heads,
            ffn_dim=c.ffn_dim,
            layers=c.n_layers,
            shared_dec_layers=c.n_shared_dec_layers,
            dropout=c.dropout,
            max_len=c.max_len,
            freeze_embeddings=c.freeze_embeddings or c.variant == "gru",
            share_embeddings=c.joint_vocab,
            init_seed=c.seed,
            dtype=c.dtype,
        )

    def run_train(self, out: Path) -> None:
        c = self.cfg
        _seed_everything(c.seed)
        vocabs = self.load_vocabs()
        model = build_model(self.model_config(vocabs))
        emb_dir = self.dir("embeddings")
        if c.embed_route == "concat":
            emb = import_embeddings(emb_dir / "emb_joint.vec")
            init_embeddings(model, "L1", vocabs["L1"], emb, target_std=float(model.embedding("L1").weight.detach().std()))
        elif c.embed_route in ("mapping", "pivot-private"):
            for lang in LANGS:
                emb = import_embeddings(emb_dir / f"emb_{lang}.vec")
                init_embeddings(model, lang, vocabs[lang], emb, target_std=float(model.embedding(lang).weight.detach().std()))
        corpora = {
            lang: encode_corpus(read_tokenized(self.final_tokens_path(lang)), vocabs[lang], c.max_len) for lang in LANGS
        }
        schedule = TrainingSchedule(
            steps=c.steps,
            batch_size=c.batch_size,
            dae_ratio=c.dae_ratio,
            bt_ratio=c.bt_ratio,
            warmup_frac=c.warmup_frac,
            lr=c.lr,
            checkpoint_every=c.checkpoint_every,
            seed=c.seed,
        )
        meta = {"scheme": c.scheme, "lexicon": c.lexicon}
        if c.scheme == "bpe":
            meta["bpe"] = {lang: p.read_text(encoding="utf-8") for lang, p in self.merges_paths().items()}
        trainer = Trainer(model, vocabs, corpora, schedule, NoiseConfig(c.p_drop, c.shuffle_k), out, meta)
        trainer.train()

    def run_eval(self, out: Path) -> None:
        c = self.cfg
        summary: list[tuple[str, str]] = []
        if c.test_l1:
            bundle = load_bundle(self.dir("train") / "checkpoint_last.ckpt")
            table = ConversionTable.load(c.conversion_table) if c.conversion_table else ConversionTable.bundled()
            tests = {"L1": read_lines(Path(c.test_l1)), "L2": read_lines(Path(c.test_l2))}
            if len(tests["L1"]) != len(tests["L2"]):
                raise ValueError("test_l1 and test_l2 are not aligned line by line")
            for src_lang in LANGS:
                tgt_lang = other_lang(src_lang)
                tag = f"{src_lang}-{tgt_lang}"
                hyps = [
                    translate(bundle, s, src_lang, tgt_lang, c.beam_size, c.max_len, c.length_penalty).text
                    for s in tests[src_lang]
                ]
                write_lines(out / f"hyp_{tag}.txt", hyps)
                report = char_bleu(hyps, tests[tgt_lang], strip_punct=c.strip_punct)
                base = baseline_evaluate(tests[src_lang], tests[tgt_lang], table, strip_punct=c.strip_punct)
                (out / f"bleu_{tag}.tsv").write_text(report.dumps(), encoding="utf-8")
                (out / f"baseline_{tag}.tsv").write_text(base.dumps(), encoding="utf-8")
                summary += [(f"bleu_{tag}", f"{report.bleu:.6f}"), (f"baseline_{tag}", f"{base.bleu:.6f}")]
        else:
            summary.append(("status", "skipped: no test files configured"))
        (out / "summary.tsv").write_text("".join(f"{k}\t{v}\n" for k, v in summary), encoding="utf-8")

    # -- graph ------------------------------------------------------------------

    def stages(self) -> list[Stage]:
        c = self.cfg
        out = []
        if c.inputs:
            out.append(
                Stage(
                    "pipeline",
                    {"foreign_threshold": c.foreign_threshold, "downsample_label": c.downsample_label,
                     "downsample_target": c.downsample_target, "seed": c.seed},
                    c.input_files(),
                    self.run_pipeline,
                )
            )
        lex = [Path(c.lexicon)] if c.lexicon else []
        out.append(
            Stage("tokenize", {"scheme": c.scheme}, [self.corpus_path(lang) for lang in LANGS] + lex, self.run_tokenize)
        )
        if c.scheme == "bpe":
            out.append(
                Stage(
                    "bpe",
                    {"bpe_merges": c.bpe_merges, "bpe_mode": c.bpe_mode},
                    [self.dir("tokenize") / f"{lang}.tok" for lang in LANGS],
                    self.run_bpe,
                )
            )
        out.append(
            Stage(
                "embeddings",
                {"embed_route": c.embed_route, "embed_dim": c.embedding_dim, "embed_epochs": c.embed_epochs,
                 "embed_window": c.embed_window, "embed_negatives": c.embed_negatives,
                 "self_learning": c.self_learning, "seed": c.seed},
                [self.final_tokens_path(lang) for lang in LANGS],
                self.run_embeddings,
            )
        )
        train_keys = ("variant", "d_model", "embed_dim", "heads", "ffn_dim", "layers", "shared_dec_layers",
                      "dropout", "max_len", "freeze_embeddings", "dtype", "steps", "batch_size", "dae_ratio",
                      "bt_ratio", "warmup_frac", "lr", "checkpoint_every", "p_drop", "shuffle_k", "seed",
                      "embed_route", "scheme", "lexicon")
        emb_dir = self.dir("embeddings")
        emb_files = [emb_dir / f"vocab_{lang}.tsv" for lang in LANGS]
        if c.embed_route == "concat":
            emb_files.append(emb_dir / "emb_joint.vec")
        elif c.embed_route != "none":
            emb_files += [emb_dir / f"emb_{lang}.vec" for lang in LANGS]
        train_inputs = [self.final_tokens_path(lang) for lang in LANGS] + emb_files
        if c.scheme == "bpe":
            train_inputs += sorted(set(self.merges_paths().values()))
        out.append(Stage("train", {k: getattr(c, k) for k in train_keys}, train_inputs, self.run_train))
        eval_inputs = [self.dir("train") / "checkpoint_last.ckpt"]
        eval_inputs += [Path(p) for p in (c.test_l1, c.test_l2, c.conversion_table) if p]
        out.append(
            Stage(
                "eval",
                {"beam_size": c.beam_size, "length_penalty": c.length_penalty, "strip_punct": c.strip_punct,
                 "max_len": c.max_len, "has_tests": bool(c.test_l1),
                 "bundled_table": "" if c.conversion_table else _bundled_table_hash()},
                eval_inputs,
                self.run_eval,
            )
        )
        return out


def _bundled_table_hash() -> str:
    return hashlib.sha256(json.dumps(sorted(ConversionTable.bundled().mapping.items())).encode()).hexdigest()


def _stage_key(stage: Stage, input_hashes: dict[str, str]) -> str:
    blob = json.dumps({"stage": stage.name, "params": stage.params, "inputs": input_hashes}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _output_hashes(stage_dir: Path, root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(stage_dir.rglob("*")):
        if p.is_file() and p.name != STAGE_FILE:
            out[p.relative_to(root).as_posix()] = git_hash(p)
    return out


def _cached_record(stage_dir: Path, key: str, root: Path) -> dict | None:
    marker = stage_dir / STAGE_FILE
    if not marker.is_file():
        return None
    try:
        rec = json.loads(marker.read_text(encoding="utf-8"))
    except ValueError:
        return None
    if rec.get("key") != key:
        return None
    if _output_hashes(stage_dir, root) != rec.get("outputs"):
        return None
    return rec


def _label(path: Path, root: Path) -> str:
    try:
        return path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(path)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, force: bool = False) -> RunManifest:
    """Run every stage, reusing cached stages; returns the written manifest."""
    root = Path(out_dir)
    exp = Experiment(cfg, root)
    with DirectoryLock(root):
        manifest = RunManifest(cfg.digest(), cfg.to_dict(), __version__, started=_now())
        (root / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
        for stage in exp.stages():
            stage_dir = exp.dir(stage.name)
            try:
                inputs = {_label(p, root): git_hash(p) for p in stage.inputs}
            except OSError as exc:
                raise StageError(stage.name, f"missing input: {exc}") from exc
            key = _stage_key(stage, inputs)
            cached = None if force else _cached_record(stage_dir, key, root)
            if cached is not None:
                logger.info("stage %s: cached", stage.name)
                manifest.stages.append(
                    StageRecord(stage.name, key, inputs, cached["outputs"], True, cached["started"], cached["finished"])
                )
                continue
            logger.info("stage %s: running", stage.name)
            if stage_dir.exists():
                shutil.rmtree(stage_dir)
            stage_dir.mkdir(parents=True)
            started = _now()
            try:
                stage.run(stage_dir)
            except Exception as exc:  # noqa: BLE001 - any failure aborts the run with the stage name
                raise StageError(stage.name, exc) from exc
            outputs = _output_hashes(stage_dir, root)
            rec = StageRecord(stage.name, key, inputs, outputs, False, started, _now())
            (stage_dir / STAGE_FILE).write_text(json.dumps(asdict(rec), indent=1, sort_keys=True), encoding="utf-8")
            manifest.stages.append(rec)
        manifest.finished = _now()
        tmp = root / (MANIFEST_FILE + ".tmp")
        tmp.write_text(manifest.dumps(), encoding="utf-8")
        tmp.replace(root / MANIFEST_FILE)
    return manifest


def load_bundle(checkpoint: str | Path, lexicon: str | Path | None = None) -> ModelBundle:
    """A translation-ready model with the tokenizer settings it was trained with."""
    ckpt = load_checkpoint(checkpoint)
    meta = ckpt.extra.get("meta", {})
    scheme = meta.get("scheme", "char")
    lex_path = lexicon or meta.get("lexicon")
    lex = Lexicon.load(lex_path) if lex_path else None
    if scheme != "char" and lex is None:
        raise ValueError(f"scheme {scheme} needs a lexicon")
    bpe = {lang: MergeTable.loads(text) for lang, text in meta.get("bpe", {}).items()}
    ckpt.model.eval()
    return ModelBundle(ckpt.model, ckpt.vocabs, scheme, lex, bpe)


__all__ = [
    "Experiment",
    "LockError",
    "RunManifest",
    "StageError",
    "StageRecord",
    "git_hash",
    "load_bundle",
    "run_experiment",
]
