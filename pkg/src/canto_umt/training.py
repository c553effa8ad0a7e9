"""Unsupervised training: denoising autoencoding and on-the-fly
back-translation over the shared-encoder / per-language-decoder model."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .decoding import greedy_decode, pad_batch
from .models import Seq2Seq, loss_cross_entropy
from .models.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .vocab import EOS_ID, LANGS, Vocab, other_lang

logger = logging.getLogger(__name__)

DAE, BT = "dae", "bt"


class TrainingError(RuntimeError):
    pass


@dataclass
class NoiseConfig:
    p_drop: float = 0.1
    shuffle_k: int = 3

    def __post_init__(self):
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must be in [0, 1)")
        if self.shuffle_k < 0:
            raise ValueError("shuffle_k must be >= 0")


def add_noise(tokens: Sequence, cfg: NoiseConfig, rng: np.random.Generator) -> list:
    """Drop tokens independently, then shuffle locally.

    At least one token always survives. Sorting positions perturbed by
    uniform(0, k+1) noise moves no token more than k places.
    """
    tokens = list(tokens)
    n = len(tokens)
    if n == 0:
        raise ValueError("cannot noise an empty sequence")
    if cfg.p_drop > 0:
        keep = rng.random(n) >= cfg.p_drop
        if not keep.any():
            keep[rng.integers(n)] = True
        tokens = [t for t, k in zip(tokens, keep) if k]
    if cfg.shuffle_k > 0 and len(tokens) > 1:
        keys = np.arange(len(tokens)) + rng.uniform(0, cfg.shuffle_k + 1, size=len(tokens))
        tokens = [tokens[i] for i in np.argsort(keys, kind="stable")]
    return tokens


@dataclass
class TrainingSchedule:
    steps: int = 1000
    batch_size: int = 32
    dae_ratio: int = 1
    bt_ratio: int = 1
    warmup_frac: float = 0.1
    lr: float = 1e-3
    betas: tuple[float, float] = (0.0, 0.98)
    clip_norm: float = 5.0
    checkpoint_every: int = 0
    lang_order: tuple[str, str] = ("L1", "L2")
    max_gen_len: int = 0
    bt_len_ratio: float = 1.5
    bt_len_margin: int = 5
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.lang_order = tuple(self.lang_order)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dae_ratio < 1 or self.bt_ratio < 0:
            raise ValueError("dae_ratio must be >= 1 and bt_ratio >= 0")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError("warmup_frac must be in [0, 1]")
        if self.bt_len_ratio <= 0 or self.bt_len_margin < 0:
            raise ValueError("bt_len_ratio must be > 0 and bt_len_margin >= 0")
        if sorted(self.lang_order) != sorted(LANGS):
            raise ValueError("lang_order must list L1 and L2")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.steps)) if self.bt_ratio else self.steps

    def task_at(self, step: int) -> tuple[str, str]:
        """Task and language for a 0-based step.

        Warmup steps are DAE-only; afterwards tasks follow a fixed period of
        ``dae_ratio`` DAE steps then ``bt_ratio`` BT steps. Each task
        alternates languages on its own counter.
        """
        warm = self.warmup_steps
        period = self.dae_ratio + self.bt_ratio
        if step < warm or self.bt_ratio == 0:
            return DAE, self.lang_order[step % 2]
        after = step - warm
        full, rem = divmod(after, period)
        if rem < self.dae_ratio:
            n_dae = warm + full * self.dae_ratio + rem
            return DAE, self.lang_order[n_dae % 2]
        n_bt = full * self.bt_ratio + (rem - self.dae_ratio)
        return BT, self.lang_order[n_bt % 2]


def make_optimizer(model: Seq2Seq, schedule: TrainingSchedule) -> torch.optim.Optimizer:
    # beta1 = 0: RMS-style adaptive steps without a momentum term
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=schedule.lr, betas=schedule.betas)


def batch_digest(batch: Sequence[Sequence[int]]) -> str:
    return hashlib.sha256(json.dumps([list(map(int, s)) for s in batch]).encode()).hexdigest()[:16]


def teacher_forcing(targets: Sequence[Sequence[int]], bos: int):
    """Decoder inputs (BOS + tokens) and targets (tokens + EOS), padded."""
    tgt = pad_batch([list(t) + [EOS_ID] for t in targets])
    tin = pad_batch([[bos] + list(t) for t in targets])
    return tin, tgt


class Trainer:
    """Owns a model, its optimizer and every source of randomness used in
    training, so a run can be checkpointed and resumed exactly."""

    def __init__(
        self,
        model: Seq2Seq,
        vocabs: dict[str, Vocab],
        corpora: dict[str, list[list[int]]],
        schedule: TrainingSchedule,
        noise: NoiseConfig | None = None,
        out_dir: str | Path | None = None,
        meta: dict | None = None,
    ):
        for lang in LANGS:
            if not corpora.get(lang):
                raise ValueError(f"empty corpus for {lang}")
        self.model = model
        self.vocabs = vocabs
        self.corpora = corpora
        self.schedule = schedule
        self.noise = noise or NoiseConfig()
        self.out_dir = Path(out_dir) if out_dir else None
        self.meta = meta or {}
        self.optimizer = make_optimizer(model, schedule)
        self.rng = np.random.default_rng(schedule.seed)
        self.torch_gen = torch.Generator().manual_seed(schedule.seed)
        self.step = 0
        self.skipped_pairs = 0
        self.history: list[tuple[int, str, str, float]] = []
        # synthetic source + EOS must fit within max_len
        self.max_gen_len = min(schedule.max_gen_len or model.cfg.max_len, model.cfg.max_len) - 1

    # -- single steps ------------------------------------------------------

    def _update(self, loss: torch.Tensor, batch, task: str) -> float:
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError(
                f"non-finite loss at step {self.step} ({task}), batch {batch_digest(batch)}"
            )
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.schedule.clip_norm:
            torch.nn.utils.clip_grad_norm_(
                [p for p in self.model.parameters() if p.requires_grad], self.schedule.clip_norm
            )
        self.optimizer.step()
        return value

    def dae_step(self, batch: Sequence[Sequence[int]], lang: str) -> float:
        """Reconstruct clean sentences from noised copies, one optimizer step."""
        self.model.train()
        noisy = [add_noise(s, self.noise, self.rng) + [EOS_ID] for s in batch]
        src = pad_batch(noisy)
        tin, tgt = teacher_forcing(batch, self.model.bos_id(lang))
        with torch.random.fork_rng(devices=[]):
            torch.set_rng_state(self.torch_gen.get_state())
            logits = self.model(src, lang, tin, lang)
            self.torch_gen.set_state(torch.get_rng_state())
        return self._update(loss_cross_entropy(logits, tgt), batch, DAE)

    def backtranslate(self, batch: Sequence[Sequence[int]], src_lang: str) -> list[list[int]]:
        src = pad_batch([list(s) + [EOS_ID] for s in batch])
        longest = max(len(s) for s in batch)
        limit = min(self.max_gen_len, math.ceil(self.schedule.bt_len_ratio * longest) + self.schedule.bt_len_margin)
        with torch.no_grad():
            hyps = greedy_decode(self.model, src, src_lang, other_lang(src_lang), limit)
        return [h.tokens for h in hyps]

    def backtranslation_step(self, batch: Sequence[Sequence[int]], src_lang: str) -> float | None:
        """Translate ``batch`` with the current model (no gradient), then train
        the reverse direction on (synthetic -> original). Returns None when every
        synthetic translation came back empty."""
        synthetic = self.backtranslate(batch, src_lang)
        pairs = [(syn, orig) for syn, orig in zip(synthetic, batch) if syn]
        self.skipped_pairs += len(batch) - len(pairs)
        if not pairs:
            return None
        self.model.train()
        src = pad_batch([syn + [EOS_ID] for syn, _ in pairs])
        tin, tgt = teacher_forcing([orig for _, orig in pairs], self.model.bos_id(src_lang))
        with torch.random.fork_rng(devices=[]):
            torch.set_rng_state(self.torch_gen.get_state())
            logits = self.model(src, other_lang(src_lang), tin, src_lang)
            self.torch_gen.set_state(torch.get_rng_state())
        return self._update(loss_cross_entropy(logits, tgt), [o for _, o in pairs], BT)

    def sample_batch(self, lang: str) -> list[list[int]]:
        corpus = self.corpora[lang]
        idx = self.rng.integers(len(corpus), size=self.schedule.batch_size)
        return [corpus[i] for i in idx]

    # -- loop ----------------------------------------------------------------

    def train(self, until: int | None = None) -> list[tuple[int, str, str, float]]:
        """Run scheduled steps up to ``until`` (default: schedule.steps)."""
        until = self.schedule.steps if until is None else until
        metrics = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if self.step == 0:
                (self.out_dir / "metrics.tsv").write_text("", encoding="utf-8")
                self.save(self.out_dir / "checkpoint_0.ckpt")
            metrics = open(self.out_dir / "metrics.tsv", "a", encoding="utf-8")
        try:
            while self.step < until:
                task, lang = self.schedule.task_at(self.step)
                batch = self.sample_batch(lang)
                if task == DAE:
                    loss = self.dae_step(batch, lang)
                else:
                    loss = self.backtranslation_step(batch, lang)
                loss_val = float("nan") if loss is None else loss
                self.history.append((self.step, task, lang, loss_val))
                if metrics is not None:
                    metrics.write(f"{self.step}\t{task}\t{lang}\t{loss_val!r}\n")
                self.step += 1
                every = self.schedule.checkpoint_every
                if self.out_dir is not None and every and self.step % every == 0:
                    metrics.flush()
                    self.save(self.out_dir / f"checkpoint_{self.step}.ckpt")
            if self.out_dir is not None:
                self.save(self.out_dir / "checkpoint_last.ckpt")
        finally:
            if metrics is not None:
                metrics.close()
        return self.history

    # -- persistence -----------------------------------------------------------

    def state_extra(self) -> dict:
        return {
            "schedule": asdict(self.schedule),
            "noise": asdict(self.noise),
            "numpy_rng": self.rng.bit_generator.state,
            "torch_rng": self.torch_gen.get_state().tolist(),
            "skipped_pairs": self.skipped_pairs,
            "optimizer": {"name": "Adam", "lr": self.schedule.lr, "betas": list(self.schedule.betas)},
            "meta": self.meta,
        }

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.model, self.vocabs, self.step, self.optimizer, self.state_extra())

    @classmethod
    def resume(
        cls,
        path: str | Path,
        corpora: dict[str, list[list[int]]],
        vocabs: dict[str, Vocab] | None = None,
        out_dir: str | Path | None = None,
    ) -> "Trainer":
        expect = {lang: vocabs[lang].digest() for lang in LANGS} if vocabs else None
        ckpt = load_checkpoint(path, expect_vocab_hashes=expect)
        extra = ckpt.extra
        if "schedule" not in extra:
            raise CheckpointError("checkpoint has no trainer state")
        schedule = TrainingSchedule(**extra["schedule"])
        noise = NoiseConfig(**extra["noise"])
        trainer = cls(ckpt.model, ckpt.vocabs, corpora, schedule, noise, out_dir, extra.get("meta"))
        trainer.optimizer.load_state_dict(ckpt.optimizer_state)
        trainer.rng.bit_generator.state = extra["numpy_rng"]
        trainer.torch_gen.set_state(torch.tensor(extra["torch_rng"], dtype=torch.uint8))
        trainer.step = ckpt.step
        trainer.skipped_pairs = extra["skipped_pairs"]
        if trainer.out_dir is not None:
            trainer.out_dir.mkdir(parents=True, exist_ok=True)
            _truncate_metrics(trainer.out_dir / "metrics.tsv", trainer.step)
        return trainer


def _truncate_metrics(path: Path, step: int) -> None:
    """Drop log lines at or beyond ``step`` so a resumed run appends cleanly."""
    if not path.exists():
        path.write_text("", encoding="utf-8")
        return
    keep = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln and int(ln.split("\t")[0]) < step]
    path.write_text("".join(ln + "\n" for ln in keep), encoding="utf-8")


def read_metrics(path: str | Path) -> list[tuple[int, str, str, float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            step, task, lang, loss = line.split("\t")
            rows.append((int(step), task, lang, float(loss)))
    return rows


def init_embeddings(model: Seq2Seq, lang: str, vocab: Vocab, emb, target_std: float | None = None) -> int:
    """Copy pretrained vectors into ``lang``'s embedding rows.

    Rows for tokens the pretrained matrix lacks keep their initial values.
    With ``target_std`` the copied vectors are rescaled to that standard
    deviation. Returns the number of rows copied.
    """
    table = model.embedding(lang).weight
    if emb.dim != table.shape[1]:
        raise ValueError(f"pretrained dim {emb.dim} != model embedding dim {table.shape[1]}")
    rows, src = [], []
    for tok in vocab.learned():
        if tok in emb:
            rows.append(vocab.stoi[tok])
            src.append(emb.index[tok])
    if not rows:
        return 0
    vecs = torch.as_tensor(emb.vectors[src], dtype=table.dtype)
    if target_std is not None:
        vecs = vecs * (target_std / float(vecs.std()))
    with torch.no_grad():
        table[torch.tensor(rows)] = vecs
    return len(rows)


def encode_corpus(sentences: Sequence[Sequence[str]], vocab: Vocab, max_len: int) -> list[list[int]]:
    """Token lists -> id lists without EOS, truncated so EOS still fits."""
    out = []
    for toks in sentences:
        ids = vocab.encode(toks, add_eos=False)[: max_len - 1]
        if ids:
            out.append(ids)
    return out
