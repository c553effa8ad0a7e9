"""Greedy and beam-search generation plus sentence-level translation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch

from .bpe import MergeTable, apply_bpe
from .models import Seq2Seq
from .segmentation import END_MARKER, Lexicon, TokenizedSentence, detokenize, tokenize
from .vocab import BOS_ID, EOS_ID, PAD_ID, UNK, UNK_ID, Vocab, other_lang

DEFAULT_LENGTH_PENALTY = 0.6


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float = 0.0
    finished: bool = False

    def score(self, alpha: float = DEFAULT_LENGTH_PENALTY) -> float:
        length = max(1, len(self.tokens) + (1 if self.finished else 0))
        return self.logprob / length**alpha


NEVER_EMIT = (PAD_ID, *BOS_ID.values())


def step_logprobs(logits: torch.Tensor) -> torch.Tensor:
    """Log-probabilities over the next token; padding and BOS are never emitted."""
    logits = logits.double().clone()
    logits[:, list(NEVER_EMIT)] = float("-inf")
    return torch.log_softmax(logits, dim=-1)


def pad_batch(seqs: Sequence[Sequence[int]], device=None) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD_ID, dtype=torch.long, device=device)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


@torch.no_grad()
def greedy_decode(
    model: Seq2Seq, src: torch.Tensor, src_lang: str, tgt_lang: str, max_len: int
) -> list[Hypothesis]:
    """Batched argmax decoding. ``src`` is a padded (B, T) id tensor."""
    was_training = model.training
    model.eval()
    try:
        enc = model.encode(src, src_lang)
        b = src.shape[0]
        state = model.start_state(enc, tgt_lang)
        prev = torch.full((b,), model.bos_id(tgt_lang), dtype=torch.long)
        done = torch.zeros(b, dtype=torch.bool)
        steps_tok, steps_lp = [], []
        for _ in range(max_len):
            logits, state = model.decode_step(prev, state, enc, tgt_lang)
            best_lp, best = step_logprobs(logits).max(dim=-1)
            steps_tok.append(best)
            steps_lp.append(best_lp)
            done = done | (best == EOS_ID)
            if bool(done.all()):
                break
            prev = best
        toks = torch.stack(steps_tok, 1).tolist()
        lps = torch.stack(steps_lp, 1).tolist()
        hyps = []
        for i in range(b):
            hyp = Hypothesis([])
            for tok, lp in zip(toks[i], lps[i]):
                hyp.logprob += lp
                if tok == EOS_ID:
                    hyp.finished = True
                    break
                hyp.tokens.append(tok)
            hyps.append(hyp)
    finally:
        model.train(was_training)
    return hyps


@torch.no_grad()
def beam_decode(
    model: Seq2Seq,
    src: torch.Tensor,
    src_lang: str,
    tgt_lang: str,
    beam_size: int,
    max_len: int,
    alpha: float = DEFAULT_LENGTH_PENALTY,
) -> Hypothesis:
    """Beam search for a single source sentence (``src`` of shape (1, T)).

    Hypotheses are ranked by length-normalized log-probability. The greedy
    path competes in the final selection as well, so the returned score is
    never below the greedy one.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    greedy = greedy_decode(model, src, src_lang, tgt_lang, max_len)[0]
    if beam_size == 1:
        return greedy
    was_training = model.training
    model.eval()
    try:
        enc = model.encode(src, src_lang)
        state = model.start_state(enc, tgt_lang)
        beams = [Hypothesis([])]
        prev = torch.tensor([model.bos_id(tgt_lang)])
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            k = len(beams)
            enc_k = type(enc)(
                enc.states.expand(k, -1, -1),
                enc.mask.expand(k, -1),
                None if enc.final is None else enc.final.expand(-1, k, -1).contiguous(),
            )
            logits, state = model.decode_step(prev, state, enc_k, tgt_lang)
            logp = step_logprobs(logits)
            base = torch.tensor([h.logprob for h in beams], dtype=torch.float64)[:, None]
            total = (base + logp).view(-1)
            top = torch.topk(total, min(2 * beam_size, total.numel()))
            vocab = logp.shape[1]
            keep_rows, next_beams, next_tokens = [], [], []
            for score, flat in zip(top.values.tolist(), top.indices.tolist()):
                row, tok = divmod(flat, vocab)
                if tok == EOS_ID:
                    finished.append(Hypothesis(list(beams[row].tokens), score, True))
                else:
                    next_beams.append(Hypothesis(beams[row].tokens + [tok], score))
                    keep_rows.append(row)
                    next_tokens.append(tok)
                if len(next_beams) == beam_size:
                    break
            if not next_beams:
                break
            best_open = max(h.score(alpha) for h in next_beams)
            if len(finished) >= beam_size and max(h.score(alpha) for h in finished) >= best_open:
                break
            beams = next_beams
            index = torch.tensor(keep_rows)
            state = model.reorder_state(state, index)
            prev = torch.tensor(next_tokens)
        candidates = finished or beams
    finally:
        model.train(was_training)
    best = max(candidates, key=lambda h: h.score(alpha))
    return best if best.score(alpha) >= greedy.score(alpha) else greedy


@dataclass
class ModelBundle:
    """A model with the vocabularies and tokenizer settings it was trained on."""

    model: Seq2Seq
    vocabs: dict[str, Vocab]
    scheme: str = "char"
    lexicon: Lexicon | None = None
    bpe: dict[str, MergeTable] = field(default_factory=dict)

    def tokenize(self, text: str, lang: str) -> TokenizedSentence:
        if self.scheme == "bpe":
            words = tokenize(text, "word", self.lexicon)
            return apply_bpe(words, self.bpe[lang])
        return tokenize(text, self.scheme, self.lexicon)

    def detokenize(self, tokens: Sequence[str]) -> str:
        marker = next(iter(self.bpe.values())).end_marker if self.bpe else END_MARKER
        if self.scheme == "bpe":
            tokens = [t + marker if t == UNK else t for t in tokens]
            # a truncated hypothesis may end mid-word; close it
            if tokens and not tokens[-1].endswith(marker):
                tokens[-1] += marker
        return detokenize(TokenizedSentence(tuple(tokens), self.scheme), marker)


@dataclass
class Translation:
    text: str
    tokens: list[str]
    score: float
    unk_count: int = 0
    truncated: bool = False


def translate(
    bundle: ModelBundle,
    sentence: str,
    src_lang: str,
    tgt_lang: str | None = None,
    beam_size: int = 1,
    max_len: int = 100,
    alpha: float = DEFAULT_LENGTH_PENALTY,
) -> Translation:
    tgt_lang = tgt_lang or other_lang(src_lang)
    toks = bundle.tokenize(sentence, src_lang).tokens
    ids = bundle.vocabs[src_lang].encode(toks)
    limit = bundle.model.cfg.max_len
    if len(ids) > limit:
        ids = ids[: limit - 1] + [EOS_ID]
    src = pad_batch([ids])
    hyp = beam_decode(bundle.model, src, src_lang, tgt_lang, beam_size, min(max_len, limit), alpha)
    out_tokens = bundle.vocabs[tgt_lang].decode(hyp.tokens)
    unk = sum(1 for i in ids if i == UNK_ID) + sum(1 for i in hyp.tokens if i == UNK_ID)
    return Translation(
        bundle.detokenize(out_tokens),
        out_tokens,
        hyp.score(alpha),
        unk,
        not hyp.finished,
    )
