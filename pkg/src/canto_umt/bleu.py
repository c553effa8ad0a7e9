"""Corpus-level character BLEU."""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .segmentation import char_tokenize

MAX_ORDER = 4


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list[int]
    totals: list[int]

    def as_rows(self) -> list[tuple[str, str]]:
        rows = [("bleu", f"{self.bleu:.6f}")]
        rows += [(f"p{n + 1}", f"{p:.6f}") for n, p in enumerate(self.precisions)]
        rows += [
            ("brevity_penalty", f"{self.brevity_penalty:.6f}"),
            ("hyp_len", str(self.hyp_len)),
            ("ref_len", str(self.ref_len)),
        ]
        return rows

    def dumps(self) -> str:
        return "".join(f"{k}\t{v}\n" for k, v in self.as_rows())

    def to_dict(self) -> dict:
        return asdict(self)


def _is_punct(tok: str) -> bool:
    return len(tok) == 1 and unicodedata.category(tok).startswith("P")


def char_tokens(text: str, strip_punct: bool = False) -> list[str]:
    toks = list(char_tokenize(text).tokens)
    if strip_punct:
        toks = [t for t in toks if not _is_punct(t)]
    return toks


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu_tokens(hyps: Sequence[Sequence[str]], refs: Sequence[Sequence[str]]) -> BleuReport:
    """BLEU-4 with uniform weights over pre-tokenized sentences.

    A zero precision at order 2..4 is smoothed to (0+1)/(total+1); a zero
    unigram precision makes the score 0.
    """
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc, rc = ngram_counts(h, n), ngram_counts(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)

    precisions = []
    for n in range(MAX_ORDER):
        if matches[n] == 0 and n > 0:
            precisions.append((matches[n] + 1) / (totals[n] + 1))
        else:
            precisions.append(matches[n] / totals[n] if totals[n] else 0.0)

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1 - ref_len / hyp_len)
    else:
        bp = 1.0
    if min(precisions) <= 0 or bp == 0:
        score = 0.0
    else:
        score = 100 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, matches, totals)


def char_bleu(hypotheses: Sequence[str], references: Sequence[str], strip_punct: bool = False) -> BleuReport:
    if len(hypotheses) != len(references):
        raise ValueError(f"length mismatch: {len(hypotheses)} hypotheses vs {len(references)} references")
    if not references:
        raise ValueError("empty corpus")
    refs = []
    for i, r in enumerate(references):
        toks = char_tokens(r, strip_punct)
        if not toks:
            raise ValueError(f"empty reference sentence at line {i + 1}")
        refs.append(toks)
    hyps = [char_tokens(h, strip_punct) for h in hypotheses]
    return corpus_bleu_tokens(hyps, refs)
