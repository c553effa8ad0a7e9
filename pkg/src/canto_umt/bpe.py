"""Byte-pair encoding over word-tokenized corpora.

Words are split into characters with an end-of-word marker glued to the last
character, so ``低碳`` starts as ``低 碳</w>``. The most frequent adjacent pair
is merged repeatedly; ties go to the lexicographically smallest pair.
"""

from __future__ import annotations

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

from .segmentation import END_MARKER, TokenizedSentence

Mode = Literal["joint", "separate"]
HEADER_PREFIX = "#canto-umt-bpe v1"
DEFAULT_NUM_MERGES = 50_000


def word_symbols(word: str, marker: str = END_MARKER) -> list[str]:
    if not word:
        raise ValueError("empty word")
    chars = list(word)
    chars[-1] += marker
    return chars


def merge_pair(symbols: Sequence[str], left: str, right: str) -> list[str]:
    out: list[str] = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


@dataclass
class MergeTable:
    merges: list[tuple[str, str]] = field(default_factory=list)
    mode: Mode = "joint"
    end_marker: str = END_MARKER

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("duplicate merge pair")
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def __len__(self):
        return len(self.merges)

    def segment_word(self, word: str) -> tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = word_symbols(word, self.end_marker)
        ranks = self._ranks
        # Equivalent to replaying every merge in learned order: the next merge
        # that can fire is the lowest-ranked present pair above the last one.
        last = -1
        while len(symbols) > 1:
            candidates = [
                (r, p) for p in zip(symbols, symbols[1:])
                if (r := ranks.get(p, -1)) > last
            ]
            if not candidates:
                break
            last, pair = min(candidates)
            symbols = merge_pair(symbols, *pair)
        result = tuple(symbols)
        self._cache[word] = result
        return result

    def dumps(self) -> str:
        lines = [f"{HEADER_PREFIX} mode={self.mode} end_marker={self.end_marker}"]
        lines += [f"{a} {b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "MergeTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(HEADER_PREFIX):
            raise ValueError("missing BPE merges header")
        meta = dict(kv.split("=", 1) for kv in lines[0][len(HEADER_PREFIX):].split())
        merges = []
        for lineno, line in enumerate(lines[1:], 2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'left right'")
            merges.append((parts[0], parts[1]))
        return cls(merges, meta.get("mode", "joint"), meta.get("end_marker", END_MARKER))

    @classmethod
    def load(cls, path: str | Path) -> "MergeTable":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _word_counts(corpus: Iterable[Sequence[str]]) -> Counter:
    counts: Counter = Counter()
    for sent in corpus:
        tokens = sent.tokens if isinstance(sent, TokenizedSentence) else sent
        counts.update(tokens)
    return counts


def learn_merges(word_counts: Counter, num_merges: int, marker: str = END_MARKER) -> list[tuple[str, str]]:
    """Core BPE loop with incremental pair statistics and a lazy max-heap."""
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    words = sorted(word_counts)
    symbols = [word_symbols(w, marker) for w in words]
    freqs = [word_counts[w] for w in words]

    pair_counts: dict[tuple[str, str], int] = defaultdict(int)
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, syms in enumerate(symbols):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[idx]
            where[pair].add(idx)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges and heap:
        neg, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg or neg == 0:
            continue
        merges.append(pair)
        touched: set[tuple[str, str]] = set()
        for idx in sorted(where.pop(pair)):
            old = symbols[idx]
            new = merge_pair(old, *pair)
            f = freqs[idx]
            for p in zip(old, old[1:]):
                pair_counts[p] -= f
                touched.add(p)
            for p in zip(new, new[1:]):
                pair_counts[p] += f
                touched.add(p)
            for p in set(zip(old, old[1:])) - set(zip(new, new[1:])):
                where[p].discard(idx)
            for p in zip(new, new[1:]):
                where[p].add(idx)
            symbols[idx] = new
        pair_counts.pop(pair, None)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_counts.pop(p, None)
    return merges


def learn_bpe(
    corpora: Sequence[Iterable[Sequence[str]]],
    num_merges: int = DEFAULT_NUM_MERGES,
    mode: Mode = "joint",
    end_marker: str = END_MARKER,
) -> MergeTable | list[MergeTable]:
    """Learn merges from one or two word-tokenized corpora.

    Joint mode sums pair statistics over all corpora and returns one table;
    separate mode returns one table per corpus, each with ``num_merges``.
    """
    if not corpora:
        raise ValueError("no corpora given")
    counts = [_word_counts(c) for c in corpora]
    if mode == "joint":
        total = sum(counts, Counter())
        return MergeTable(learn_merges(total, num_merges, end_marker), "joint", end_marker)
    if mode == "separate":
        return [MergeTable(learn_merges(c, num_merges, end_marker), "separate", end_marker) for c in counts]
    raise ValueError(f"unknown BPE mode {mode!r}")


def apply_bpe(t: TokenizedSentence | Sequence[str], table: MergeTable) -> TokenizedSentence:
    words = t.tokens if isinstance(t, TokenizedSentence) else t
    out: list[str] = []
    for w in words:
        out.extend(table.segment_word(w))
    return TokenizedSentence(tuple(out), "bpe")


def initial_alphabet(words: Iterable[str], marker: str = END_MARKER) -> set[str]:
    alphabet: set[str] = set()
    for w in words:
        alphabet.update(word_symbols(w, marker))
    return alphabet
