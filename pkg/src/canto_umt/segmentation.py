"""Character- and dictionary-level tokenization for CJK text.

Letter runs (English code-switching) and digit runs stay whole in every
scheme; only CJK ideographs and punctuation are split per code point.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

from .corpus import Sentence, is_cjk

Scheme = Literal["char", "word", "bpe"]
END_MARKER = "</w>"


@dataclass(frozen=True)
class TokenizedSentence:
    tokens: tuple[str, ...]
    scheme: Scheme = "char"

    def __post_init__(self):
        if any(not t for t in self.tokens):
            raise ValueError("empty token")

    def __len__(self):
        return len(self.tokens)

    def to_line(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def from_line(cls, line: str, scheme: Scheme = "char") -> "TokenizedSentence":
        return cls(tuple(line.split()), scheme)


@dataclass(frozen=True)
class Lexicon:
    entries: frozenset[str]
    max_entry_len: int = 1

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Lexicon":
        entries = frozenset(w for w in (w.strip() for w in words) if w)
        if any(any(c.isspace() for c in w) for w in entries):
            raise ValueError("lexicon entries may not contain whitespace")
        longest = max((len(w) for w in entries), default=1)
        return cls(entries, max(1, longest))

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        return cls.from_words(Path(path).read_text(encoding="utf-8").splitlines())

    def __contains__(self, word: str) -> bool:
        return word in self.entries


def _char_class(ch: str) -> str:
    if ch.isspace():
        return "space"
    if is_cjk(ch):
        return "cjk"
    if ch.isdecimal():
        return "digit"
    if ch.isalpha() and not unicodedata.category(ch).startswith("Lo"):
        return "letter"
    return "single"


def _text_of(s: Sentence | str) -> str:
    return s if isinstance(s, str) else s.text


def char_units(text: str) -> list[str]:
    units: list[str] = []
    prev = None
    for ch in text:
        cls = _char_class(ch)
        if cls == "space":
            prev = None
            continue
        if cls in ("letter", "digit") and cls == prev:
            units[-1] += ch
        else:
            units.append(ch)
        prev = cls
    return units


def char_tokenize(s: Sentence | str) -> TokenizedSentence:
    return TokenizedSentence(tuple(char_units(_text_of(s))), "char")


def word_tokenize(s: Sentence | str, lex: Lexicon) -> TokenizedSentence:
    """Greedy forward maximum matching over character units."""
    units = char_units(_text_of(s))
    tokens: list[str] = []
    i = 0
    while i < len(units):
        best_j = i + 1
        candidate = units[i]
        j = i + 1
        while j < len(units) and len(candidate) + len(units[j]) <= lex.max_entry_len:
            candidate += units[j]
            j += 1
            if candidate in lex:
                best_j = j
        tokens.append("".join(units[i:best_j]))
        i = best_j
    return TokenizedSentence(tuple(tokens), "word")


def join_subwords(tokens: Iterable[str], marker: str = END_MARKER) -> list[str]:
    """Reassemble words from end-marked subwords."""
    words: list[str] = []
    buf = ""
    for tok in tokens:
        if tok.endswith(marker):
            words.append(buf + tok[: -len(marker)])
            buf = ""
        else:
            buf += tok
    if buf:
        raise ValueError("dangling continuation")
    return words


def detokenize(t: TokenizedSentence, marker: str = END_MARKER) -> str:
    if t.scheme == "bpe":
        return "".join(join_subwords(t.tokens, marker))
    return "".join(t.tokens)


def tokenize(s: Sentence | str, scheme: Scheme, lex: Lexicon | None = None) -> TokenizedSentence:
    if scheme == "char":
        return char_tokenize(s)
    if scheme == "word":
        return word_tokenize(s, lex or Lexicon(frozenset(), 1))
    raise ValueError(f"tokenize() handles char/word schemes, got {scheme!r}")
