from __future__ import annotations

import hashlib
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, EOS = "<PAD>", "<UNK>", "<EOS>"
LANGS = ("L1", "L2")
BOS = {lang: f"<BOS_{lang}>" for lang in LANGS}
RESERVED = (PAD, UNK, EOS, BOS["L1"], BOS["L2"])
PAD_ID, UNK_ID, EOS_ID = 0, 1, 2
BOS_ID = {"L1": 3, "L2": 4}


def other_lang(lang: str) -> str:
    if lang not in LANGS:
        raise ValueError(f"invalid language {lang!r}")
    return "L2" if lang == "L1" else "L1"


class Vocab:
    """Bijective token <-> id map with frequency counts.

    Reserved tokens occupy the first ids; learned tokens follow in order of
    descending frequency, ties broken by the token string.
    """

    def __init__(self, counts: Counter | dict[str, int]):
        counts = Counter({t: c for t, c in counts.items() if t not in RESERVED})
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        self.itos: list[str] = list(RESERVED) + ordered
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.counts = counts

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        counts: Counter = Counter()
        for toks in sentences:
            counts.update(toks)
        return cls(counts)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos and self.counts == other.counts

    def __hash__(self):
        return hash(self.digest())

    def learned(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def freq(self, token: str) -> int:
        return self.counts.get(token, 0)

    def encode(self, tokens: Sequence[str], add_eos: bool = True) -> list[int]:
        ids = [self.stoi.get(t, UNK_ID) for t in tokens]
        if add_eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids: Sequence[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            if i == EOS_ID and strip_special:
                break
            tok = self.itos[i]
            if strip_special and tok in RESERVED and tok != UNK:
                continue
            out.append(tok)
        return out

    def dumps(self) -> str:
        return "".join(f"{t}\t{self.counts[t]}\n" for t in self.learned())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        counts = Counter()
        for line in text.splitlines():
            if line:
                tok, cnt = line.rsplit("\t", 1)
                counts[tok] = int(cnt)
        return cls(counts)

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def merged(self, other: "Vocab") -> "Vocab":
        return Vocab(self.counts + other.counts)
