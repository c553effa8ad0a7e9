"""Character-set conversion and the conversion baseline."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .bleu import BleuReport, char_bleu


class ConversionTableError(ValueError):
    pass


@dataclass(frozen=True)
class ConversionTable:
    """One-to-one per-character map; characters outside the domain pass through.

    The constructor rejects maps that are not injective and maps whose targets
    are themselves remapped, because either would break idempotence.
    """

    mapping: Mapping[str, str]

    def __post_init__(self):
        seen: dict[str, str] = {}
        for src, tgt in self.mapping.items():
            if len(src) != 1 or len(tgt) != 1:
                raise ConversionTableError(f"entries must be single characters: {src!r} -> {tgt!r}")
            if tgt in seen:
                raise ConversionTableError(f"not injective: {seen[tgt]!r} and {src!r} both map to {tgt!r}")
            seen[tgt] = src
        for tgt in seen:
            if tgt in self.mapping and self.mapping[tgt] != tgt:
                raise ConversionTableError(f"target {tgt!r} is itself remapped to {self.mapping[tgt]!r}")

    def __len__(self) -> int:
        return len(self.mapping)

    @classmethod
    def loads(cls, text: str) -> "ConversionTable":
        mapping: dict[str, str] = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConversionTableError(f"line {n}: expected two tab-separated columns")
            src, tgt = parts[0].strip(), parts[1].strip()
            if src in mapping and mapping[src] != tgt:
                raise ConversionTableError(f"line {n}: {src!r} mapped twice")
            mapping[src] = tgt
        return cls(mapping)

    @classmethod
    def load(cls, path: str | Path) -> "ConversionTable":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def bundled(cls) -> "ConversionTable":
        """The small Hong Kong-variant simplified to traditional table."""
        text = resources.files("canto_umt").joinpath("data/hk_conversion.tsv").read_text(encoding="utf-8")
        return cls.loads(text)


def convert_charset(sentence: str, table: ConversionTable) -> str:
    m = table.mapping
    return "".join(m.get(c, c) for c in sentence)


def baseline_evaluate(
    test_src: Sequence[str],
    test_ref: Sequence[str],
    table: ConversionTable,
    strip_punct: bool = False,
) -> BleuReport:
    """Score the untranslated source against the reference after both sides
    are mapped to the same character set."""
    if len(test_src) != len(test_ref):
        raise ValueError(f"misaligned test files: {len(test_src)} source vs {len(test_ref)} reference lines")
    hyps = [convert_charset(s, table) for s in test_src]
    refs = [convert_charset(r, table) for r in test_ref]
    return char_bleu(hyps, refs, strip_punct=strip_punct)
