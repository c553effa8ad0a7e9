"""Corpus construction: sentence cutting, noise removal, language routing and
length-preserving downsampling of monolingual text dumps."""

from __future__ import annotations

import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class LanguageLabel(str, enum.Enum):
    CANTONESE = "Cantonese"
    MANDARIN = "Mandarin"
    AMBIGUOUS = "Ambiguous"
    FOREIGN = "Foreign"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.lower() == value.lower():
                    return member
        return None


CANTONESE_MARKERS = frozenset("咗唔係喺啦嘅既咁佢哋冇仲嘢乜噉咪咩俾呢嚟黎啫喂喇喎睇")
MANDARIN_MARKERS = frozenset("是的他她沒也看說在说")

# The half-width '.' only cuts when followed by whitespace or end of text.
ALWAYS_CUTS = frozenset("。．!！?？")
HALFWIDTH_DOT = "."
CUT_CHARS = ALWAYS_CUTS | {HALFWIDTH_DOT}

CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0x20000, 0x2A6DF),
    (0x2A700, 0x2B73F),
    (0x2B740, 0x2B81F),
    (0x2B820, 0x2CEAF),
    (0x2CEB0, 0x2EBEF),
    (0x30000, 0x3134F),
    (0x31350, 0x323AF),
)

# Emoji blocks plus the joiners/modifiers that glue emoji sequences together.
EMOJI_RANGES = (
    (0x1F000, 0x1FAFF),
    (0x2300, 0x23FF),
    (0x2600, 0x27BF),
    (0x2B00, 0x2BFF),
    (0xFE00, 0xFE0F),
    (0x200D, 0x200D),
    (0x20E3, 0x20E3),
    (0xE0020, 0xE007F),
)

_URL_RE = re.compile(r"(?:[A-Za-z][A-Za-z0-9+.\-]*://|www\.)\S+")
_HASHTAG_RE = re.compile(r"#\w+")
_EMOJI_RE = re.compile(
    "[" + "".join(f"{chr(lo)}-{chr(hi)}" for lo, hi in EMOJI_RANGES) + "]+"
)
_WS_RE = re.compile(r"\s+")

BUCKET_WIDTH = 5
OPEN_BUCKET_LOW = 100


@dataclass(frozen=True)
class RawDocument:
    source_id: str
    text: str

    def __post_init__(self):
        if not self.source_id:
            raise ValueError("source_id must be non-empty")


@dataclass(frozen=True)
class Sentence:
    text: str
    source_id: str = ""
    label: LanguageLabel | None = None

    def with_text(self, text: str) -> "Sentence":
        return Sentence(text, self.source_id, self.label)

    def with_label(self, label: LanguageLabel) -> "Sentence":
        return Sentence(self.text, self.source_id, label)


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in CJK_RANGES)


def cut_sentences(doc: RawDocument) -> list[Sentence]:
    """Split a document at sentence-final punctuation and newlines.

    A run of consecutive cut marks stays attached to the sentence it ends.
    The half-width full stop only cuts when the run is followed by whitespace
    or the end of the text, so decimals survive. Marks inside a URL (such as
    a query string's ``?``) never cut; a run closing the URL still does.
    """
    text = doc.text
    out: list[Sentence] = []
    start = 0
    i = 0
    n = len(text)
    protected = set()
    for m in _URL_RE.finditer(text):
        end = m.end()
        while end > m.start() and text[end - 1] in CUT_CHARS:
            end -= 1
        protected.update(range(m.start(), end))

    def emit(end: int) -> None:
        piece = text[start:end].strip()
        if piece:
            out.append(Sentence(piece, doc.source_id))

    while i < n:
        ch = text[i]
        if ch == "\n" or ch == "\r":
            emit(i)
            i += 1
            start = i
            continue
        if ch in CUT_CHARS and i not in protected:
            j = i
            while j < n and text[j] in CUT_CHARS:
                j += 1
            run = text[i:j]
            if any(c in ALWAYS_CUTS for c in run) or j == n or text[j].isspace():
                emit(j)
                start = j
            i = j
            continue
        i += 1
    emit(n)
    return out


def _strip_text(text: str) -> str:
    text = _URL_RE.sub(" ", text)
    text = _HASHTAG_RE.sub(" ", text)
    text = _EMOJI_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def strip_noise(s: Sentence) -> Sentence:
    """Remove URLs, hashtags and emoji, collapsing leftover whitespace.

    An all-noise sentence comes back with empty text; callers drop it.
    """
    return s.with_text(_strip_text(s.text))


def marker_counts(text: str) -> tuple[int, int]:
    """Return (cantonese, mandarin) marker-character counts."""
    can = sum(1 for c in text if c in CANTONESE_MARKERS)
    man = sum(1 for c in text if c in MANDARIN_MARKERS)
    return can, man


def classify_language(s: Sentence | str) -> LanguageLabel:
    text = s if isinstance(s, str) else s.text
    can, man = marker_counts(text)
    if can > man:
        return LanguageLabel.CANTONESE
    if man > can:
        return LanguageLabel.MANDARIN
    return LanguageLabel.AMBIGUOUS


def cjk_ratio(text: str) -> float:
    if not text:
        return 0.0
    return sum(1 for c in text if is_cjk(c)) / len(text)


def foreign_filter(s: Sentence | str, threshold: float = 0.05) -> bool:
    """True to keep. Keeps at exactly the threshold."""
    text = s if isinstance(s, str) else s.text
    if not text:
        return False
    n_cjk = sum(1 for c in text if is_cjk(c))
    # integer comparison avoids float rounding at the boundary
    return n_cjk * 10**6 >= round(threshold * 10**6) * len(text)


def length_bucket(text: str) -> int:
    """Lower bound of the width-5 length bucket; 100+ share one open bucket."""
    n = len(text)
    if n >= OPEN_BUCKET_LOW:
        return OPEN_BUCKET_LOW
    return (n // BUCKET_WIDTH) * BUCKET_WIDTH


def length_histogram(texts: Iterable[str]) -> dict[int, int]:
    hist = Counter(length_bucket(t) for t in texts)
    return dict(sorted(hist.items()))


def downsample_balanced(
    corpus: Sequence[Sentence], target_size: int, seed: int
) -> list[Sentence]:
    """Stratified random subset that keeps the length distribution.

    Quotas per length bucket are allocated by the largest-remainder method,
    so the output has exactly ``target_size`` sentences. The subset is
    returned in original corpus order.
    """
    n = len(corpus)
    if target_size > n:
        raise ValueError(f"insufficient data: target {target_size} > corpus {n}")
    if target_size < 0:
        raise ValueError("target_size must be non-negative")
    if target_size == n:
        return list(corpus)

    by_bucket: dict[int, list[int]] = {}
    for idx, s in enumerate(corpus):
        by_bucket.setdefault(length_bucket(s.text), []).append(idx)
    buckets = sorted(by_bucket)

    exact = {b: target_size * len(by_bucket[b]) / n for b in buckets}
    quota = {b: int(exact[b]) for b in buckets}
    short = target_size - sum(quota.values())
    by_remainder = sorted(buckets, key=lambda b: (-(exact[b] - quota[b]), b))
    for b in by_remainder[:short]:
        quota[b] += 1

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for b in buckets:
        members = by_bucket[b]
        if quota[b]:
            picks = rng.choice(len(members), size=quota[b], replace=False)
            chosen.extend(members[i] for i in picks)
    chosen.sort()
    return [corpus[i] for i in chosen]


@dataclass
class PipelineConfig:
    foreign_threshold: float = 0.05
    downsample_label: str = ""
    downsample_target: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        cfg = cls()
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            if key == "foreign_threshold":
                cfg.foreign_threshold = float(value)
            elif key == "downsample_label":
                cfg.downsample_label = value
            elif key == "downsample_target":
                cfg.downsample_target = int(value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if not 0.0 <= cfg.foreign_threshold <= 1.0:
            raise ValueError("foreign_threshold must be in [0, 1]")
        return cfg


STAT_KEYS = (
    "input_lines",
    "invalid_utf8_lines",
    "cut_sentences",
    "dropped_empty",
    "after_strip",
    "dropped_foreign",
    "after_foreign",
    "label_cantonese",
    "label_mandarin",
    "label_ambiguous",
    "downsampled_out",
)


@dataclass
class PipelineStats:
    counts: Counter = field(default_factory=Counter)
    histogram: dict[int, int] = field(default_factory=dict)

    def merge(self, other: "PipelineStats") -> "PipelineStats":
        hist = Counter(self.histogram)
        hist.update(other.histogram)
        return PipelineStats(self.counts + other.counts, dict(sorted(hist.items())))

    def report(self) -> str:
        return "".join(f"{k}: {self.counts.get(k, 0)}\n" for k in STAT_KEYS)

    def histogram_table(self) -> str:
        return "".join(f"{low}\t{cnt}\n" for low, cnt in sorted(self.histogram.items()))

    @classmethod
    def read(cls, report_path: str | Path, hist_path: str | Path | None = None) -> "PipelineStats":
        counts = Counter()
        for line in Path(report_path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                k, v = line.split(":", 1)
                counts[k.strip()] = int(v)
        hist = {}
        if hist_path is not None:
            for line in Path(hist_path).read_text(encoding="utf-8").splitlines():
                if line.strip():
                    low, cnt = line.split("\t")
                    hist[int(low)] = int(cnt)
        return cls(counts, hist)


def process_document(doc: RawDocument, cfg: PipelineConfig, counts: Counter) -> Iterator[Sentence]:
    """Cut, strip, filter and label one document, updating stage counters."""
    for sent in cut_sentences(doc):
        counts["cut_sentences"] += 1
        sent = strip_noise(sent)
        if not sent.text:
            counts["dropped_empty"] += 1
            continue
        counts["after_strip"] += 1
        if not foreign_filter(sent, cfg.foreign_threshold):
            counts["dropped_foreign"] += 1
            continue
        counts["after_foreign"] += 1
        label = classify_language(sent)
        counts["label_" + label.value.lower()] += 1
        yield sent.with_label(label)


def read_lines(path: Path, counts: Counter) -> Iterator[tuple[int, str]]:
    lines = path.read_bytes().split(b"\n")
    if lines[-1] == b"":
        lines.pop()
    for lineno, raw in enumerate(lines, 1):
        counts["input_lines"] += 1
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            counts["invalid_utf8_lines"] += 1
            text = raw.decode("utf-8", errors="ignore")
        yield lineno, text


LABEL_FILES = {
    LanguageLabel.CANTONESE: "cantonese.txt",
    LanguageLabel.MANDARIN: "mandarin.txt",
    LanguageLabel.AMBIGUOUS: "ambiguous.txt",
}


def run_pipeline(
    cfg: PipelineConfig,
    input_paths: Sequence[str | Path],
    out_dir: str | Path,
    seed: int = 0,
) -> PipelineStats:
    """Run cut -> strip -> foreign filter -> classify over text files.

    Writes one file per retained label, ``stats.txt`` and ``length_hist.tsv``
    into ``out_dir``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    counts: Counter = Counter({k: 0 for k in STAT_KEYS})
    routed: dict[LanguageLabel, list[Sentence]] = {lab: [] for lab in LABEL_FILES}
    for p in input_paths:
        path = Path(p)
        if not path.is_file():
            raise FileNotFoundError(f"unreadable input: {path}")
        for lineno, text in read_lines(path, counts):
            doc = RawDocument(f"{path}:{lineno}", text)
            for sent in process_document(doc, cfg, counts):
                routed[sent.label].append(sent)

    if cfg.downsample_target:
        label = LanguageLabel(cfg.downsample_label)
        routed[label] = downsample_balanced(routed[label], cfg.downsample_target, seed)
        counts["downsampled_out"] = len(routed[label])

    retained = [s.text for sents in routed.values() for s in sents]
    stats = PipelineStats(counts, length_histogram(retained))

    for label, fname in LABEL_FILES.items():
        with open(out / fname, "w", encoding="utf-8", newline="\n") as fh:
            for s in routed[label]:
                fh.write(s.text + "\n")
    (out / "stats.txt").write_text(stats.report(), encoding="utf-8")
    (out / "length_hist.tsv").write_text(stats.histogram_table(), encoding="utf-8")
    logger.info("pipeline: %s", dict(counts))
    return stats
