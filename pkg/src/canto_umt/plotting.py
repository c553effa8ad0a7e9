"""Report figures rendered to PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .corpus import BUCKET_WIDTH, OPEN_BUCKET_LOW  # noqa: E402


def plot_length_histogram(hist: Mapping[int, int], path: str | Path) -> Path:
    lows = sorted(hist)
    labels = [f"{lo}+" if lo >= OPEN_BUCKET_LOW else f"{lo}-{lo + BUCKET_WIDTH - 1}" for lo in lows]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(range(len(lows)), [hist[lo] for lo in lows], color="#4c72b0")
    ax.set_xticks(range(len(lows)))
    ax.set_xticklabels(labels, rotation=60, fontsize=7)
    ax.set_xlabel("sentence length (characters)")
    ax.set_ylabel("sentences")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def _smooth(values: Sequence[float], window: int) -> list[float]:
    out, acc = [], []
    for v in values:
        acc.append(v)
        if len(acc) > window:
            acc.pop(0)
        out.append(sum(acc) / len(acc))
    return out


def plot_loss_curves(rows: Sequence[tuple[int, str, str, float]], path: str | Path, window: int = 50) -> Path:
    """One moving-average curve per (task, language) from metrics rows."""
    series: dict[str, tuple[list[int], list[float]]] = {}
    for step, task, lang, loss in rows:
        if loss != loss:  # all back-translations of the batch came back empty
            continue
        xs, ys = series.setdefault(f"{task} {lang}", ([], []))
        xs.append(step)
        ys.append(loss)
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in sorted(series):
        xs, ys = series[name]
        ax.plot(xs, _smooth(ys, window), label=name, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    if series:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_bleu_bars(scores: Mapping[str, float], path: str | Path) -> Path:
    names = list(scores)
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 3.5))
    ax.bar(range(len(names)), [scores[n] for n in names], color="#55a868")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, fontsize=8)
    ax.set_ylabel("character BLEU")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
