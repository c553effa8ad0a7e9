from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from ..vocab import BOS_ID, LANGS, PAD_ID
from .config import ModelConfig

NEG_INF = -1e9


def check_lang(lang: str) -> None:
    if lang not in LANGS:
        raise ValueError(f"invalid language {lang!r}")


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is not None:
        scores = scores.masked_fill(~mask, NEG_INF)
    return torch.softmax(scores, dim=-1)


def attend(query, states, mask=None, proj: nn.Module | None = None):
    """Luong attention of ``query`` (B, Tq, d) over ``states`` (B, Tk, d).

    With ``proj`` the score is the bilinear "general" form q W k^T, otherwise
    the plain dot product. Returns (context, weights).
    """
    keys = proj(states) if proj is not None else states
    scores = query @ keys.transpose(1, 2)
    if mask is not None:
        mask = mask[:, None, :]
    weights = masked_softmax(scores, mask)
    return weights @ states, weights


def loss_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood over non-padding target tokens."""
    if logits.shape[:-1] != targets.shape:
        raise ValueError(
            f"length mismatch: logits {tuple(logits.shape[:-1])} vs targets {tuple(targets.shape)}"
        )
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=PAD_ID
    )


@dataclass
class EncoderOutput:
    states: torch.Tensor  # (B, T, d_model)
    mask: torch.Tensor  # (B, T) True at real tokens
    final: torch.Tensor | None = None  # GRU: (layers, B, d_model)


class Seq2Seq(nn.Module):
    """Shared encoder with one decoder per language."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dim = cfg.embedding_dim
        if cfg.share_embeddings:
            self.embeddings = nn.ModuleDict({"joint": nn.Embedding(cfg.vocab_sizes["L1"], dim)})
            self._emb_key = {lang: "joint" for lang in LANGS}
        else:
            self.embeddings = nn.ModuleDict(
                {lang: nn.Embedding(cfg.vocab_sizes[lang], dim) for lang in LANGS}
            )
            self._emb_key = {lang: lang for lang in LANGS}
        self.last_attention: list[torch.Tensor] = []

    # -- embeddings ------------------------------------------------------

    def embedding(self, lang: str) -> nn.Embedding:
        check_lang(lang)
        return self.embeddings[self._emb_key[lang]]

    def set_embeddings(self, lang: str, weights: torch.Tensor) -> None:
        with torch.no_grad():
            self.embedding(lang).weight.copy_(weights)

    def freeze_embeddings(self) -> None:
        for emb in self.embeddings.values():
            emb.weight.requires_grad_(False)

    # -- interface -------------------------------------------------------

    def bos_id(self, lang: str) -> int:
        check_lang(lang)
        return BOS_ID[lang]

    def check_length(self, ids: torch.Tensor) -> None:
        if ids.shape[-1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_len {self.cfg.max_len}")

    def encode(self, src: torch.Tensor, lang: str) -> EncoderOutput:
        raise NotImplementedError

    def decode(self, tgt_in: torch.Tensor, enc: EncoderOutput, lang: str) -> torch.Tensor:
        """Teacher-forced logits (B, T, V) for decoder inputs starting with BOS."""
        raise NotImplementedError

    def start_state(self, enc: EncoderOutput, lang: str):
        raise NotImplementedError

    def decode_step(self, prev: torch.Tensor, state, enc: EncoderOutput, lang: str):
        """One decoding step: (B,) previous ids -> (B, V) logits, new state."""
        raise NotImplementedError

    def forward(self, src, src_lang, tgt_in, tgt_lang):
        return self.decode(tgt_in, self.encode(src, src_lang), tgt_lang)

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Parameters keyed by their owning block, e.g. ``dec_shared.0``."""
        groups: dict[str, list] = {}
        for name, p in self.named_parameters():
            parts = name.split(".")
            depth = 3 if parts[0] in ("dec_private", "enc_private") else 2
            groups.setdefault(".".join(parts[:depth]), []).append((name, p))
        return groups


def sinusoidal_positions(max_len: int, dim: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(max_len, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div[: dim // 2])
    return pe
