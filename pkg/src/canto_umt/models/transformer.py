from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from ..vocab import LANGS, PAD_ID
from .base import EncoderOutput, Seq2Seq, masked_softmax, sinusoidal_positions
from .config import ModelConfig


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d_model, d_model)
        # a key bias only shifts every score of a query equally
        self.k = nn.Linear(d_model, d_model, bias=False)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def _split(self, x):
        b, t, d = x.shape
        return x.view(b, t, self.heads, d // self.heads).transpose(1, 2)

    def keys_values(self, key):
        """Projected keys and values, each (B, heads, Tk, d_head)."""
        return self._split(self.k(key)), self._split(self.v(key))

    def forward(self, query, key, mask, kv=None):
        """``mask`` broadcasts to (B, heads, Tq, Tk); True marks visible keys.
        ``kv`` supplies precomputed keys and values in place of ``key``."""
        b, tq, d = query.shape
        q = self._split(self.q(query))
        k, v = kv if kv is not None else self.keys_values(key)
        weights = masked_softmax(q @ k.transpose(-1, -2) / math.sqrt(d // self.heads), mask)
        out = (weights @ v).transpose(1, 2).reshape(b, tq, d)
        return self.o(out), weights


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        y = self.norm1(x)
        a, w = self.attn(y, y, mask)
        x = x + self.drop(a)
        x = x + self.drop(self.ffn(self.norm2(x)))
        return x, w


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, self_mask, memory, mem_mask):
        y = self.norm1(x)
        a, w_self = self.self_attn(y, y, self_mask)
        x = x + self.drop(a)
        a, w_cross = self.cross_attn(self.norm2(x), memory, mem_mask)
        x = x + self.drop(a)
        x = x + self.drop(self.ffn(self.norm3(x)))
        return x, w_self, w_cross

    def step(self, x, cache, memory, mem_mask):
        """One new position ``x`` (B, 1, d) against cached self-attention keys
        and values. ``cache`` holds (self_k, self_v, cross_k, cross_v)."""
        y = self.norm1(x)
        k_new, v_new = self.self_attn.keys_values(y)
        if cache is None:
            self_k, self_v = k_new, v_new
            cross = self.cross_attn.keys_values(memory)
        else:
            self_k = torch.cat([cache[0], k_new], dim=2)
            self_v = torch.cat([cache[1], v_new], dim=2)
            cross = cache[2:]
        a, _ = self.self_attn(y, None, None, kv=(self_k, self_v))
        x = x + self.drop(a)
        a, _ = self.cross_attn(self.norm2(x), None, mem_mask, kv=cross)
        x = x + self.drop(a)
        x = x + self.drop(self.ffn(self.norm3(x)))
        return x, (self_k, self_v) + tuple(cross)


class TransformerSeq2Seq(Seq2Seq):
    """Pre-norm transformer with a shared encoder and per-language decoders.

    The first ``shared_dec_layers`` decoder layers are single modules used by
    both language decoders; the rest are language-private. On the encoder
    side, ``shared_enc_layers`` (default: all) top layers are shared and the
    lower remainder is language-private.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        n_shared_enc = cfg.layers if cfg.shared_enc_layers is None else cfg.shared_enc_layers
        n_priv_enc = cfg.layers - n_shared_enc
        self.enc_private = nn.ModuleDict(
            {lang: nn.ModuleList(EncoderLayer(cfg) for _ in range(n_priv_enc)) for lang in LANGS}
        )
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(n_shared_enc))
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.dec_shared = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.shared_dec_layers))
        self.dec_private = nn.ModuleDict(
            {
                lang: nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers - cfg.shared_dec_layers))
                for lang in LANGS
            }
        )
        self.dec_norm = nn.ModuleDict({lang: nn.LayerNorm(cfg.d_model) for lang in LANGS})
        self.out_proj = nn.ModuleDict({lang: nn.Linear(cfg.d_model, cfg.vocab_sizes[lang]) for lang in LANGS})
        if cfg.embedding_dim != cfg.d_model:
            raise ValueError("transformer embeddings must have d_model dimensions")
        self.register_buffer("positions", sinusoidal_positions(cfg.max_len + 1, cfg.d_model), persistent=False)
        self.drop = nn.Dropout(cfg.dropout)
        self.reset_parameters()
        if cfg.freeze_embeddings:
            self.freeze_embeddings()

    def reset_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.cfg.init_seed)
        d = self.cfg.d_model
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("embeddings"):
                    std = d ** -0.5
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * std)
                elif "norm" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                else:
                    std = p.shape[1] ** -0.5
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * std)

    def decoder_layers(self, lang: str) -> list[DecoderLayer]:
        return list(self.dec_shared) + list(self.dec_private[lang])

    def encoder_layers(self, lang: str) -> list[EncoderLayer]:
        return list(self.enc_private[lang]) + list(self.enc_layers)

    def sharing_map(self) -> dict[str, list[str]]:
        """Block name backing each decoder layer, per language."""
        out = {}
        for lang in LANGS:
            names = [f"dec_shared.{i}" for i in range(len(self.dec_shared))]
            names += [f"dec_private.{lang}.{i}" for i in range(len(self.dec_private[lang]))]
            out[lang] = names
        return out

    def _embed(self, ids, lang, offset: int = 0):
        x = self.embedding(lang)(ids) * math.sqrt(self.cfg.d_model)
        pos = self.positions[offset: offset + ids.shape[1]].to(x.dtype)
        return self.drop(x + pos)

    def encode(self, src, lang):
        self.check_length(src)
        mask = src != PAD_ID
        x = self._embed(src, lang)
        attn_mask = mask[:, None, None, :]
        weights = []
        for layer in self.encoder_layers(lang):
            x, w = layer(x, attn_mask)
            weights.append(w)
        self.last_attention = weights
        return EncoderOutput(self.enc_norm(x), mask)

    def decode(self, tgt_in, enc, lang):
        self.check_length(tgt_in)
        t = tgt_in.shape[1]
        x = self._embed(tgt_in, lang)
        causal = torch.ones(t, t, dtype=torch.bool, device=tgt_in.device).tril()[None, None]
        mem_mask = enc.mask[:, None, None, :]
        weights = []
        for layer in self.decoder_layers(lang):
            x, w_self, w_cross = layer(x, causal, enc.states, mem_mask)
            weights += [w_self, w_cross]
        self.last_attention = weights
        return self.out_proj[lang](self.dec_norm[lang](x))

    def start_state(self, enc, lang):
        return {"t": 0, "cache": [None] * self.cfg.layers}

    def decode_step(self, prev, state, enc, lang):
        """Incremental decoding: only the newest position is computed, with
        keys and values of earlier positions (and of the memory) cached."""
        t = state["t"]
        if t >= self.cfg.max_len:
            raise ValueError(f"sequence longer than max_len={self.cfg.max_len}")
        x = self._embed(prev[:, None], lang, offset=t)
        mem_mask = enc.mask[:, None, None, :]
        cache = []
        for layer, c in zip(self.decoder_layers(lang), state["cache"]):
            x, c = layer.step(x, c, enc.states, mem_mask)
            cache.append(c)
        logits = self.out_proj[lang](self.dec_norm[lang](x))
        return logits[:, -1], {"t": t + 1, "cache": cache}

    def reorder_state(self, state, index):
        cache = [None if c is None else tuple(part.index_select(0, index) for part in c) for c in state["cache"]]
        return {"t": state["t"], "cache": cache}
