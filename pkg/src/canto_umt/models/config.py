from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Literal

import torch

Variant = Literal["gru", "transformer"]


@dataclass
class ModelConfig:
    """Architecture settings shared by both model variants.

    ``vocab_sizes`` maps each language to its vocabulary size. When
    ``share_embeddings`` is set both languages must use one joint vocabulary
    and look up a single embedding matrix.
    """

    variant: Variant = "transformer"
    vocab_sizes: dict[str, int] = field(default_factory=lambda: {"L1": 0, "L2": 0})
    d_model: int = 512
    emb_dim: int | None = None
    heads: int = 8
    ffn_dim: int = 2048
    layers: int = 4
    shared_dec_layers: int = 3
    shared_enc_layers: int | None = None
    dropout: float = 0.1
    max_len: int = 200
    freeze_embeddings: bool = False
    share_embeddings: bool = True
    tie_output: bool = False
    init_seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in ("gru", "transformer"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d_model < 1 or self.layers < 1:
            raise ValueError("d_model and layers must be positive")
        if self.variant == "transformer" and self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.variant == "gru" and self.d_model % 2:
            raise ValueError("GRU d_model must be even (bidirectional halves)")
        if not 0 <= self.shared_dec_layers <= self.layers:
            raise ValueError("shared_dec_layers out of range")
        if self.shared_enc_layers is not None and not 0 <= self.shared_enc_layers <= self.layers:
            raise ValueError("shared_enc_layers out of range")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.share_embeddings and self.vocab_sizes["L1"] != self.vocab_sizes["L2"]:
            raise ValueError("shared embeddings need one joint vocabulary")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def embedding_dim(self) -> int:
        return self.emb_dim or self.d_model

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def gru(cls, vocab_sizes: dict[str, int], **kw) -> "ModelConfig":
        """The RNN configuration: 2-layer biGRU, 512-dim frozen embeddings."""
        kw.setdefault("layers", 2)
        kw.setdefault("d_model", 512)
        kw.setdefault("freeze_embeddings", True)
        kw.setdefault("shared_dec_layers", 0)
        kw.setdefault("dropout", 0.3)
        return cls(variant="gru", vocab_sizes=dict(vocab_sizes), **kw)

    @classmethod
    def transformer(cls, vocab_sizes: dict[str, int], **kw) -> "ModelConfig":
        kw.setdefault("layers", 4)
        kw.setdefault("shared_dec_layers", min(3, kw["layers"]))
        return cls(variant="transformer", vocab_sizes=dict(vocab_sizes), **kw)
