from __future__ import annotations

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from ..vocab import LANGS, PAD_ID
from .base import EncoderOutput, Seq2Seq, attend
from .config import ModelConfig


class GruSeq2Seq(Seq2Seq):
    """Bidirectional GRU encoder, per-language GRU decoders with Luong
    "general" attention.

    The decoder's initial hidden state is the encoder's final state, with the
    forward and backward halves of each layer concatenated.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        d, e, nl = cfg.d_model, cfg.embedding_dim, cfg.layers
        drop = cfg.dropout if nl > 1 else 0.0
        self.encoder = nn.GRU(e, d // 2, num_layers=nl, bidirectional=True, batch_first=True, dropout=drop)
        self.dec_rnn = nn.ModuleDict(
            {lang: nn.GRU(e, d, num_layers=nl, batch_first=True, dropout=drop) for lang in LANGS}
        )
        self.dec_attn = nn.ModuleDict({lang: nn.Linear(d, d, bias=False) for lang in LANGS})
        self.dec_combine = nn.ModuleDict({lang: nn.Linear(2 * d, d, bias=False) for lang in LANGS})
        self.out_proj = nn.ModuleDict({lang: nn.Linear(d, cfg.vocab_sizes[lang]) for lang in LANGS})
        self.dropout = nn.Dropout(cfg.dropout)
        self.reset_parameters()
        if cfg.freeze_embeddings:
            self.freeze_embeddings()

    def reset_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.cfg.init_seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64) * 0.2 - 0.1)

    def encode(self, src: torch.Tensor, lang: str) -> EncoderOutput:
        self.check_length(src)
        emb = self.dropout(self.embedding(lang)(src))
        mask = src != PAD_ID
        lengths = mask.sum(dim=1).cpu()
        packed = pack_padded_sequence(emb, lengths, batch_first=True, enforce_sorted=False)
        out, h_n = self.encoder(packed)
        states, _ = pad_packed_sequence(out, batch_first=True, total_length=src.shape[1])
        nl, b = self.cfg.layers, src.shape[0]
        h_n = h_n.view(nl, 2, b, -1)
        final = torch.cat([h_n[:, 0], h_n[:, 1]], dim=-1)
        return EncoderOutput(states, mask, final)

    def _output(self, h, enc: EncoderOutput, lang: str):
        ctx, weights = attend(h, enc.states, enc.mask, self.dec_attn[lang])
        self.last_attention = [weights]
        combined = torch.tanh(self.dec_combine[lang](torch.cat([ctx, h], dim=-1)))
        return self.out_proj[lang](self.dropout(combined))

    def decode(self, tgt_in, enc, lang):
        self.check_length(tgt_in)
        emb = self.dropout(self.embedding(lang)(tgt_in))
        h, _ = self.dec_rnn[lang](emb, enc.final.contiguous())
        return self._output(h, enc, lang)

    def start_state(self, enc, lang):
        return enc.final.contiguous()

    def decode_step(self, prev, state, enc, lang):
        emb = self.dropout(self.embedding(lang)(prev[:, None]))
        h, state = self.dec_rnn[lang](emb, state)
        return self._output(h, enc, lang)[:, 0], state

    def reorder_state(self, state, index):
        return state.index_select(1, index)
