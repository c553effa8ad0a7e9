from .base import EncoderOutput, Seq2Seq, attend, loss_cross_entropy
from .config import ModelConfig
from .gru import GruSeq2Seq
from .transformer import TransformerSeq2Seq


def build_model(cfg: ModelConfig) -> Seq2Seq:
    cls = GruSeq2Seq if cfg.variant == "gru" else TransformerSeq2Seq
    return cls(cfg).to(cfg.torch_dtype)


__all__ = [
    "EncoderOutput",
    "GruSeq2Seq",
    "ModelConfig",
    "Seq2Seq",
    "TransformerSeq2Seq",
    "attend",
    "build_model",
    "loss_cross_entropy",
]
