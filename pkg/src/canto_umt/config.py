"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import glob
import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

ENV_PREFIX = "CANTO_UMT_"

SCHEMES = ("char", "word", "bpe")
BPE_MODES = ("joint", "separate")
EMBED_ROUTES = ("none", "concat", "mapping", "pivot-private")
VARIANTS = ("transformer", "gru")
DTYPES = ("float32", "float64")
LABELS = ("", "cantonese", "mandarin", "ambiguous")

# keys holding file paths; resolved against the config file's directory
PATH_KEYS = ("inputs", "l1_corpus", "l2_corpus", "lexicon", "test_l1", "test_l2", "conversion_table")


class ConfigError(ValueError):
    """One or more invalid settings, each reported as ``key: reason``."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {why}" for k, why in problems))


@dataclass
class ExperimentConfig:
    seed: int = 0
    # data: raw text dumps through the pipeline, or already-cleaned corpora
    inputs: str = ""
    l1_corpus: str = ""
    l2_corpus: str = ""
    foreign_threshold: float = 0.05
    downsample_label: str = ""
    downsample_target: int = 0
    # tokenization
    scheme: str = "char"
    lexicon: str = ""
    bpe_merges: int = 50000
    bpe_mode: str = "joint"
    # embeddings
    embed_route: str = "concat"
    embed_dim: int = 0
    embed_epochs: int = 5
    embed_window: int = 5
    embed_negatives: int = 5
    self_learning: int = 0
    # model; layers=0 and shared_dec_layers=-1 take the variant's defaults
    variant: str = "transformer"
    d_model: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    layers: int = 0
    shared_dec_layers: int = -1
    dropout: float = 0.1
    max_len: int = 100
    freeze_embeddings: bool = False
    dtype: str = "float32"
    # training
    steps: int = 1000
    batch_size: int = 32
    dae_ratio: int = 1
    bt_ratio: int = 1
    warmup_frac: float = 0.1
    lr: float = 1e-3
    checkpoint_every: int = 0
    p_drop: float = 0.1
    shuffle_k: int = 3
    # evaluation
    test_l1: str = ""
    test_l2: str = ""
    beam_size: int = 1
    length_penalty: float = 0.6
    strip_punct: bool = False
    conversion_table: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def dumps(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(out) + "\n"

    @property
    def embedding_dim(self) -> int:
        return self.embed_dim or self.d_model

    @property
    def n_layers(self) -> int:
        return self.layers or (2 if self.variant == "gru" else 4)

    @property
    def n_shared_dec_layers(self) -> int:
        if self.shared_dec_layers >= 0:
            return self.shared_dec_layers
        return 0 if self.variant == "gru" else min(3, self.n_layers)

    @property
    def joint_vocab(self) -> bool:
        return self.embed_route in ("none", "concat")

    def input_files(self) -> list[Path]:
        return sorted(Path(p) for p in glob.glob(self.inputs)) if self.inputs else []

    def pairing_warnings(self) -> list[str]:
        """Embedding route / architecture pairings that differ from the usual ones."""
        out = []
        if self.variant == "gru" and self.embed_route in ("concat", "pivot-private"):
            out.append(f"embed_route={self.embed_route} is normally paired with the transformer; the GRU path uses mapping")
        if self.variant == "transformer" and self.embed_route == "mapping":
            out.append("embed_route=mapping is normally paired with the GRU; transformers use concat or pivot-private")
        return out


def _coerce(name: str, kind, raw: str):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw.strip()


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    raw: dict[str, str] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append((f"{source}:{lineno}", "expected 'key = value'"))
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key in raw:
            problems.append((key, f"set twice ({source}:{lineno})"))
        raw[key] = value
    if problems:
        raise ConfigError(problems)
    return raw


def build_config(
    raw: Mapping[str, str],
    base_dir: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
    check_paths: bool = True,
) -> ExperimentConfig:
    """Type, range-check and path-check raw settings.

    Precedence, lowest first: file values, ``CANTO_UMT_<KEY>`` environment
    variables, explicit ``overrides``. All problems are collected and raised
    together.
    """
    known = {f.name: f for f in fields(ExperimentConfig)}
    problems: list[tuple[str, str]] = []
    merged = dict(raw)
    for key in sorted(set(merged) - set(known)):
        problems.append((key, "unknown key"))
    env = os.environ if env is None else env
    for name in known:
        if ENV_PREFIX + name.upper() in env:
            merged[name] = env[ENV_PREFIX + name.upper()]

    values: dict[str, object] = {}
    for name, f in known.items():
        if name not in merged:
            continue
        kind = _TYPES[f.type] if isinstance(f.type, str) else f.type
        try:
            values[name] = _coerce(name, kind, str(merged[name]))
        except ValueError as exc:
            problems.append((name, f"invalid value {merged[name]!r} ({exc})"))
    for name, v in (overrides or {}).items():
        if name not in known:
            problems.append((name, "unknown key"))
        else:
            values[name] = v

    if base_dir is not None:
        for key in PATH_KEYS:
            v = values.get(key)
            if v and not Path(str(v)).is_absolute():
                values[key] = str(Path(base_dir) / str(v))

    cfg = ExperimentConfig(**{k: v for k, v in values.items() if k in known})
    problems += range_problems(cfg)
    if check_paths:
        problems += path_problems(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def range_problems(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    p: list[tuple[str, str]] = []

    def need(ok: bool, key: str, why: str):
        if not ok:
            p.append((key, why))

    need(cfg.seed >= 0, "seed", "must be >= 0")
    need(0.0 <= cfg.foreign_threshold <= 1.0, "foreign_threshold", "must be in [0, 1]")
    need(cfg.downsample_label in LABELS, "downsample_label", f"must be one of {LABELS[1:]}")
    need(cfg.downsample_target >= 0, "downsample_target", "must be >= 0")
    need(not cfg.downsample_target or cfg.downsample_label, "downsample_label", "required when downsample_target > 0")
    need(cfg.scheme in SCHEMES, "scheme", f"must be one of {SCHEMES}")
    need(cfg.scheme == "char" or bool(cfg.lexicon), "lexicon", f"required for scheme={cfg.scheme}")
    need(cfg.bpe_merges >= 1, "bpe_merges", "must be >= 1")
    need(cfg.bpe_mode in BPE_MODES, "bpe_mode", f"must be one of {BPE_MODES}")
    need(cfg.embed_route in EMBED_ROUTES, "embed_route", f"must be one of {EMBED_ROUTES}")
    need(cfg.embed_dim >= 0, "embed_dim", "must be >= 0")
    need(cfg.embed_epochs >= 1, "embed_epochs", "must be >= 1")
    need(cfg.embed_window >= 1, "embed_window", "must be >= 1")
    need(cfg.embed_negatives >= 1, "embed_negatives", "must be >= 1")
    need(cfg.self_learning >= 0, "self_learning", "must be >= 0")
    need(cfg.variant in VARIANTS, "variant", f"must be one of {VARIANTS}")
    need(cfg.d_model >= 2, "d_model", "must be >= 2")
    need(cfg.heads >= 1, "heads", "must be >= 1")
    need(cfg.ffn_dim >= 1, "ffn_dim", "must be >= 1")
    need(cfg.layers >= 0, "layers", "must be >= 0 (0 takes the variant default)")
    need(cfg.shared_dec_layers >= -1, "shared_dec_layers", "must be >= -1 (-1 takes the variant default)")
    need(0.0 <= cfg.dropout < 1.0, "dropout", "must be in [0, 1)")
    need(cfg.max_len >= 2, "max_len", "must be >= 2")
    need(cfg.dtype in DTYPES, "dtype", f"must be one of {DTYPES}")
    need(cfg.steps >= 0, "steps", "must be >= 0")
    need(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    need(cfg.dae_ratio >= 1, "dae_ratio", "must be >= 1")
    need(cfg.bt_ratio >= 0, "bt_ratio", "must be >= 0")
    need(0.0 <= cfg.warmup_frac <= 1.0, "warmup_frac", "must be in [0, 1]")
    need(cfg.lr > 0, "lr", "must be > 0")
    need(cfg.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")
    need(0.0 <= cfg.p_drop < 1.0, "p_drop", "must be in [0, 1)")
    need(cfg.shuffle_k >= 0, "shuffle_k", "must be >= 0")
    need(cfg.beam_size >= 1, "beam_size", "must be >= 1")
    need(cfg.length_penalty >= 0, "length_penalty", "must be >= 0")
    if p:
        return p
    # structural checks that only make sense once the basics are valid
    need(cfg.n_shared_dec_layers <= cfg.n_layers, "shared_dec_layers", "exceeds layers")
    if cfg.variant == "transformer":
        need(cfg.d_model % cfg.heads == 0, "heads", "must divide d_model")
        need(cfg.embedding_dim == cfg.d_model, "embed_dim", "transformer embeddings must match d_model")
    else:
        need(cfg.d_model % 2 == 0, "d_model", "GRU d_model must be even")
    if cfg.embed_route == "pivot-private":
        need(cfg.embedding_dim % 2 == 0, "embed_dim", "pivot-private needs an even embedding dimension")
    return p


def path_problems(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    p = []
    if cfg.inputs and not cfg.input_files():
        p.append(("inputs", f"no files match {cfg.inputs!r}"))
    for key in PATH_KEYS[1:]:
        v = getattr(cfg, key)
        if v and not Path(v).is_file():
            p.append((key, f"file not found: {v}"))
    if cfg.inputs and (cfg.l1_corpus or cfg.l2_corpus):
        p.append(("inputs", "set either inputs or l1_corpus/l2_corpus, not both"))
    if bool(cfg.l1_corpus) != bool(cfg.l2_corpus):
        p.append(("l1_corpus" if not cfg.l1_corpus else "l2_corpus", "both corpora must be given together"))
    if bool(cfg.test_l1) != bool(cfg.test_l2):
        p.append(("test_l1" if not cfg.test_l1 else "test_l2", "both test files must be given together"))
    return p


def validate_config(
    path: str | Path,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
    check_paths: bool = True,
) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([("config", f"cannot read {path}: {exc.strerror or exc}")]) from exc
    return build_config(parse_config_text(text, str(path)), path.parent, env, overrides, check_paths)
