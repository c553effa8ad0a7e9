"""Versioned checkpoint container.

A checkpoint is a zip archive holding ``manifest.json``, one ``.npy`` blob per
named tensor, the vocabularies and (optionally) optimizer state. Every blob's
SHA-256 is recorded in the manifest and verified on load.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..vocab import LANGS, Vocab
from . import build_model
from .base import Seq2Seq
from .config import ModelConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(zf: zipfile.ZipFile, name: str, data: bytes | str) -> None:
    # fixed timestamps keep archives byte-identical across reruns
    zf.writestr(zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0)), data)


@dataclass
class Checkpoint:
    model: Seq2Seq
    vocabs: dict[str, Vocab]
    step: int
    manifest: dict
    optimizer_state: dict | None = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(
    path: str | Path,
    model: Seq2Seq,
    vocabs: dict[str, Vocab],
    step: int,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blobs: dict[str, bytes] = {}
    for name, tensor in model.state_dict().items():
        buf = io.BytesIO()
        np.save(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
        blobs[f"tensors/{name}.npy"] = buf.getvalue()
    for lang in LANGS:
        blobs[f"vocab/{lang}.tsv"] = vocabs[lang].dumps().encode("utf-8")
    if optimizer is not None:
        buf = io.BytesIO()
        torch.save(optimizer.state_dict(), buf)
        blobs["optimizer.pt"] = buf.getvalue()
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.digest(),
        "vocab_hashes": {lang: vocabs[lang].digest() for lang in LANGS},
        "step": step,
        "blobs": {name: _sha(data) for name, data in sorted(blobs.items())},
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        _write(zf, "manifest.json", json.dumps(manifest, sort_keys=True, indent=1, ensure_ascii=False))
        for name, data in sorted(blobs.items()):
            _write(zf, name, data)
    tmp.replace(path)
    return path


def load_checkpoint(
    path: str | Path,
    expect_config_hash: str | None = None,
    expect_vocab_hashes: dict[str, str] | None = None,
) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
        cfg = ModelConfig.from_dict(manifest["config"])
        if cfg.digest() != manifest["config_hash"]:
            raise CheckpointError("config hash mismatch inside checkpoint")
        if expect_config_hash is not None and expect_config_hash != manifest["config_hash"]:
            raise CheckpointError("config hash differs from the expected configuration")
        blobs = {}
        for name, digest in manifest["blobs"].items():
            data = zf.read(name)
            if _sha(data) != digest:
                raise CheckpointError(f"blob {name} is corrupt (hash mismatch)")
            blobs[name] = data

    vocabs = {lang: Vocab.loads(blobs[f"vocab/{lang}.tsv"].decode("utf-8")) for lang in LANGS}
    for lang in LANGS:
        if vocabs[lang].digest() != manifest["vocab_hashes"][lang]:
            raise CheckpointError(f"vocabulary hash mismatch for {lang}")
        if expect_vocab_hashes is not None and expect_vocab_hashes[lang] != manifest["vocab_hashes"][lang]:
            raise CheckpointError(f"vocabulary for {lang} differs from the checkpoint's")

    model = build_model(cfg)
    state = {}
    for name in model.state_dict():
        key = f"tensors/{name}.npy"
        if key not in blobs:
            raise CheckpointError(f"missing tensor {name}")
        state[name] = torch.from_numpy(np.load(io.BytesIO(blobs[key]), allow_pickle=False))
    model.load_state_dict(state)
    if cfg.freeze_embeddings:
        model.freeze_embeddings()
    opt_state = None
    if "optimizer.pt" in blobs:
        opt_state = torch.load(io.BytesIO(blobs["optimizer.pt"]), weights_only=False)
    return Checkpoint(model, vocabs, manifest["step"], manifest, opt_state, manifest.get("extra", {}))
