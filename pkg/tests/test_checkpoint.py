import json
import zipfile

import pytest
import torch

from canto_umt.models.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from canto_umt.vocab import Vocab

from oracles import tiny_model

VOCABS = {"L1": Vocab({f"a{i}": 1 for i in range(2)}), "L2": Vocab({f"b{i}": 1 for i in range(3)})}


@pytest.mark.parametrize("variant", ["gru", "transformer"])
def test_roundtrip(tmp_path, variant):
    model = tiny_model(variant)
    opt = torch.optim.Adam(model.parameters())
    path = save_checkpoint(tmp_path / "m.ckpt", model, VOCABS, 7, opt, {"note": "x"})
    ck = load_checkpoint(path)
    assert ck.step == 7 and ck.extra == {"note": "x"}
    assert ck.vocabs == VOCABS
    assert ck.model.cfg == model.cfg
    for (n, p), (_, q) in zip(model.state_dict().items(), ck.model.state_dict().items()):
        assert torch.equal(p, q), n
    assert ck.optimizer_state is not None
    assert ck.manifest["config_hash"] == model.cfg.digest()


def test_archives_are_byte_deterministic(tmp_path):
    model = tiny_model("transformer")
    a = save_checkpoint(tmp_path / "a.ckpt", model, VOCABS, 0)
    b = save_checkpoint(tmp_path / "b.ckpt", model, VOCABS, 0)
    assert a.read_bytes() == b.read_bytes()


def rewrite(src, dst, edit):
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for item in zin.infolist():
            zout.writestr(item, edit(item.filename, zin.read(item.filename)))


def test_corrupt_blob_detected(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", tiny_model("gru"), VOCABS, 1)

    def flip(name, data):
        if name.startswith("tensors/") and name.endswith("out_proj.L1.bias.npy"):
            return data[:-1] + bytes([data[-1] ^ 1])
        return data

    rewrite(path, tmp_path / "bad.ckpt", flip)
    with pytest.raises(CheckpointError, match="corrupt"):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_config_hash_checks(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", tiny_model("gru"), VOCABS, 1)
    with pytest.raises(CheckpointError, match="expected configuration"):
        load_checkpoint(path, expect_config_hash="0" * 64)

    def tamper(name, data):
        if name == "manifest.json":
            m = json.loads(data)
            m["config"]["d_model"] = 16
            return json.dumps(m).encode()
        return data

    rewrite(path, tmp_path / "bad.ckpt", tamper)
    with pytest.raises(CheckpointError, match="config hash"):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_vocab_hash_checks(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", tiny_model("gru"), VOCABS, 1)
    other = {"L1": VOCABS["L1"], "L2": Vocab({"zz": 1})}
    with pytest.raises(CheckpointError, match="L2"):
        load_checkpoint(path, expect_vocab_hashes={k: v.digest() for k, v in other.items()})


def test_unreadable_file(tmp_path):
    (tmp_path / "junk.ckpt").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError, match="cannot open"):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_frozen_flag_survives_roundtrip(tmp_path):
    model = tiny_model("gru", freeze_embeddings=True)
    ck = load_checkpoint(save_checkpoint(tmp_path / "m.ckpt", model, VOCABS, 0))
    assert all(not e.weight.requires_grad for e in ck.model.embeddings.values())
