"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The synthetic-dialect run (criterion 6) trains two models for 20 000 steps
each and takes on the order of an hour and a half on one CPU core.
"""

import math
import random
import time
from collections import Counter

import numpy as np
import pytest
import torch

from canto_umt.bleu import char_bleu
from canto_umt.bpe import learn_bpe
from canto_umt.config import validate_config
from canto_umt.corpus import PipelineConfig, RawDocument, process_document
from canto_umt.embeddings import EmbeddingMatrix, learn_mapping, orthogonality_error
from canto_umt.experiment import run_experiment
from canto_umt.models.checkpoint import load_checkpoint
from canto_umt.synthetic import run_dialect_experiment
from canto_umt.training import read_metrics

from conftest import write_tiny_experiment
from oracles import brute_force_bpe, gradient_errors, overfit_dae, random_toy_corpus, small_trainer

# settings for the synthetic-dialect run; see the README for measured scores
DIALECT_STEPS = 20_000
DIALECT_D_MODEL = 64
DIALECT_EMBED_INIT = "concat"


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}")
        return ok

    return emit


def test_1_pipeline_fixture(report, data_dir):
    rows = [ln.split("\t", 1) for ln in (data_dir / "pipeline_fixture.tsv").read_text(encoding="utf-8").splitlines()]
    assert Counter(lab for lab, _ in rows) == {
        "cantonese": 50, "mandarin": 50, "ambiguous": 50, "foreign": 30, "noise": 20,
    }
    start = time.perf_counter()
    agree = 0
    for n, (expected, text) in enumerate(rows):
        counts = Counter()
        labels = {s.label.value.lower() for s in process_document(RawDocument(f"fixture:{n}", text), PipelineConfig(), counts)}
        if counts["dropped_foreign"]:
            labels.add("foreign")
        if counts["dropped_empty"]:
            labels.add("noise")
        agree += labels == {expected}
    elapsed = time.perf_counter() - start
    ok = agree == len(rows) and elapsed < 1.0
    report(1, "pipeline fixture", ok, f"{agree}/{len(rows)} lines agree in {elapsed:.3f}s (limit 1s)")
    assert ok


def test_2_bpe_oracle(report):
    rng = random.Random(2024)
    start = time.perf_counter()
    equal = 0
    for _ in range(20):
        corpus = random_toy_corpus(rng, max_words=100)
        assert len({w for s in corpus for w in s}) <= 100
        n = rng.randint(0, 200)
        counts = Counter(w for s in corpus for w in s)
        equal += learn_bpe([corpus], n).merges == brute_force_bpe(counts, n)
    elapsed = time.perf_counter() - start
    ok = equal == 20 and elapsed < 30
    report(2, "BPE oracle equivalence", ok, f"{equal}/20 merge lists equal in {elapsed:.2f}s (limit 30s)")
    assert ok


def test_3_procrustes(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    q, r_ = np.linalg.qr(rng.standard_normal((16, 16)))
    rot = q * np.sign(np.diag(r_))
    xv = rng.standard_normal((200, 16))
    tokens = [f"t{i}" for i in range(200)]
    anchors = [(i, i) for i in range(200)]
    x = EmbeddingMatrix(tokens, xv)
    w = learn_mapping(x, EmbeddingMatrix(tokens, xv @ rot), anchors).W
    w_id = learn_mapping(x, x, anchors).W
    err_r = np.linalg.norm(w - rot)
    err_i = np.linalg.norm(w_id - np.eye(16))
    ortho = max(orthogonality_error(w), orthogonality_error(w_id))
    elapsed = time.perf_counter() - start
    ok = err_r < 1e-4 and err_i < 1e-6 and ortho < 1e-5 and elapsed < 5
    report(3, "Procrustes recovery", ok,
           f"|W-R|={err_r:.2e} |W-I|={err_i:.2e} ortho={ortho:.2e} in {elapsed:.2f}s (limit 5s)")
    assert ok


def test_4_gradients(report):
    start = time.perf_counter()
    worst = {}
    for variant in ("gru", "transformer"):
        errors = gradient_errors(variant)
        name = max(errors, key=errors.get)
        worst[variant] = (name, errors[name], len(errors))
    elapsed = time.perf_counter() - start
    ok = all(e < 1e-4 for _, e, _ in worst.values()) and elapsed < 120
    detail = ", ".join(f"{v}: {n} tensors, max rel err {e:.1e}" for v, (_, e, n) in worst.items())
    report(4, "gradient suite", ok, f"{detail} in {elapsed:.1f}s (limit 120s)")
    assert ok


def test_5_overfit(report):
    start = time.perf_counter()
    results = [overfit_dae(seed) for seed in range(3)]
    elapsed = time.perf_counter() - start
    ok = all(m == 10 and s <= 2000 for m, s in results) and elapsed < 300
    detail = ", ".join(f"seed {i}: {m}/10 by step {s}" for i, (m, s) in enumerate(results))
    report(5, "overfit oracle", ok, f"{detail} in {elapsed:.1f}s (limit 300s)")
    assert ok


def test_6_synthetic_dialect(report):
    start = time.perf_counter()
    bt = run_dialect_experiment(DIALECT_STEPS, True, 0, DIALECT_D_MODEL, DIALECT_EMBED_INIT)
    dae = run_dialect_experiment(DIALECT_STEPS, False, 0, DIALECT_D_MODEL, DIALECT_EMBED_INIT)
    elapsed = time.perf_counter() - start
    margins = {}
    for lang in ("L1", "L2"):
        margins[lang] = (bt.bleu[lang] - bt.baseline[lang], bt.bleu[lang] - dae.bleu[lang])
    ok = all(b >= 10 and a >= 5 for b, a in margins.values()) and elapsed < 7200
    detail = "; ".join(
        f"{lang}: BT {bt.bleu[lang]:.2f}, DAE-only {dae.bleu[lang]:.2f}, identity {bt.baseline[lang]:.2f}"
        for lang in ("L1", "L2")
    )
    report(6, "synthetic dialect", ok, f"{detail} in {elapsed / 60:.1f} min (limit 120 min)")
    assert ok


def test_7_bleu(report):
    hand = char_bleu(["我哋好"], ["我哋好開心"]).bleu
    expected = 100 * math.exp(1 - 5 / 3)
    identity = char_bleu(["我哋好開心", "佢喺度"], ["我哋好開心", "佢喺度"]).bleu
    disjoint = char_bleu(["甲乙丙丁"], ["我哋好開心"]).bleu
    rng = random.Random(7)
    hyps = ["我哋好開心", "佢喺度食飯", "你去邊度", "今日好熱", "唔該晒"]
    refs = ["我哋好開心呀", "佢喺屋企食飯", "你去咗邊度", "今日熱", "唔該"]
    base = char_bleu(hyps, refs).bleu
    invariant = 0
    for _ in range(20):
        order = list(range(len(hyps)))
        rng.shuffle(order)
        invariant += abs(char_bleu([hyps[i] for i in order], [refs[i] for i in order]).bleu - base) < 1e-9
    ok = abs(hand - expected) < 1e-6 and identity == 100.0 and disjoint == 0.0 and invariant == 20
    report(7, "BLEU correctness", ok,
           f"hand {hand:.6f} vs {expected:.6f}, identity {identity}, disjoint {disjoint}, {invariant}/20 shuffles invariant")
    assert ok


def test_8_shared_and_frozen(report, tmp_path):
    gru = small_trainer("gru", steps=1000, shared=False, dtype="float32", out_dir=tmp_path / "gru")
    before = {k: e.weight.detach().numpy().tobytes() for k, e in gru.model.embeddings.items()}
    gru.train()
    frozen = all(e.weight.detach().numpy().tobytes() == before[k] for k, e in gru.model.embeddings.items())
    reloaded = load_checkpoint(tmp_path / "gru" / "checkpoint_last.ckpt").model
    frozen &= all(e.weight.detach().numpy().tobytes() == before[k] for k, e in reloaded.embeddings.items())

    tr = small_trainer("transformer", steps=1000, dtype="float32", out_dir=tmp_path / "tr")
    start_shared = [p.detach().clone() for p in tr.model.dec_shared.parameters()]
    tr.train()
    model = load_checkpoint(tmp_path / "tr" / "checkpoint_last.ckpt").model
    shared_ok = True
    for m in (tr.model, model):
        l1, l2 = m.decoder_layers("L1"), m.decoder_layers("L2")
        for i in range(3):
            for p, q in zip(l1[i].parameters(), l2[i].parameters()):
                shared_ok &= p.detach().numpy().tobytes() == q.detach().numpy().tobytes()
        shared_ok &= any(not torch.equal(p, q) for p, q in zip(l1[3].parameters(), l2[3].parameters()))
    trained = any(not torch.equal(a, b) for a, b in zip(start_shared, tr.model.dec_shared.parameters()))
    ok = frozen and shared_ok and trained
    report(8, "shared and frozen parameters", ok,
           f"frozen embeddings byte-identical: {frozen}; shared decoder layers 1-3 byte-identical: {shared_ok} "
           f"(shared layers moved during training: {trained}) after 1000 steps")
    assert ok


def test_9_determinism(report, tmp_path):
    logs = []
    for name in ("a", "b"):
        root = tmp_path / name
        root.mkdir()
        cfg = validate_config(write_tiny_experiment(root, steps=40, dtype="float64"), env={})
        manifest = run_experiment(cfg, root / "run")
        logs.append((read_metrics(root / "run" / "train" / "metrics.tsv"), manifest))
    (m1, man1), (m2, man2) = logs
    same_shape = [(s, t, l) for s, t, l, _ in m1] == [(s, t, l) for s, t, l, _ in m2]
    worst = max(abs(a[3] - b[3]) for a, b in zip(m1, m2) if not (math.isnan(a[3]) and math.isnan(b[3])))
    same_outputs = [s.outputs for s in man1.stages] == [s.outputs for s in man2.stages]
    ok = same_shape and len(m1) == 40 and worst <= 1e-9
    report(9, "determinism", ok,
           f"{len(m1)} logged steps, max |loss difference| {worst:.1e} (limit 1e-9); "
           f"all artifact hashes equal: {same_outputs}")
    assert ok
