"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import random
from collections import Counter

import torch

MARK = "</w>"


def _merge(symbols, left, right):
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def _split(word, marker=MARK):
    return tuple(word[:-1]) + (word[-1] + marker,)


def brute_force_bpe(word_counts: dict[str, int], num_merges: int, marker: str = MARK) -> list[tuple[str, str]]:
    """Recount every adjacent pair from scratch at each iteration."""
    state = {w: _split(w, marker) for w in word_counts}
    merges = []
    for _ in range(num_merges):
        counts = Counter()
        for w, syms in state.items():
            for pair in zip(syms, syms[1:]):
                counts[pair] += word_counts[w]
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        state = {w: _merge(s, *best) for w, s in state.items()}
    return merges


def replay_bpe(word: str, merges, marker: str = MARK) -> tuple[str, ...]:
    syms = _split(word, marker)
    for pair in merges:
        syms = _merge(syms, *pair)
    return syms


def random_toy_corpus(rng: random.Random, max_words: int = 100) -> list[list[str]]:
    alphabet = "abcde低碳朋友開心"
    n_distinct = rng.randint(1, max_words)
    words = {"".join(rng.choice(alphabet) for _ in range(rng.randint(1, 6))) for _ in range(n_distinct)}
    words = sorted(words)
    sents = []
    for _ in range(rng.randint(1, 40)):
        sents.append([rng.choice(words) for _ in range(rng.randint(1, 8))])
    return sents


def finite_difference_check(loss_fn, params, eps: float = 1e-5, max_entries: int = 32, seed: int = 0):
    """Largest relative error between autograd and central differences.

    ``params`` maps names to float64 leaf tensors. For large tensors a fixed
    random subset of entries is checked. Returns {name: relative_error}.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    gen = torch.Generator().manual_seed(seed)
    errors = {}
    for name, p in params.items():
        analytic = p.grad.detach().clone().reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
        n = p.numel()
        idx = torch.randperm(n, generator=gen)[:max_entries] if n > max_entries else torch.arange(n)
        numeric = torch.zeros(len(idx), dtype=torch.float64)
        flat = p.data.view(-1)
        with torch.no_grad():
            for k, i in enumerate(idx.tolist()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                numeric[k] = (up - down) / (2 * eps)
        a = analytic[idx]
        scale = max(float(a.norm()), float(numeric.norm()))
        errors[name] = 0.0 if scale == 0 else float((a - numeric).norm()) / scale
    return errors


def tiny_model(variant: str, seed: int = 0, vocab: int = 7, **kw):
    """A float64, dropout-free model with every parameter re-randomized so
    that no gradient is trivially zero (norm gains, zero biases)."""
    from canto_umt.models import ModelConfig, build_model

    opts = dict(d_model=8, dropout=0.0, max_len=8, dtype="float64", init_seed=seed, share_embeddings=False)
    opts.update(kw)
    sizes = {"L1": vocab, "L2": vocab + 1}
    if opts.get("share_embeddings"):
        sizes = {"L1": vocab, "L2": vocab}
    if variant == "gru":
        cfg = ModelConfig.gru(sizes, freeze_embeddings=opts.pop("freeze_embeddings", False), **opts)
    else:
        cfg = ModelConfig.transformer(sizes, heads=2, ffn_dim=12, **opts)
    model = build_model(cfg)
    gen = torch.Generator().manual_seed(1000 + seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * 0.5)
    return model


def two_direction_loss(model, src, tgt_in, tgt_out):
    """Reconstruction in L1 plus translation L1 -> L2, summed."""
    from canto_umt.models import loss_cross_entropy

    enc = model.encode(src, "L1")
    l1 = loss_cross_entropy(model.decode(tgt_in["L1"], enc, "L1"), tgt_out["L1"])
    l2 = loss_cross_entropy(model.decode(tgt_in["L2"], enc, "L2"), tgt_out["L2"])
    return l1 + l2


def gradient_errors(variant: str, seed: int = 0) -> dict[str, float]:
    """Relative autograd-vs-finite-difference error for every parameter."""
    model = tiny_model(variant, seed)
    g = torch.Generator().manual_seed(seed)
    src = torch.randint(5, 7, (2, 5), generator=g)
    src[1, 3:] = 0
    tgt_in, tgt_out = {}, {}
    for lang, bos in (("L1", 3), ("L2", 4)):
        body = torch.randint(5, 7 if lang == "L1" else 8, (2, 4), generator=g)
        tgt_in[lang] = torch.cat([torch.full((2, 1), bos), body], dim=1)
        tgt_out[lang] = torch.cat([body, torch.full((2, 1), 2)], dim=1)
    tgt_out["L1"][1, 4] = 0
    params = dict(model.named_parameters())
    return finite_difference_check(lambda: two_direction_loss(model, src, tgt_in, tgt_out), params)


def overfit_sentences(seed: int, n: int = 10, vocab: int = 20) -> list[list[int]]:
    rng = random.Random(seed)
    return [[rng.randrange(5, vocab) for _ in range(rng.randint(3, 8))] for _ in range(n)]


def overfit_dae(seed: int, max_steps: int = 2000, check_every: int = 100, variant: str = "transformer"):
    """Zero-noise DAE on 10 sentences; returns (exact matches, steps used)."""
    from canto_umt.decoding import greedy_decode, pad_batch
    from canto_umt.models import ModelConfig, build_model
    from canto_umt.training import NoiseConfig, Trainer, TrainingSchedule
    from canto_umt.vocab import EOS_ID, Vocab

    sents = overfit_sentences(seed)
    vocab = Vocab({f"t{i}": 1 for i in range(15)})
    sizes = {"L1": len(vocab), "L2": len(vocab)}
    if variant == "gru":
        cfg = ModelConfig.gru(sizes, d_model=32, dropout=0.0, max_len=16, init_seed=seed, freeze_embeddings=False)
    else:
        cfg = ModelConfig.transformer(sizes, d_model=32, heads=4, ffn_dim=64, dropout=0.0, max_len=16, init_seed=seed)
    model = build_model(cfg)
    schedule = TrainingSchedule(steps=max_steps, batch_size=10, bt_ratio=0, lr=3e-3, seed=seed)
    trainer = Trainer(model, {"L1": vocab, "L2": vocab}, {"L1": sents, "L2": sents}, schedule,
                      NoiseConfig(p_drop=0.0, shuffle_k=0))
    src = pad_batch([s + [EOS_ID] for s in sents])
    matches = 0
    while trainer.step < max_steps:
        trainer.train(until=min(max_steps, trainer.step + check_every))
        hyps = greedy_decode(model, src, "L1", "L1", 15)
        matches = sum(h.tokens == s for h, s in zip(hyps, sents))
        if matches == len(sents):
            break
    return matches, trainer.step


def small_trainer(variant="transformer", seed=0, steps=20, out_dir=None, dtype="float64", shared=True, **sched):
    """A tiny float64 trainer over random id corpora, with BT enabled."""
    from canto_umt.models import ModelConfig, build_model
    from canto_umt.training import Trainer, TrainingSchedule
    from canto_umt.vocab import Vocab

    vocab = Vocab({f"t{i}": 1 for i in range(10)})
    rng = random.Random(seed)
    corpora = {
        lang: [[rng.randrange(5, len(vocab)) for _ in range(rng.randint(2, 6))] for _ in range(40)]
        for lang in ("L1", "L2")
    }
    sizes = {"L1": len(vocab), "L2": len(vocab)}
    common = dict(d_model=8, dropout=0.1, max_len=12, dtype=dtype, init_seed=seed, share_embeddings=shared)
    if variant == "gru":
        cfg = ModelConfig.gru(sizes, **common)
    else:
        cfg = ModelConfig.transformer(sizes, heads=2, ffn_dim=16, **common)
    opts = dict(steps=steps, batch_size=4, warmup_frac=0.2, seed=seed)
    opts.update(sched)
    return Trainer(build_model(cfg), {"L1": vocab, "L2": vocab}, corpora, TrainingSchedule(**opts), out_dir=out_dir)
