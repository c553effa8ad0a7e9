import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canto_umt.embeddings import (
    EmbeddingMatrix,
    build_anchor_dict,
    compose_pivot_private,
    cosine,
    export_embeddings,
    import_embeddings,
    learn_mapping,
    load_anchors,
    normalize_embeddings,
    orthogonality_error,
    save_anchors,
    sgns_loss_and_grads,
    solve_procrustes,
    train_skipgram,
    translation_precision,
)
from canto_umt.vocab import Vocab


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def markov_corpus(seed, vocab=150, n=1500, length=12, prefix="w", keep=frozenset(), suffix=""):
    """Sentences from a fixed sparse Markov chain; only the sampling seed varies."""
    succ = np.random.default_rng(42).integers(0, vocab, (vocab, 3))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.integers(vocab)
        sent = [x]
        for _ in range(length - 1):
            x = succ[x, rng.integers(3)] if rng.random() < 0.9 else rng.integers(vocab)
            sent.append(x)
        out.append([f"{prefix}{i}" + ("" if f"{prefix}{i}" in keep else suffix) for i in sent])
    return out


def emb(tokens, vectors):
    return EmbeddingMatrix(list(tokens), np.asarray(vectors, dtype=float))


# ---------------------------------------------------------------- skip-gram


def cooccurrence_corpus(seed):
    rng = np.random.default_rng(seed)
    left = [f"x{i}" for i in range(10)]
    right = [f"z{i}" for i in range(10)]
    sents = []
    for i in range(1000):
        if i % 2 == 0:
            sents.append(["A", "B", *rng.choice(left, 2)])
        else:
            sents.append(["C", *rng.choice(right, 3)])
    return sents


def test_skipgram_shape_and_determinism():
    corpus = cooccurrence_corpus(0)[:100]
    a = train_skipgram(corpus, dim=8, epochs=2, seed=3)
    b = train_skipgram(corpus, dim=8, epochs=2, seed=3)
    assert a.vectors.shape == (len(a.tokens), 8)
    assert np.array_equal(a.vectors, b.vectors)
    assert np.all(np.isfinite(a.vectors))
    assert a.counts["A"] == 50


@pytest.mark.parametrize("seed", range(5))
def test_skipgram_cooccurrence_ordering_and_loss(seed):
    m = train_skipgram(cooccurrence_corpus(seed), dim=16, epochs=5, seed=seed)
    assert cosine(m["A"], m["B"]) > cosine(m["A"], m["C"])
    assert m.history[4] < m.history[0]


def test_skipgram_errors():
    with pytest.raises(ValueError, match="empty vocabulary"):
        train_skipgram([[]], dim=4)
    with pytest.raises(ValueError):
        train_skipgram([["a"]], dim=0)
    with pytest.raises(ValueError):
        train_skipgram([["a"]], window=0)


def test_sgns_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    c, o, n = rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal((3, 6))
    _, dc, do, dn = sgns_loss_and_grads(c, o, n)
    eps = 1e-6

    def numeric(which, shape):
        g = np.zeros(shape)
        for idx in np.ndindex(shape):
            args = [c.copy(), o.copy(), n.copy()]
            args[which][idx] += eps
            up = sgns_loss_and_grads(*args)[0]
            args[which][idx] -= 2 * eps
            down = sgns_loss_and_grads(*args)[0]
            g[idx] = (up - down) / (2 * eps)
        return g

    for analytic, which, shape in ((dc, 0, c.shape), (do, 1, o.shape), (dn, 2, n.shape)):
        num = numeric(which, shape)
        assert np.linalg.norm(analytic - num) / np.linalg.norm(num) < 1e-4


# ---------------------------------------------------------------- anchors


def test_anchor_dict_examples():
    a = Vocab({"朋友": 3, "三": 1, "佢": 5})
    b = Vocab({"朋友": 2, "三": 4, "他": 1})
    d = build_anchor_dict(a, b)
    assert len(d) == 2
    assert d.tokens == [("三", "三"), ("朋友", "朋友")]  # joint counts 5 then 5, token order
    with pytest.raises(ValueError, match="no anchors"):
        build_anchor_dict(Vocab({"a": 1}), Vocab({"b": 1}))
    same = Vocab({"a": 1, "b": 2, "c": 3})
    assert len(build_anchor_dict(same, same)) == 3


def test_anchor_file_roundtrip(tmp_path):
    x = emb(["a", "b"], np.eye(2))
    y = emb(["b", "c"], np.eye(2))
    save_anchors([("a", "c"), ("b", "b"), ("zz", "b")], tmp_path / "anchors.tsv")
    d = load_anchors(tmp_path / "anchors.tsv", x, y)
    assert d.pairs == [(0, 1), (1, 0)]


# ---------------------------------------------------------------- mapping


def test_identity_recovery():
    rng = np.random.default_rng(0)
    x = emb([f"t{i}" for i in range(200)], rng.standard_normal((200, 16)))
    m = learn_mapping(x, x, [(i, i) for i in range(200)])
    assert np.linalg.norm(m.W - np.eye(16)) < 1e-6


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_rotation_recovery(seed):
    rng = np.random.default_rng(seed)
    r = random_orthogonal(16, rng)
    xv = rng.standard_normal((200, 16))
    x = emb([f"t{i}" for i in range(200)], xv)
    y = emb([f"t{i}" for i in range(200)], xv @ r)
    m = learn_mapping(x, y, [(i, i) for i in range(200)])
    assert np.linalg.norm(m.W - r) < 1e-4
    assert orthogonality_error(m.W) < 1e-5


def test_two_dimensional_single_anchor():
    x = emb(["a"], [[1.0, 0.0]])
    y = emb(["b"], [[0.0, 1.0]])
    with pytest.warns(UserWarning):
        m = learn_mapping(x, y, [(0, 0)], normalize=False)
    assert np.allclose(np.array([1.0, 0.0]) @ m.W, [0.0, 1.0], atol=1e-6)
    assert np.isclose(np.linalg.det(m.W), 1.0)


def test_procrustes_minimizes_objective():
    rng = np.random.default_rng(1)
    xa, ya = rng.standard_normal((30, 5)), rng.standard_normal((30, 5))
    w = solve_procrustes(xa, ya)
    best = np.sum((xa @ w - ya) ** 2)
    for _ in range(50):
        q = random_orthogonal(5, rng)
        assert best <= np.sum((xa @ q - ya) ** 2) + 1e-9


def test_normalization_recipe():
    v = normalize_embeddings(np.array([[3.0, 4.0], [0.0, 2.0], [0.0, 0.0]]))
    assert np.allclose(v.mean(axis=0), 0)
    assert np.allclose(v[1] - v[0], [-0.6, 0.2])


def test_mapping_errors_and_warning():
    x = emb(["a", "b"], np.eye(2))
    with pytest.raises(ValueError, match="dimension"):
        learn_mapping(x, emb(["a", "b"], np.ones((2, 3))), [(0, 0)])
    with pytest.raises(ValueError, match="no anchors"):
        learn_mapping(x, x, [])
    with pytest.warns(UserWarning, match="anchors"):
        learn_mapping(x, x, [(0, 0)])


@pytest.fixture(scope="module")
def clone_pair():
    keep = frozenset(f"w{i}" for i in range(60))
    a = train_skipgram(markov_corpus(1), dim=32, epochs=5, window=2, seed=0)
    b = train_skipgram(markov_corpus(2, keep=keep, suffix="'"), dim=32, epochs=5, window=2, seed=1)
    gold = {f"w{i}": f"w{i}'" for i in range(60, 150)}
    return a, b, gold


def test_clone_vocabulary_precision(clone_pair):
    a, b, gold = clone_pair
    anchors = build_anchor_dict(a, b)
    assert len(anchors) >= 50
    m = learn_mapping(a, b, anchors)
    target = emb(b.tokens, normalize_embeddings(b.vectors))
    assert translation_precision(m.apply(a), target, gold) >= 0.9


def test_self_learning_objective_non_increasing(clone_pair):
    a, b, _ = clone_pair
    m = learn_mapping(a, b, build_anchor_dict(a, b), self_learning_iters=3)
    assert len(m.history) == 4
    for before, after in m.history[1:]:
        assert after <= before + 1e-9
    assert orthogonality_error(m.W) < 1e-5


# ---------------------------------------------------------------- pivot-private


def test_pivot_private_contract():
    shared = emb(["a", "b"], [[1.0, 2.0], [3.0, 4.0]])
    pa = emb(["a", "c"], [[5.0, 6.0], [7.0, 8.0]])
    pb = emb(["b"], [[9.0, 9.0]])
    oa, ob, report = compose_pivot_private(shared, pa, pb, half_dim=2)
    assert oa.dim == 4
    assert np.array_equal(oa["a"], [1, 2, 5, 6])
    assert np.array_equal(oa["c"], [0, 0, 7, 8])
    assert np.array_equal(ob["b"], [3, 4, 9, 9])
    assert report.missing_shared == {"a": 1, "b": 0}
    with pytest.raises(ValueError, match="dimension"):
        compose_pivot_private(shared, pa, emb(["b"], [[1.0, 2.0, 3.0]]), half_dim=2)
    with pytest.raises(ValueError):
        compose_pivot_private(shared, pa, pb)  # default halves are 256


def test_pivot_private_captures_commonality():
    ca, cb = markov_corpus(3, n=600), markov_corpus(4, n=600)
    shared = train_skipgram(ca + cb, dim=16, epochs=3, window=2, seed=0)
    pa = train_skipgram(ca, dim=16, epochs=3, window=2, seed=1)
    pb = train_skipgram(cb, dim=16, epochs=3, window=2, seed=2)
    oa, ob, _ = compose_pivot_private(shared, pa, pb, half_dim=16)
    common = [t for t in pa.tokens if t in pb]
    full = np.mean([cosine(oa[t], ob[t]) for t in common])
    private = np.mean([cosine(pa[t], pb[t]) for t in common])
    assert full >= private


# ---------------------------------------------------------------- text format


def test_export_import_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    m = emb(["低碳", "朋友", "</w>"], np.round(rng.standard_normal((3, 4)), 6))
    export_embeddings(m, tmp_path / "e.vec")
    back = import_embeddings(tmp_path / "e.vec")
    assert back.tokens == m.tokens
    assert np.array_equal(back.vectors, m.vectors)
    assert (tmp_path / "e.vec").read_text(encoding="utf-8").splitlines()[0] == "3 4"


@pytest.mark.parametrize(
    "text,match",
    [("0 4\n", "empty"), ("x y\n", "header"), ("1 2\na 1.0\n", "expected 2"), ("2 1\na 1.0\n", "declares 2")],
)
def test_import_errors(tmp_path, text, match):
    (tmp_path / "bad.vec").write_text(text, encoding="utf-8")
    with pytest.raises(ValueError, match=match):
        import_embeddings(tmp_path / "bad.vec")


def test_embedding_matrix_invariants():
    with pytest.raises(ValueError):
        emb(["a"], [[np.nan]])
    with pytest.raises(ValueError):
        emb(["a", "b"], [[1.0]])
    with pytest.raises(ValueError):
        emb(["a", "a"], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        export_embeddings(emb(["a b"], [[1.0]]), "/dev/null")
