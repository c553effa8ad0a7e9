"""Token embeddings: skip-gram training, identical-string anchors, orthogonal
mapping with CSLS self-learning, and pivot-private composition."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-5
PIVOT_HALF_DIM = 256


@dataclass
class EmbeddingMatrix:
    tokens: list[str]
    vectors: np.ndarray
    counts: dict[str, int] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("vector rows must match token count")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite embedding entries")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self.index[token]]

    def __contains__(self, token: str) -> bool:
        return token in self.index


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


# --------------------------------------------------------------------------
# skip-gram with negative sampling


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_loss_and_grads(center, context, negatives):
    """Loss and gradients of one skip-gram example.

    ``center`` and ``context`` are (d,) vectors, ``negatives`` is (k, d).
    Returns ``(loss, d_center, d_context, d_negatives)``.
    """
    pos = _sigmoid(context @ center)
    neg = _sigmoid(-(negatives @ center))
    loss = -np.log(pos) - np.sum(np.log(neg))
    g_pos = pos - 1.0
    g_neg = 1.0 - neg
    d_center = g_pos * context + g_neg @ negatives
    d_context = g_pos * center
    d_negatives = np.outer(g_neg, center)
    return float(loss), d_center, d_context, d_negatives


def _context_pairs(sentences: Sequence[np.ndarray], window: int, rng: np.random.Generator):
    flat = np.concatenate(sentences)
    sent_id = np.repeat(np.arange(len(sentences)), [len(s) for s in sentences])
    # word2vec-style reduced window per center position
    span = rng.integers(1, window + 1, size=len(flat))
    centers, contexts = [], []
    for off in range(1, window + 1):
        i = np.arange(len(flat) - off)
        j = i + off
        same = sent_id[i] == sent_id[j]
        fwd = same & (span[i] >= off)
        bwd = same & (span[j] >= off)
        centers += [flat[i[fwd]], flat[j[bwd]]]
        contexts += [flat[j[fwd]], flat[i[bwd]]]
    return np.concatenate(centers), np.concatenate(contexts)


def train_skipgram(
    corpus: Iterable[Sequence[str]],
    dim: int = 512,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
    batch_size: int = 64,
    min_count: int = 1,
) -> EmbeddingMatrix:
    """Train skip-gram embeddings with unigram^0.75 negative sampling.

    Updates are applied serially in mini-batches, so a given seed always
    yields the same matrix. Per-epoch mean loss is kept in ``history``.
    """
    if dim < 1 or window < 1 or negatives < 1:
        raise ValueError("dim, window and negatives must be >= 1")
    sents = [list(s) for s in corpus]
    counts: dict[str, int] = {}
    for s in sents:
        for t in s:
            counts[t] = counts.get(t, 0) + 1
    tokens = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    if not tokens:
        raise ValueError("empty vocabulary")
    index = {t: i for i, t in enumerate(tokens)}
    id_sents = [np.array([index[t] for t in s if t in index], dtype=np.int64) for s in sents]
    id_sents = [s for s in id_sents if len(s)]

    V = len(tokens)
    rng = np.random.default_rng(seed)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))
    freq = np.array([counts[t] for t in tokens], dtype=np.float64) ** 0.75
    noise_cdf = np.cumsum(freq / freq.sum())

    history: list[float] = []
    n_pairs_total = None
    step = 0
    for epoch in range(epochs):
        if len(id_sents) == 0:
            break
        c_ids, o_ids = _context_pairs(id_sents, window, rng)
        order = rng.permutation(len(c_ids))
        c_ids, o_ids = c_ids[order], o_ids[order]
        if n_pairs_total is None:
            n_pairs_total = max(1, len(c_ids) * epochs)
        losses = []
        for start in range(0, len(c_ids), batch_size):
            c = c_ids[start:start + batch_size]
            o = o_ids[start:start + batch_size]
            n = np.searchsorted(noise_cdf, rng.random((len(c), negatives)), side="right")
            n = np.minimum(n, V - 1)
            alpha = lr * max(1e-4, 1.0 - step / n_pairs_total)
            step += len(c)

            vc = w_in[c]
            uo = w_out[o]
            un = w_out[n]
            pos = _sigmoid(np.einsum("bd,bd->b", uo, vc))
            neg = _sigmoid(-np.einsum("bkd,bd->bk", un, vc))
            losses.append(float(np.mean(-np.log(pos) - np.log(neg).sum(axis=1))))
            g_pos = (pos - 1.0)[:, None]
            g_neg = (1.0 - neg)[:, :, None]
            d_c = g_pos * uo + (g_neg * un).sum(axis=1)
            d_o = g_pos * vc
            d_n = g_neg * vc[:, None, :]
            np.add.at(w_in, c, -alpha * d_c)
            np.add.at(w_out, o, -alpha * d_o)
            np.add.at(w_out, n.reshape(-1), -alpha * d_n.reshape(-1, dim))
        history.append(float(np.mean(losses)) if losses else 0.0)
        logger.debug("skipgram epoch %d loss %.4f", epoch + 1, history[-1])
    if not np.all(np.isfinite(w_in)):
        raise FloatingPointError("skip-gram training diverged")
    return EmbeddingMatrix(tokens, w_in, counts={t: counts[t] for t in tokens}, history=history)


# --------------------------------------------------------------------------
# anchors and orthogonal mapping


@dataclass
class AnchorDictionary:
    pairs: list[tuple[int, int]]
    tokens: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{a}\t{b}\n" for a, b in self.tokens), encoding="utf-8")


def _tokens_and_counts(v) -> tuple[list[str], dict[str, int]]:
    if isinstance(v, EmbeddingMatrix):
        return v.tokens, v.counts
    # Vocab-like: use learned tokens only
    return v.learned(), dict(v.counts)


def build_anchor_dict(vocab_a, vocab_b) -> AnchorDictionary:
    """Pair tokens spelled identically in both vocabularies.

    Pairs are sorted by descending joint frequency, then by token.
    """
    toks_a, cnt_a = _tokens_and_counts(vocab_a)
    toks_b, cnt_b = _tokens_and_counts(vocab_b)
    if not toks_a or not toks_b:
        raise ValueError("empty vocabulary")
    idx_a = {t: i for i, t in enumerate(toks_a)}
    idx_b = {t: i for i, t in enumerate(toks_b)}
    shared = set(idx_a) & set(idx_b)
    if not shared:
        raise ValueError("no anchors")
    ordered = sorted(shared, key=lambda t: (-(cnt_a.get(t, 0) + cnt_b.get(t, 0)), t))
    return AnchorDictionary([(idx_a[t], idx_b[t]) for t in ordered], [(t, t) for t in ordered])


def normalize_embeddings(vectors: np.ndarray) -> np.ndarray:
    """Length-normalize rows, then mean-center columns."""
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    out = vectors / np.where(norms == 0, 1.0, norms)
    return out - out.mean(axis=0, keepdims=True)


def solve_procrustes(xa: np.ndarray, ya: np.ndarray) -> np.ndarray:
    """Orthogonal W minimizing ||xa @ W - ya||_F.

    When the cross-covariance is rank deficient the minimizer is not unique;
    the free null-space sign is then chosen so that W is a proper rotation.
    """
    u, s, vt = np.linalg.svd(xa.T @ ya)
    w = u @ vt
    tol = s[0] * 1e-10 if s.size and s[0] > 0 else 1e-12
    if s[-1] <= tol and np.linalg.det(w) < 0:
        u = u.copy()
        u[:, -1] *= -1
        w = u @ vt
    return w


def mapping_objective(xa: np.ndarray, ya: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum((xa @ w - ya) ** 2))


def orthogonality_error(w: np.ndarray) -> float:
    return float(np.max(np.abs(w.T @ w - np.eye(w.shape[0]))))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(n == 0, 1.0, n)


def csls_induce(xw: np.ndarray, y: np.ndarray, k: int = 10, chunk: int = 2048) -> np.ndarray:
    """For each mapped source row, the CSLS-best target index."""
    xs, ys = _unit_rows(xw), _unit_rows(y)
    kx = min(k, len(ys))
    ky = min(k, len(xs))
    r_x = np.empty(len(xs))
    for s in range(0, len(xs), chunk):
        sim = xs[s:s + chunk] @ ys.T
        r_x[s:s + chunk] = np.mean(np.partition(sim, -kx, axis=1)[:, -kx:], axis=1)
    r_y = np.empty(len(ys))
    for s in range(0, len(ys), chunk):
        sim = ys[s:s + chunk] @ xs.T
        r_y[s:s + chunk] = np.mean(np.partition(sim, -ky, axis=1)[:, -ky:], axis=1)
    best = np.empty(len(xs), dtype=np.int64)
    for s in range(0, len(xs), chunk):
        scores = 2 * (xs[s:s + chunk] @ ys.T) - r_x[s:s + chunk, None] - r_y[None, :]
        best[s:s + chunk] = np.argmax(scores, axis=1)
    return best


@dataclass
class MappingMatrix:
    W: np.ndarray
    history: list[tuple[float, float]] = field(default_factory=list)
    normalized: bool = True

    def __post_init__(self):
        err = orthogonality_error(self.W)
        if err >= ORTHO_TOL:
            raise ValueError(f"mapping is not orthogonal (max |WtW-I| = {err:.2e})")

    def apply(self, emb: EmbeddingMatrix) -> EmbeddingMatrix:
        x = normalize_embeddings(emb.vectors) if self.normalized else emb.vectors
        return EmbeddingMatrix(list(emb.tokens), x @ self.W, dict(emb.counts))


def learn_mapping(
    x: EmbeddingMatrix,
    y: EmbeddingMatrix,
    anchors: AnchorDictionary | Sequence[tuple[int, int]],
    self_learning_iters: int = 0,
    csls_k: int = 10,
    normalize: bool = True,
) -> MappingMatrix:
    """Orthogonal map from X's space into Y's, fit on anchor pairs.

    Rows are mapped as ``x @ W``. With self-learning, each iteration induces
    a dictionary by CSLS retrieval and re-solves; ``history`` records the
    objective on that dictionary before and after each re-solve.
    """
    pairs = list(anchors.pairs if isinstance(anchors, AnchorDictionary) else anchors)
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs {y.dim}")
    if not pairs:
        raise ValueError("no anchors")
    if len(pairs) < x.dim:
        warnings.warn(f"only {len(pairs)} anchors for dimension {x.dim}", stacklevel=2)
    xv = normalize_embeddings(x.vectors) if normalize else x.vectors
    yv = normalize_embeddings(y.vectors) if normalize else y.vectors
    src = np.array([a for a, _ in pairs])
    tgt = np.array([b for _, b in pairs])

    w = solve_procrustes(xv[src], yv[tgt])
    history = [(float("nan"), mapping_objective(xv[src], yv[tgt], w))]
    _check_orthogonal(w)
    for it in range(self_learning_iters):
        src = np.arange(len(xv))
        tgt = csls_induce(xv @ w, yv, csls_k)
        before = mapping_objective(xv[src], yv[tgt], w)
        w = solve_procrustes(xv[src], yv[tgt])
        _check_orthogonal(w)
        after = mapping_objective(xv[src], yv[tgt], w)
        history.append((before, after))
        logger.debug("self-learning %d: %.6f -> %.6f", it + 1, before, after)
    return MappingMatrix(w, history, normalize)


def _check_orthogonal(w: np.ndarray) -> None:
    err = orthogonality_error(w)
    if err >= ORTHO_TOL:
        raise FloatingPointError(f"Procrustes solution lost orthogonality ({err:.2e})")


def translation_precision(x: EmbeddingMatrix, y: EmbeddingMatrix, gold: dict[str, str], csls_k: int = 0) -> float:
    """Precision@1 of nearest-neighbour retrieval from x into y."""
    src = [t for t in gold if t in x and gold[t] in y]
    if not src:
        return 0.0
    xs = _unit_rows(np.stack([x[t] for t in src]))
    if csls_k:
        best = csls_induce(xs, y.vectors, csls_k)
    else:
        best = np.argmax(xs @ _unit_rows(y.vectors).T, axis=1)
    hits = sum(y.tokens[b] == gold[t] for t, b in zip(src, best))
    return hits / len(src)


# --------------------------------------------------------------------------
# pivot-private composition


@dataclass
class PivotPrivateReport:
    missing_shared: dict[str, int]
    missing_private: dict[str, int]


def compose_pivot_private(
    shared: EmbeddingMatrix,
    private_a: EmbeddingMatrix,
    private_b: EmbeddingMatrix,
    half_dim: int = PIVOT_HALF_DIM,
) -> tuple[EmbeddingMatrix, EmbeddingMatrix, PivotPrivateReport]:
    """Concatenate a shared half and a language-private half per token.

    Each output covers its private matrix's vocabulary. Tokens absent from
    the shared matrix get a zero shared half; the count is reported.
    """
    for name, m in (("shared", shared), ("private_a", private_a), ("private_b", private_b)):
        if m.dim != half_dim:
            raise ValueError(f"{name} has dimension {m.dim}, expected {half_dim}")
    outs = []
    missing_shared = {}
    for lang, priv in (("a", private_a), ("b", private_b)):
        vecs = np.zeros((len(priv), 2 * half_dim))
        vecs[:, half_dim:] = priv.vectors
        miss = 0
        for i, tok in enumerate(priv.tokens):
            j = shared.index.get(tok)
            if j is None:
                miss += 1
            else:
                vecs[i, :half_dim] = shared.vectors[j]
        missing_shared[lang] = miss
        outs.append(EmbeddingMatrix(list(priv.tokens), vecs, dict(priv.counts)))
    # shared tokens with no private row in either language are not emitted
    missing_private = {
        "a": sum(1 for t in shared.tokens if t not in private_a),
        "b": sum(1 for t in shared.tokens if t not in private_b),
    }
    return outs[0], outs[1], PivotPrivateReport(missing_shared, missing_private)


# --------------------------------------------------------------------------
# text serialization


def export_embeddings(emb: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(emb)} {emb.dim}\n")
        for tok, row in zip(emb.tokens, emb.vectors):
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"token {tok!r} cannot be serialized")
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in row) + "\n")


def import_embeddings(path: str | Path) -> EmbeddingMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise ValueError("malformed header, expected 'V d'")
        n, d = int(header[0]), int(header[1])
        if n == 0 or d == 0:
            raise ValueError("header declares an empty matrix")
        tokens, rows = [], []
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise ValueError(f"line {lineno}: expected {d} values, got {len(parts) - 1}")
            tokens.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if len(tokens) != n:
        raise ValueError(f"header declares {n} rows, found {len(tokens)}")
    return EmbeddingMatrix(tokens, np.array(rows, dtype=np.float64))


def save_anchors(pairs: Iterable[tuple[str, str]], path: str | Path) -> None:
    Path(path).write_text("".join(f"{a}\t{b}\n" for a, b in pairs), encoding="utf-8")


def load_anchors(path: str | Path, x: EmbeddingMatrix, y: EmbeddingMatrix) -> AnchorDictionary:
    pairs, toks = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        a, b = line.split("\t")
        if a in x and b in y:
            pairs.append((x.index[a], y.index[b]))
            toks.append((a, b))
    if not pairs:
        raise ValueError("no anchors")
    return AnchorDictionary(pairs, toks)
