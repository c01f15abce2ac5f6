"""Class semantics, domain corpora, attention masks, and the per-branch angular loss.

A branch autoencoder reconstructs class word-embeddings; the angular loss is a
binary cross-entropy over sigmoid(cosine) between reconstructions and the words
of one domain corpus, with per-class attention masks as targets.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .nn import MLP, Param, sigmoid

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
COSINE_FLOOR = 1e-8
MASK_LOGIT_MARGIN = 12.0

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass
class SemanticTable:
    """Per-class embedding vectors with a disjoint seen/unseen split."""

    dim: int
    vectors: dict[str, np.ndarray]
    seen: tuple[str, ...]
    unseen: tuple[str, ...]

    def __post_init__(self):
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise ValueError(f"seen and unseen classes overlap: {sorted(overlap)}")
        for cid in (*self.seen, *self.unseen):
            if cid not in self.vectors:
                raise ValueError(f"class {cid!r} missing from semantic table")
        for cid, vec in self.vectors.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise ValueError(f"semantic vector for {cid!r} has shape {vec.shape}, expected ({self.dim},)")
            self.vectors[cid] = vec

    def matrix(self, class_ids) -> np.ndarray:
        rows = []
        for cid in class_ids:
            if cid not in self.vectors:
                raise ValueError(f"unknown class id {cid!r}")
            rows.append(self.vectors[cid])
        return np.stack(rows) if rows else np.zeros((0, self.dim))

    @property
    def class_ids(self) -> tuple[str, ...]:
        return (*self.seen, *self.unseen)


@dataclass
class Corpus:
    """A bag of domain words (e.g. ingredients or cuisines) with embeddings."""

    domain: str
    tokens: tuple[str, ...]
    vectors: np.ndarray  # (a, s)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if len(self.tokens) == 0:
            raise ValueError(f"corpus {self.domain!r} is empty")
        if len(set(self.tokens)) != len(self.tokens):
            dupes = sorted({t for t in self.tokens if self.tokens.count(t) > 1})
            raise ValueError(f"corpus {self.domain!r} has duplicate tokens: {dupes}")
        if self.vectors.shape != (len(self.tokens), self.vectors.shape[1]):
            raise ValueError(f"corpus {self.domain!r}: vector block shape {self.vectors.shape} "
                             f"does not match {len(self.tokens)} tokens")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def merge_corpora(a: Corpus, b: Corpus, domain: str = "merged") -> Corpus:
    """Single-branch ablation: one corpus holding both domains' words."""
    return Corpus(domain, (*a.tokens, *b.tokens), np.vstack([a.vectors, b.vectors]))


@dataclass
class AttentionMask:
    """Per-class indicators over corpus words, stored as logits.

    In "fixed-lexical" mode the logits are frozen at +/-MASK_LOGIT_MARGIN; in
    "learnable" mode they are trained jointly with an L1 sparsity penalty.
    """

    class_ids: tuple[str, ...]
    logits: Param
    mode: str = "fixed-lexical"

    def __post_init__(self):
        if self.mode not in ("fixed-lexical", "learnable"):
            raise ValueError(f"unknown mask mode {self.mode!r}")
        self._row_index = {cid: i for i, cid in enumerate(self.class_ids)}

    def binary(self) -> np.ndarray:
        return (self.logits.value > 0.0).astype(np.float64)

    def soft(self) -> np.ndarray:
        return sigmoid(self.logits.value)

    def rows(self, class_ids) -> np.ndarray:
        """Mask rows for a batch: binary targets unless the mask is learnable."""
        idx = []
        for cid in class_ids:
            if cid not in self._row_index:
                raise ValueError(f"class {cid!r} has no attention-mask row")
            idx.append(self._row_index[cid])
        values = self.soft() if self.mode == "learnable" else self.binary()
        return values[np.array(idx, dtype=np.intp)]

    def row_indices(self, class_ids) -> np.ndarray:
        return np.array([self._row_index[cid] for cid in class_ids], dtype=np.intp)


def tokenize(name: str) -> list[str]:
    """Case-fold and split on whitespace/punctuation."""
    return [t for t in _TOKEN_SPLIT.split(name.casefold()) if t]


def lexical_mask_init(class_names: dict[str, str], corpus: Corpus,
                      mode: str = "fixed-lexical") -> AttentionMask:
    """Build mask rows from class-name tokens: a corpus word is active for a class
    when it equals (or is contained in) one of the class name's tokens."""
    corpus_tokens = [tokenize(t)[0] if tokenize(t) else "" for t in corpus.tokens]
    class_ids = tuple(class_names)
    logits = np.full((len(class_ids), corpus.size), -MASK_LOGIT_MARGIN)
    for i, cid in enumerate(class_ids):
        name_tokens = tokenize(class_names[cid])
        for j, ct in enumerate(corpus_tokens):
            if ct and any(ct == nt or ct in nt for nt in name_tokens):
                logits[i, j] = MASK_LOGIT_MARGIN
        if not np.any(logits[i] > 0):
            log.info("class %r matched no %s corpus word; mask row is empty", cid, corpus.domain)
    return AttentionMask(class_ids, Param(f"mask.{corpus.domain}", logits), mode)


def cosine_similarity(a: np.ndarray, b: np.ndarray, floor: float = COSINE_FLOOR) -> float:
    """a.b / max(|a||b|, floor), so zero vectors yield 0 instead of dividing by zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"cosine needs two equal-length vectors, got {a.shape} and {b.shape}")
    if floor <= 0.0:
        raise ValueError(f"floor must be positive, got {floor}")
    denom = max(float(np.linalg.norm(a) * np.linalg.norm(b)), floor)
    return float(a @ b / denom)


def cosine_matrix(rows: np.ndarray, words: np.ndarray, floor: float = COSINE_FLOOR):
    """Pairwise floored cosine between batch rows (n, s) and corpus words (a, s).

    Returns (cos, row_norms, word_norms, floored) with `floored` marking pairs
    whose denominator was clamped.
    """
    row_norms = np.linalg.norm(rows, axis=1)
    word_norms = np.linalg.norm(words, axis=1)
    denom = np.outer(row_norms, word_norms)
    floored = denom < floor
    denom_eff = np.maximum(denom, floor)
    cos = (rows @ words.T) / denom_eff
    return cos, row_norms, word_norms, floored


def angular_loss(recon: np.ndarray, corpus: Corpus, mask_rows: np.ndarray) -> float:
    loss, _, _ = angular_loss_grad(recon, corpus, mask_rows)
    return loss


def angular_loss_grad(recon: np.ndarray, corpus: Corpus, mask_rows: np.ndarray):
    """Masked BCE over sigmoid(cosine(recon, corpus word)).

    Returns (loss, d_recon, d_mask_rows). Log arguments are clamped at 1e-12;
    since cosine lies in [-1, 1] the clamp never binds in practice and the
    gradient uses the exact unclamped form there.
    """
    recon = np.asarray(recon, dtype=np.float64)
    mask_rows = np.asarray(mask_rows, dtype=np.float64)
    if recon.ndim != 2 or recon.shape[1] != corpus.dim:
        raise ValueError(f"reconstructions {recon.shape} do not match corpus dim {corpus.dim}")
    n, a = recon.shape[0], corpus.size
    if mask_rows.shape != (n, a):
        raise ValueError(f"mask rows {mask_rows.shape} do not match batch ({n}, {a})")
    if n == 0:
        raise ValueError("empty batch")

    cos, row_norms, word_norms, floored = cosine_matrix(recon, corpus.vectors)
    p = sigmoid(cos)
    p_pos = np.maximum(p, LOG_CLAMP)
    p_neg = np.maximum(1.0 - p, LOG_CLAMP)
    scale = 1.0 / (n * a)
    loss = -scale * float(np.sum(mask_rows * np.log(p_pos) + (1.0 - mask_rows) * np.log(p_neg)))

    # BCE-with-logits gradient wrt the cosine, zeroed where a clamp was active
    d_cos = scale * (p - mask_rows)
    d_cos[(p <= LOG_CLAMP) | (1.0 - p <= LOG_CLAMP)] = 0.0

    denom_eff = np.maximum(np.outer(row_norms, word_norms), COSINE_FLOOR)
    d_recon = (d_cos / denom_eff) @ corpus.vectors
    # second cosine term only where the denominator was not clamped
    t = np.where(floored, 0.0, d_cos * cos)
    rn_sq = np.maximum(row_norms * row_norms, 1e-300)
    d_recon -= (t.sum(axis=1) / rn_sq)[:, None] * recon

    d_mask = -scale * (np.log(p_pos) - np.log(p_neg))
    return loss, d_recon, d_mask


DEFAULT_SPARSITY_WEIGHT = 1e-3


def mask_sparsity_penalty(mask: AttentionMask, weight: float = DEFAULT_SPARSITY_WEIGHT):
    """L1 penalty on the soft mask; returns (value, d_logits)."""
    soft = mask.soft()
    value = weight * float(np.sum(soft))
    d_logits = weight * soft * (1.0 - soft)
    return value, d_logits


class BranchAE:
    """Two-layer encoder + two-layer decoder reconstructing semantic vectors."""

    def __init__(self, dim: int, latent: int | None = None, rng=None, name: str = "branch"):
        if latent is None:
            latent = (dim + 1) // 2
        if latent < 1:
            raise ValueError(f"latent dim must be positive, got {latent}")
        self.dim = dim
        self.latent = latent
        self.encoder = MLP([dim, dim, latent], ["leaky_relu", "leaky_relu"], rng=rng, name=f"{name}.enc")
        self.decoder = MLP([latent, dim, dim], ["leaky_relu", "identity"], rng=rng, name=f"{name}.dec")

    def params(self) -> list[Param]:
        return self.encoder.params() + self.decoder.params()

    def forward(self, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        if v.shape[1] != self.dim:
            raise ValueError(f"semantic vectors have width {v.shape[1]}, branch expects {self.dim}")
        return self.decoder.forward(self.encoder.forward(v))

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        return self.encoder.backward(self.decoder.backward(d_out))


def branch_reconstruct(ae: BranchAE, v: np.ndarray) -> np.ndarray:
    """Decode one semantic vector (or a batch) through a branch autoencoder."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    out = ae.forward(v)
    return out[0] if single else out


def branch_semantics(ae_ingredient: BranchAE, ae_cuisine: BranchAE, table: SemanticTable,
                     class_ids) -> tuple[np.ndarray, np.ndarray]:
    """Decoded per-branch semantic matrices (n, s) for a batch of classes."""
    v = table.matrix(class_ids)
    return ae_ingredient.forward(v), ae_cuisine.forward(v)
