"""Synthetic compositional benchmark: a detector stand-in producing region features.

Classes are (ingredient, cuisine) pairs. Each class gets a semantic vector built
from shared ingredient/cuisine base vectors, and a Gaussian-mixture feature
distribution whose mode means are a fixed linear map of the pair's one-hot code.
Unseen pairs reuse ingredients and cuisines that occur in seen pairs, so the
benchmark rewards compositional transfer and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FeatureDataset
from .rng import RngStream
from .semantic import Corpus, SemanticTable

INGREDIENT_WORDS = ("rice", "noodles", "egg", "tofu", "beef", "shrimp",
                    "potato", "beans", "corn", "fish", "pork", "lamb")
CUISINE_WORDS = ("fried", "steamed", "boiled", "roasted", "grilled", "braised",
                 "baked", "stewed", "smoked", "pickled", "mashed", "curried")


def _word(pool: tuple[str, ...], prefix: str, i: int) -> str:
    return pool[i] if i < len(pool) else f"{prefix}{i}"


def default_pairs(ingredients: int, cuisines: int):
    """Diagonal pairs are held out; everything else is seen."""
    unseen = [(i, i) for i in range(min(ingredients, cuisines))]
    seen = [(i, c) for i in range(ingredients) for c in range(cuisines) if (i, c) not in set(unseen)]
    return seen, unseen


@dataclass
class BenchmarkSpec:
    ingredients: int = 4
    cuisines: int = 4
    seen_pairs: list[tuple[int, int]] = field(default_factory=list)
    unseen_pairs: list[tuple[int, int]] = field(default_factory=list)
    feature_dim: int = 16
    semantic_dim: int = 16
    modes_per_class: int = 3
    train_per_class: int = 200
    test_per_class: int = 100
    noise_sigma: float = 0.3
    semantic_noise: float = 0.05
    mode_offset_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.seen_pairs and not self.unseen_pairs:
            self.seen_pairs, self.unseen_pairs = default_pairs(self.ingredients, self.cuisines)
        self.seen_pairs = [tuple(p) for p in self.seen_pairs]
        self.unseen_pairs = [tuple(p) for p in self.unseen_pairs]
        if self.ingredients < 1 or self.cuisines < 1:
            raise ValueError("need at least one ingredient and one cuisine")
        if self.modes_per_class < 1:
            raise ValueError(f"modes_per_class must be >= 1, got {self.modes_per_class}")
        all_pairs = self.seen_pairs + self.unseen_pairs
        if len(set(all_pairs)) != len(all_pairs):
            raise ValueError("seen and unseen pair lists overlap or repeat")
        for i, c in all_pairs:
            if not (0 <= i < self.ingredients and 0 <= c < self.cuisines):
                raise ValueError(f"pair ({i}, {c}) outside the {self.ingredients}x{self.cuisines} grid")
        seen_ing = {i for i, _ in self.seen_pairs}
        seen_cui = {c for _, c in self.seen_pairs}
        for i, c in self.unseen_pairs:
            if i not in seen_ing or c not in seen_cui:
                raise ValueError(f"unseen pair ({i}, {c}) uses an ingredient or cuisine "
                                 "absent from every seen pair")

    def class_id(self, pair: tuple[int, int]) -> str:
        i, c = pair
        return f"{_word(CUISINE_WORDS, 'cui', c)}_{_word(INGREDIENT_WORDS, 'ing', i)}"

    def class_name(self, pair: tuple[int, int]) -> str:
        i, c = pair
        return f"{_word(CUISINE_WORDS, 'cui', c)} {_word(INGREDIENT_WORDS, 'ing', i)}"


@dataclass
class Benchmark:
    spec: BenchmarkSpec
    seen_train: FeatureDataset
    seen_test: FeatureDataset
    unseen_test: FeatureDataset
    table: SemanticTable
    ingredient_corpus: Corpus
    cuisine_corpus: Corpus
    class_names: dict[str, str]
    mode_means: dict[str, np.ndarray]  # class id -> (modes, d)

    def true_class_mean(self, class_id: str) -> np.ndarray:
        return self.mode_means[class_id].mean(axis=0)

    def sample_true(self, class_id: str, n: int, rng: RngStream) -> np.ndarray:
        """Fresh draws from a class's true mixture (oracle use only)."""
        modes = self.mode_means[class_id]
        picks = rng.integers(0, modes.shape[0], (n,))
        return modes[picks] + self.spec.noise_sigma * rng.normal((n, modes.shape[1]))


def gen_benchmark(spec: BenchmarkSpec) -> Benchmark:
    root = RngStream(spec.seed)
    rng_sem = root.spawn(1)
    rng_modes = root.spawn(2)
    rng_feat = root.spawn(3)

    ing_base = rng_sem.normal((spec.ingredients, spec.semantic_dim))
    cui_base = rng_sem.normal((spec.cuisines, spec.semantic_dim))

    pairs = spec.seen_pairs + spec.unseen_pairs
    class_ids = [spec.class_id(p) for p in pairs]
    class_names = {spec.class_id(p): spec.class_name(p) for p in pairs}

    vectors = {}
    for (i, c), cid in zip(pairs, class_ids):
        raw = ing_base[i] + cui_base[c] + spec.semantic_noise * rng_sem.normal((spec.semantic_dim,))
        vectors[cid] = raw / np.linalg.norm(raw)
    table = SemanticTable(
        spec.semantic_dim, vectors,
        tuple(spec.class_id(p) for p in spec.seen_pairs),
        tuple(spec.class_id(p) for p in spec.unseen_pairs),
    )

    pair_map = rng_modes.normal((spec.feature_dim, spec.ingredients + spec.cuisines))
    mode_means = {}
    for (i, c), cid in zip(pairs, class_ids):
        base = pair_map[:, i] + pair_map[:, spec.ingredients + c]
        offsets = spec.mode_offset_scale * rng_modes.normal((spec.modes_per_class, spec.feature_dim))
        mode_means[cid] = base[None, :] + offsets

    def draw(class_list, per_class, split):
        feats, labels = [], []
        for cid in class_list:
            modes = mode_means[cid]
            picks = rng_feat.integers(0, spec.modes_per_class, (per_class,))
            rows = modes[picks] + spec.noise_sigma * rng_feat.normal((per_class, spec.feature_dim))
            feats.append(rows)
            labels.extend([cid] * per_class)
        return FeatureDataset(np.vstack(feats), labels, split)

    seen_ids = [spec.class_id(p) for p in spec.seen_pairs]
    unseen_ids = [spec.class_id(p) for p in spec.unseen_pairs]
    seen_train = draw(seen_ids, spec.train_per_class, "seen-train")
    seen_test = draw(seen_ids, spec.test_per_class, "seen-test")
    unseen_test = draw(unseen_ids, spec.test_per_class, "unseen-test")

    ing_tokens = tuple(_word(INGREDIENT_WORDS, "ing", i) for i in range(spec.ingredients))
    cui_tokens = tuple(_word(CUISINE_WORDS, "cui", c) for c in range(spec.cuisines))
    ingredient_corpus = Corpus("ingredient", ing_tokens, ing_base)
    cuisine_corpus = Corpus("cuisine", cui_tokens, cui_base)

    return Benchmark(spec, seen_train, seen_test, unseen_test, table,
                     ingredient_corpus, cuisine_corpus, class_names, mode_means)


def nearest_class_mean_accuracy(bench: Benchmark, dataset: FeatureDataset,
                                class_ids) -> float:
    """Oracle: classify against true class means (percent correct)."""
    means = np.stack([bench.true_class_mean(cid) for cid in class_ids])
    d2 = ((dataset.features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    picks = np.argmin(d2, axis=1)
    hits = sum(1 for k, lab in zip(picks, dataset.labels) if class_ids[k] == lab)
    return 100.0 * hits / len(dataset)
