"""Synthesizer training loop, synthesis, selection, and state round-trips."""

import numpy as np
import pytest

from seeds.benchmark import BenchmarkSpec, gen_benchmark
from seeds.classifier import train_unseen_classifier
from seeds.pipeline import (
    LossWeights, TrainSettings, init_synthesizer, select_features, synthesize_unseen,
    train_epochs, train_synthesizer,
)
from seeds.sampling import SamplingConfig


def tiny_spec(seed=0, **kw):
    """A benchmark small enough for seconds-scale training tests."""
    defaults = dict(ingredients=2, cuisines=2, feature_dim=6, semantic_dim=6,
                    modes_per_class=2, train_per_class=40, test_per_class=20, seed=seed)
    defaults.update(kw)
    return BenchmarkSpec(**defaults)


def tiny_settings(seed=0, **kw):
    defaults = dict(epochs=2, batch_size=32, critic_steps=2, denoiser_batch=16,
                    denoiser_timesteps=4, lr=1e-3, gen_hidden=16, schedule_steps=8,
                    denoiser_mode="shared", seed=seed)
    defaults.update(kw)
    return TrainSettings(**defaults)


@pytest.fixture(scope="module")
def tiny_bench():
    return gen_benchmark(tiny_spec())


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.angular, w.adversarial, w.reconstruction) == (1.0, 1.0, 0.1)

    def test_total_arithmetic(self):
        assert LossWeights().total(1.0, 1.0, 1.0, 1.0) == pytest.approx(3.1)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(angular=-0.5)


class TestTrainingLoop:
    def test_zero_weights_leave_parameters_unchanged(self, tiny_bench):
        state = init_synthesizer(tiny_bench.seen_train, tiny_bench.table,
                                 tiny_bench.ingredient_corpus, tiny_bench.cuisine_corpus,
                                 tiny_bench.class_names, tiny_settings())
        before = {p.name: p.value.copy() for p in state.trainable_params()}
        train_epochs(state, tiny_bench.seen_train, LossWeights(0.0, 0.0, 0.0), epochs=3)
        for p in state.trainable_params():
            assert np.array_equal(p.value, before[p.name]), p.name

    def test_loss_curve_rows_and_fields(self, tiny_bench):
        state, curve = train_synthesizer(
            tiny_bench.seen_train, tiny_bench.table, tiny_bench.ingredient_corpus,
            tiny_bench.cuisine_corpus, tiny_bench.class_names, LossWeights(),
            tiny_settings())
        assert len(curve) == 2
        for i, row in enumerate(curve):
            assert row["epoch"] == i + 1
            assert set(row) == {"epoch", "l_ang1", "l_ang2", "l_adv", "l_r", "l_total"}
            assert np.isfinite(row["l_total"])

    def test_same_seed_reproduces_training_exactly(self, tiny_bench):
        results = []
        for _ in range(2):
            state, curve = train_synthesizer(
                tiny_bench.seen_train, tiny_bench.table, tiny_bench.ingredient_corpus,
                tiny_bench.cuisine_corpus, tiny_bench.class_names, LossWeights(),
                tiny_settings(seed=7))
            results.append((state, curve))
        a, b = results
        assert a[1] == b[1]
        for pa, pb in zip(a[0].trainable_params(), b[0].trainable_params()):
            assert np.array_equal(pa.value, pb.value), pa.name

    def test_single_branch_shares_parameters(self, tiny_bench):
        state = init_synthesizer(tiny_bench.seen_train, tiny_bench.table,
                                 tiny_bench.ingredient_corpus, tiny_bench.cuisine_corpus,
                                 tiny_bench.class_names, tiny_settings(single_branch=True))
        assert state.branches[0] is state.branches[1]
        merged = state.corpora[0]
        assert merged.size == tiny_bench.ingredient_corpus.size + tiny_bench.cuisine_corpus.size
        train_epochs(state, tiny_bench.seen_train, LossWeights(), epochs=1)

    def test_learnable_masks_move(self, tiny_bench):
        state = init_synthesizer(tiny_bench.seen_train, tiny_bench.table,
                                 tiny_bench.ingredient_corpus, tiny_bench.cuisine_corpus,
                                 tiny_bench.class_names, tiny_settings(learnable_masks=True))
        before = state.masks[0].logits.value.copy()
        train_epochs(state, tiny_bench.seen_train, LossWeights(), epochs=1)
        assert not np.array_equal(state.masks[0].logits.value, before)

    def test_dataset_class_missing_from_table_rejected(self, tiny_bench):
        from seeds.data import FeatureDataset
        rogue = FeatureDataset(np.zeros((4, 6)), ["mystery"] * 4, "seen-train")
        with pytest.raises(ValueError, match="missing from the semantic table"):
            init_synthesizer(rogue, tiny_bench.table, tiny_bench.ingredient_corpus,
                             tiny_bench.cuisine_corpus, tiny_bench.class_names, tiny_settings())


@pytest.fixture(scope="module")
def trained(tiny_bench):
    state, _ = train_synthesizer(
        tiny_bench.seen_train, tiny_bench.table, tiny_bench.ingredient_corpus,
        tiny_bench.cuisine_corpus, tiny_bench.class_names, LossWeights(),
        tiny_settings(epochs=3))
    return state


class TestSynthesizeAndSelect:

    def test_bank_shape_and_finiteness(self, trained, tiny_bench):
        bank = synthesize_unseen(trained, 30)
        assert set(bank.class_ids) == set(tiny_bench.table.unseen)
        for block in bank.rows.values():
            assert block.shape == (30, 6)
            assert np.all(np.isfinite(block))

    def test_per_class_variance_positive(self, trained):
        bank = synthesize_unseen(trained, 60)
        for cid, block in bank.rows.items():
            trace = float(np.trace(np.cov(block.T)))
            assert trace > 1e-4, cid

    def test_unknown_class_rejected(self, trained):
        with pytest.raises(ValueError, match="missing from the semantic table"):
            synthesize_unseen(trained, 5, class_ids=["not_a_class"])

    def test_selection_counts_and_membership(self, trained):
        bank = synthesize_unseen(trained, 40)
        selected = select_features(bank, SamplingConfig(clusters=3, per_cluster=4, seed=1))
        for cid, block in selected.rows.items():
            assert block.shape == (12, 6)
            source = bank.rows[cid]
            for row in block:
                assert np.any(np.all(np.isclose(source, row, atol=0), axis=1))

    def test_identity_selection_when_keep_equals_size(self, trained):
        bank = synthesize_unseen(trained, 12)
        selected = select_features(bank, SamplingConfig(clusters=3, per_cluster=4, seed=0))
        for cid in bank.class_ids:
            got = selected.rows[cid][np.lexsort(selected.rows[cid].T)]
            want = bank.rows[cid][np.lexsort(bank.rows[cid].T)]
            assert np.array_equal(got, want)

    def test_selected_bank_trains_unseen_head(self, trained):
        bank = synthesize_unseen(trained, 24)
        selected = select_features(bank, SamplingConfig(clusters=2, per_cluster=6, seed=0))
        head = train_unseen_classifier(selected)
        assert set(head.class_ids) == set(selected.class_ids)


class TestStateRoundTrip:
    def test_named_arrays_cover_all_parameters(self, tiny_bench):
        state, _ = train_synthesizer(
            tiny_bench.seen_train, tiny_bench.table, tiny_bench.ingredient_corpus,
            tiny_bench.cuisine_corpus, tiny_bench.class_names, LossWeights(), tiny_settings())
        arrays = state.named_arrays()
        for p in state.trainable_params():
            assert p.name in arrays
        assert "rng.train.state" in arrays and "feat.mean" in arrays

    def test_save_load_resume_is_bit_exact(self, tiny_bench):
        def fresh():
            return init_synthesizer(tiny_bench.seen_train, tiny_bench.table,
                                    tiny_bench.ingredient_corpus, tiny_bench.cuisine_corpus,
                                    tiny_bench.class_names, tiny_settings(seed=3))

        uninterrupted = fresh()
        train_epochs(uninterrupted, tiny_bench.seen_train, LossWeights(), epochs=2)

        half = fresh()
        train_epochs(half, tiny_bench.seen_train, LossWeights(), epochs=1)
        snapshot = {k: v.copy() for k, v in half.named_arrays().items()}
        resumed = fresh()
        resumed.load_arrays(snapshot)
        assert resumed.epochs_done == 1
        train_epochs(resumed, tiny_bench.seen_train, LossWeights(), epochs=1)

        a = uninterrupted.named_arrays()
        b = resumed.named_arrays()
        assert set(a) == set(b)
        for key in a:
            assert np.array_equal(a[key], b[key]), key
