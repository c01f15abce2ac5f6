"""Synthesizer blocks: AdaIN statistics, content encoding, fusion, adversarial losses."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seeds.classifier import ClassifierHead
from seeds.nn import Param, check_gradients, numeric_gradient, relative_error, zero_grads
from seeds.rng import RngStream
from seeds.synth import (
    ContentEncoder, ContentGenerator, FusionDecoder, adain, adain_backward, adain_with_cache,
    classifier_alignment_grad, classifier_alignment_loss, content_encode,
    content_encode_backward, critic_loss_backward, fuse, generate_content,
    generate_content_backward, generator_adv_backward, semantic_diverging_grad,
    semantic_diverging_loss, wgan_losses,
)


class TestAdain:
    def test_identity_on_same_input(self):
        x = np.array([1.0, -2.0, 0.5, 3.0])
        assert np.allclose(adain(x, x), x, atol=1e-12)

    def test_hand_computed_pair(self):
        assert np.allclose(adain(np.array([1.0, 3.0]), np.array([0.0, 2.0])), [0.0, 2.0])

    def test_constant_content_collapses_to_style_mean(self):
        out = adain(np.array([5.0, 5.0]), np.array([0.0, 2.0]))
        assert np.allclose(out, [1.0, 1.0])

    def test_output_statistics_match_style(self):
        rng = RngStream(3)
        content = rng.normal((1000, 8))
        style = rng.normal((1000, 8)) * 2.0 + 1.0
        out = adain(content, style)
        mu_err = np.abs(out.mean(axis=1) - style.mean(axis=1))
        sig_err = np.abs(out.std(axis=1) - style.std(axis=1))
        assert mu_err.max() <= 1e-9
        assert sig_err.max() <= 1e-9

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="share shape"):
            adain(np.zeros(3), np.zeros(4))

    def test_backward_matches_finite_differences(self):
        rng = RngStream(17)
        c = Param("c", rng.normal((3, 6)))
        s = Param("s", rng.normal((3, 6)))
        t = rng.normal((3, 6))

        def loss():
            out, _ = adain_with_cache(c.value, s.value)
            return float(np.sum((out - t) ** 2))

        out, cache = adain_with_cache(c.value, s.value)
        d_c, d_s = adain_backward(2.0 * (out - t), cache)
        assert relative_error(d_c, numeric_gradient(loss, c)) < 1e-6
        assert relative_error(d_s, numeric_gradient(loss, s)) < 1e-6

    def test_backward_with_clamped_sigma(self):
        c = Param("c", np.full((2, 4), 3.0))  # zero spread -> floor clamp
        s = Param("s", RngStream(5).normal((2, 4)))

        def loss():
            out, _ = adain_with_cache(c.value, s.value)
            return float(np.sum(out ** 2))

        out, cache = adain_with_cache(c.value, s.value)
        d_c, d_s = adain_backward(2.0 * out, cache)
        assert relative_error(d_s, numeric_gradient(loss, s)) < 1e-6
        # constant rows under the clamp: d loss/d content is exactly mean-free zero
        # (finite differences are pure cancellation noise here, so assert the closed form)
        assert np.array_equal(d_c, np.zeros_like(d_c))


class TestContentEncoder:
    def _ce(self, rng=None, d=4, s=3, e=5):
        return ContentEncoder(d, d, s, e, rng=rng)

    def test_zero_parameters_zero_output(self):
        ce = self._ce()
        out = content_encode(ce, np.ones((2, 4)), np.ones((2, 4)), np.ones((2, 3)))
        assert np.array_equal(out, np.zeros((2, 5)))

    def test_output_width(self):
        rng = RngStream(1)
        ce = self._ce(rng)
        out = content_encode(ce, rng.normal((6, 4)), rng.normal((6, 4)), rng.normal((6, 3)))
        assert out.shape == (6, 5)

    def test_row_permutation_equivariance(self):
        rng = RngStream(2)
        ce = self._ce(rng)
        z, x, v = rng.normal((5, 4)), rng.normal((5, 4)), rng.normal((5, 3))
        out = content_encode(ce, z, x, v)
        perm = np.array([4, 2, 0, 1, 3])
        out_perm = content_encode(ce, z[perm], x[perm], v[perm])
        assert np.allclose(out[perm], out_perm)

    def test_mismatch_names_offending_slot(self):
        ce = self._ce()
        with pytest.raises(ValueError, match="semantic slot"):
            content_encode(ce, np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((2, 9)))
        with pytest.raises(ValueError, match="noise slot"):
            content_encode(ce, np.zeros((2, 1)), np.zeros((2, 4)), np.zeros((2, 3)))

    def test_gradients_match_finite_differences(self):
        rng = RngStream(23)
        ce = self._ce(rng, d=3, s=2, e=4)
        z, x, v = rng.normal((4, 3)), rng.normal((4, 3)), rng.normal((4, 2))
        t = rng.normal((4, 4))

        def loss_and_backward():
            zero_grads(ce.params())
            out = content_encode(ce, z, x, v)
            content_encode_backward(ce, 2.0 * (out - t))
            return float(np.sum((out - t) ** 2))

        check_gradients(loss_and_backward, ce.params())

    def test_input_gradients_match_finite_differences(self):
        rng = RngStream(29)
        ce = self._ce(rng, d=3, s=2, e=4)
        z = Param("z", rng.normal((2, 3)))
        x = Param("x", rng.normal((2, 3)))
        v = Param("v", rng.normal((2, 2)))

        out = content_encode(ce, z.value, x.value, v.value)
        d_z, d_x, d_v = content_encode_backward(ce, 2.0 * out, accumulate=False)

        def loss():
            return float(np.sum(content_encode(ce, z.value, x.value, v.value) ** 2))

        assert relative_error(d_z, numeric_gradient(loss, z)) < 1e-5
        assert relative_error(d_x, numeric_gradient(loss, x)) < 1e-5
        assert relative_error(d_v, numeric_gradient(loss, v)) < 1e-5


class TestFusionDecoder:
    def test_adain_postcondition_inside_fuse(self):
        rng = RngStream(31)
        fd = FusionDecoder(6, 4, rng=rng)
        ni, nc = rng.normal((10, 6)), rng.normal((10, 6))
        fuse(fd, ni, nc)
        mu_c = nc.mean(axis=1)
        sig_c = nc.std(axis=1)
        for block in fd.adain_outputs:
            assert np.abs(block.mean(axis=1) - mu_c).max() <= 1e-9
            assert np.abs(block.std(axis=1) - sig_c).max() <= 1e-9

    def test_zero_head_zero_output(self):
        rng = RngStream(33)
        fd = FusionDecoder(5, 3, rng=rng)
        for p in fd.head.params():
            p.value[...] = 0.0
        out = fuse(fd, rng.normal((4, 5)), rng.normal((4, 5)))
        assert np.array_equal(out, np.zeros((4, 3)))

    def test_swapping_inputs_changes_output(self):
        rng = RngStream(37)
        fd = FusionDecoder(5, 3, rng=rng)
        ni, nc = rng.normal((4, 5)), rng.normal((4, 5))
        assert not np.allclose(fuse(fd, ni, nc), fuse(fd, nc, ni))

    def test_gradients_match_finite_differences(self):
        rng = RngStream(41)
        fd = FusionDecoder(4, 3, rng=rng)
        ni, nc = rng.normal((3, 4)), rng.normal((3, 4))

        def loss_and_backward():
            zero_grads(fd.params())
            out = fd.forward(ni, nc)
            fd.backward(2.0 * out)
            return float(np.sum(out ** 2))

        check_gradients(loss_and_backward, fd.params())

    def test_input_gradients_match_finite_differences(self):
        rng = RngStream(43)
        fd = FusionDecoder(4, 2, rng=rng)
        ni = Param("ni", rng.normal((3, 4)))
        nc = Param("nc", rng.normal((3, 4)))

        out = fd.forward(ni.value, nc.value)
        d_ni, d_nc = fd.backward(2.0 * out, accumulate=False)

        def loss():
            return float(np.sum(fd.forward(ni.value, nc.value) ** 2))

        assert relative_error(d_ni, numeric_gradient(loss, ni)) < 1e-5
        assert relative_error(d_nc, numeric_gradient(loss, nc)) < 1e-5


class TestContentGenerator:
    def test_zero_initialized_generator_outputs_zero(self):
        gen = ContentGenerator(4, 3)
        out = generate_content(gen, np.ones((5, 4)), np.ones((5, 3)))
        assert np.array_equal(out, np.zeros((5, 4)))

    def test_output_shape(self):
        rng = RngStream(2)
        gen = ContentGenerator(4, 3, rng=rng)
        assert generate_content(gen, rng.normal((7, 4)), rng.normal((7, 3))).shape == (7, 4)

    def test_generator_gradients_match_finite_differences(self):
        rng = RngStream(47)
        gen = ContentGenerator(3, 2, hidden=6, rng=rng)
        z, v = rng.normal((4, 3)), rng.normal((4, 2))
        t = rng.normal((4, 3))

        def loss_and_backward():
            zero_grads(gen.gen_params())
            x = generate_content(gen, z, v)
            generate_content_backward(gen, 2.0 * (x - t))
            return float(np.sum((x - t) ** 2))

        check_gradients(loss_and_backward, gen.gen_params())


class TestWganLosses:
    def _setup(self, seed=51, d=4, s=3, n=6, hidden=8):
        rng = RngStream(seed)
        gen = ContentGenerator(d, s, hidden=hidden, rng=rng)
        real, fake, v = rng.normal((n, d)), rng.normal((n, d)), rng.normal((n, s))
        return gen, real, fake, v

    def test_zero_critic_gives_pure_penalty(self):
        gen, real, fake, v = self._setup()
        for p in gen.critic_params():
            p.value[...] = 0.0
        critic_loss, gen_loss = wgan_losses(gen, real, fake, v, penalty_weight=10.0)
        assert critic_loss == pytest.approx(10.0)
        assert gen_loss == 0.0

    def test_identical_batches_leave_only_penalty(self):
        gen, real, _, v = self._setup()
        critic_loss, _ = wgan_losses(gen, real, real.copy(), v, penalty_weight=0.0)
        assert critic_loss == pytest.approx(0.0, abs=1e-12)

    def test_generator_loss_tracks_critic_score(self):
        gen, real, fake, v = self._setup()
        _, g1 = wgan_losses(gen, real, fake, v)
        _, g2 = wgan_losses(gen, real, fake + 0.5, v)
        s1 = float(np.mean(gen.critic.forward(np.concatenate([fake, v], axis=1))))
        s2 = float(np.mean(gen.critic.forward(np.concatenate([fake + 0.5, v], axis=1))))
        assert (g2 < g1) == (s2 > s1)

    def test_critic_gradients_with_penalty_match_finite_differences(self):
        gen, real, fake, v = self._setup(seed=53)

        def loss_and_backward():
            zero_grads(gen.critic_params())
            return critic_loss_backward(gen, real, fake, v, penalty_weight=10.0, rng=None)

        check_gradients(loss_and_backward, gen.critic_params())

    def test_generator_side_gradient_matches_finite_differences(self):
        gen, _, fake, v = self._setup(seed=59)
        fp = Param("fake", fake.copy())

        _, d_fake = generator_adv_backward(gen, fp.value, v)

        def loss():
            loss_val, _ = generator_adv_backward(gen, fp.value, v)
            return loss_val

        assert relative_error(d_fake, numeric_gradient(loss, fp)) < 1e-5

    def test_batch_size_mismatch_rejected(self):
        gen, real, fake, v = self._setup()
        with pytest.raises(ValueError, match="batch sizes differ"):
            wgan_losses(gen, real[:3], fake, v)


class TestClassifierAlignment:
    def _head(self, biases):
        c = len(biases)
        return ClassifierHead(tuple(f"c{i}" for i in range(c)), np.zeros((c, 2)), np.array(biases))

    def test_uniform_prediction_gives_log_classes(self):
        head = self._head([0.0, 0.0, 0.0, 0.0])
        loss = classifier_alignment_loss(head, np.zeros((3, 2)), ["c0", "c1", "c2"])
        assert loss == pytest.approx(math.log(4.0))

    def test_confident_correct_prediction_near_zero(self):
        head = self._head([500.0, 0.0])
        loss = classifier_alignment_loss(head, np.zeros((2, 2)), ["c0", "c0"])
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_point_seven_probability(self):
        head = self._head([math.log(0.7), math.log(0.1), math.log(0.1), math.log(0.1)])
        loss = classifier_alignment_loss(head, np.zeros((1, 2)), ["c0"])
        assert loss == pytest.approx(-math.log(0.7), abs=1e-12)
        assert loss == pytest.approx(0.35667494393873245, abs=1e-12)

    def test_unknown_label_rejected(self):
        head = self._head([0.0, 0.0])
        with pytest.raises(ValueError, match="not in the head"):
            classifier_alignment_loss(head, np.zeros((1, 2)), ["mystery"])

    def test_feature_gradient_matches_finite_differences(self):
        rng = RngStream(61)
        head = ClassifierHead(("a", "b", "c"), rng.normal((3, 4)), rng.normal((3,)))
        x = Param("x", rng.normal((5, 4)))
        labels = ["a", "c", "b", "a", "c"]

        _, d_x = classifier_alignment_grad(head, x.value, labels)
        fd = numeric_gradient(lambda: classifier_alignment_loss(head, x.value, labels), x)
        assert relative_error(d_x, fd) < 1e-6


class TestSemanticDiverging:
    def test_collapse_is_maximally_penalized(self):
        x = np.ones((2, 3))
        z1, z2 = np.zeros((2, 3)), np.ones((2, 3))
        loss = semantic_diverging_loss(x, x.copy(), z1, z2, floor=1e-6)
        assert loss == pytest.approx(3.0 / 1e-6)

    def test_unit_ratio(self):
        x1, x2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        z1, z2 = np.array([[2.0, 0.0]]), np.array([[0.0, 0.0]])
        loss = semantic_diverging_loss(x1, x2, z1, z2)
        assert loss == pytest.approx(1.0, rel=1e-5)

    def test_doubling_divergence_halves_loss(self):
        z1, z2 = np.array([[1.0, 1.0]]), np.array([[0.0, 0.0]])
        x1, x2 = np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])
        base = semantic_diverging_loss(x1, x2, z1, z2)
        halved = semantic_diverging_loss(2.0 * x1, 2.0 * x2, z1, z2)
        assert halved == pytest.approx(base / 2.0, rel=1e-5)

    def test_gradients_match_finite_differences(self):
        rng = RngStream(67)
        x1 = Param("x1", rng.normal((3, 4)))
        x2 = Param("x2", rng.normal((3, 4)))
        z1, z2 = rng.normal((3, 4)), rng.normal((3, 4))

        _, d_x1, d_x2 = semantic_diverging_grad(x1.value, x2.value, z1, z2)
        fd1 = numeric_gradient(lambda: semantic_diverging_loss(x1.value, x2.value, z1, z2), x1)
        fd2 = numeric_gradient(lambda: semantic_diverging_loss(x1.value, x2.value, z1, z2), x2)
        assert relative_error(d_x1, fd1) < 1e-5
        assert relative_error(d_x2, fd2) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_adain_statistics_property(seed):
    rng = RngStream(seed)
    content = rng.normal((8, 6)) * 3.0
    style = rng.normal((8, 6)) * 0.5 + 2.0
    out = adain(content, style)
    assert np.abs(out.mean(axis=1) - style.mean(axis=1)).max() <= 1e-9
    assert np.abs(out.std(axis=1) - style.std(axis=1)).max() <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_losses_batch_permutation_invariant(seed):
    rng = RngStream(seed)
    gen = ContentGenerator(3, 2, hidden=6, rng=rng)
    real, fake, v = rng.normal((5, 3)), rng.normal((5, 3)), rng.normal((5, 2))
    perm = RngStream(seed + 1).permutation(5)
    a = wgan_losses(gen, real, fake, v, rng=None)
    b = wgan_losses(gen, real[perm], fake[perm], v[perm], rng=None)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    assert a[1] == pytest.approx(b[1], rel=1e-12)
