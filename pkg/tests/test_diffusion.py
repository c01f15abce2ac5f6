"""Diffusion process: schedule arithmetic, forward/reverse steps, denoiser bank, loss."""

import math

import numpy as np
import pytest

from seeds.nn import check_gradients, zero_grads
from seeds.rng import RngStream
from seeds.diffusion import (
    DenoiserBank, NoiseSchedule, build_schedule, diffuse_closed, diffuse_step, invert_closed,
    predict_mu, predict_noise, reverse_step, rfddm_loss, rfddm_loss_all_timesteps,
    rfddm_loss_backward, sample, timestep_embedding,
)

PAPER_SCHEDULE = dict(T=100, beta_start=8.5e-4, beta_end=1.2e-2)


def paper_schedule():
    return build_schedule(**PAPER_SCHEDULE)


def tiny_bank(rng=None, T=4, d=3, s=2, e=4, mode="per-timestep"):
    return DenoiserBank(T, d, s, e, mode=mode, rng=rng)


def random_condition(rng, n, d, s):
    return (rng.normal((n, d)), rng.normal((n, s)), rng.normal((n, s)))


class TestSchedule:
    def test_linear_interpolation_midpoint(self):
        sched = paper_schedule()
        expected = 8.5e-4 + (49.0 / 99.0) * (1.2e-2 - 8.5e-4)
        assert sched.beta(50) == pytest.approx(expected, abs=1e-18)
        assert sched.beta(50) == pytest.approx(6.368686868686869e-3, abs=1e-15)
        assert sched.beta(1) == 8.5e-4
        assert sched.beta(100) == 1.2e-2

    def test_single_step_degenerate(self):
        sched = build_schedule(1, 0.01, 0.01)
        assert sched.beta(1) == 0.01
        with pytest.raises(ValueError, match="single-step"):
            build_schedule(1, 0.01, 0.02)

    def test_alpha_bar_strictly_decreasing(self):
        sched = paper_schedule()
        assert sched.alpha_bar(100) < sched.alpha_bar(1) < sched.alpha_bar(0) == 1.0
        assert np.all(np.diff(sched.alpha_bars) < 0.0)

    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            build_schedule(10, 0.0, 0.1)
        with pytest.raises(ValueError):
            build_schedule(10, 0.2, 0.1)
        with pytest.raises(ValueError):
            build_schedule(10, 0.1, 1.0)

    def test_out_of_range_t_rejected(self):
        sched = paper_schedule()
        with pytest.raises(ValueError, match="outside"):
            sched.beta(0)
        with pytest.raises(ValueError, match="outside"):
            sched.alpha_bar(101)


class TestForwardProcess:
    def test_tiny_beta_keeps_state(self):
        sched = build_schedule(1, 1e-12, 1e-12)
        x = np.array([1.0, -2.0])
        out = diffuse_step(x, 1, np.array([5.0, 5.0]), sched)
        assert np.allclose(out, x, atol=1e-5)

    def test_beta_near_one_returns_noise(self):
        sched = build_schedule(1, 1.0 - 1e-12, 1.0 - 1e-12)
        z = np.array([0.25, -0.5])
        out = diffuse_step(np.array([100.0, 100.0]), 1, z, sched)
        assert np.allclose(out, z, atol=1e-3)

    def test_hand_computed_step(self):
        sched = NoiseSchedule(1, np.array([0.19]))
        out = diffuse_step(np.array([1.0, 0.0]), 1, np.array([0.0, 1.0]), sched)
        assert out == pytest.approx([0.9, 0.4358898943540674], abs=1e-12)

    def test_closed_form_t0_identity(self):
        sched = paper_schedule()
        x0 = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(diffuse_closed(x0, 0, np.zeros(3), sched), x0)

    def test_closed_form_matches_single_step(self):
        sched = paper_schedule()
        x0 = RngStream(1).normal((4, 5))
        z = RngStream(2).normal((4, 5))
        assert np.allclose(diffuse_closed(x0, 1, z, sched), diffuse_step(x0, 1, z, sched),
                           atol=1e-14)

    def test_terminal_variance_matches_marginal(self):
        sched = paper_schedule()
        rng = RngStream(11)
        draws = diffuse_closed(np.zeros((10_000, 8)), 100, rng.normal((10_000, 8)), sched)
        target = 1.0 - sched.alpha_bar(100)
        assert np.all(np.abs(draws.var(axis=0) - target) < 0.05 * target)

    def test_step_composition_matches_closed_form_moments(self):
        sched = paper_schedule()
        x0_row = RngStream(3).normal((4,))
        n = 20_000
        for t in (1, 5, 50):
            rng_a, rng_b = RngStream(100 + t), RngStream(200 + t)
            x = np.tile(x0_row, (n, 1))
            for step_t in range(1, t + 1):
                x = diffuse_step(x, step_t, rng_a.normal((n, 4)), sched)
            closed = diffuse_closed(np.tile(x0_row, (n, 1)), t, rng_b.normal((n, 4)), sched)
            var = 1.0 - sched.alpha_bar(t)
            mean_tol = 3.0 * math.sqrt(2.0 * var / n)
            var_tol = 3.0 * var * math.sqrt(2.0 / (n - 1)) * 2.0
            assert np.all(np.abs(x.mean(axis=0) - closed.mean(axis=0)) < mean_tol)
            assert np.all(np.abs(x.var(axis=0) - closed.var(axis=0)) < var_tol)


class TestPredictMu:
    def _sched_with(self, alpha_t=0.99, alpha_bar_t=0.9):
        beta1 = 1.0 - alpha_bar_t / alpha_t
        return NoiseSchedule(2, np.array([beta1, 1.0 - alpha_t]))

    def test_zero_noise_rescales_state(self):
        sched = paper_schedule()
        x = np.array([[2.0, -4.0]])
        out = predict_mu(x, 3, np.zeros((1, 2)), sched)
        assert np.allclose(out, x / math.sqrt(sched.alpha(3)), atol=1e-15)

    def test_hand_computed_value(self):
        sched = self._sched_with()
        assert sched.alpha(2) == pytest.approx(0.99)
        assert sched.alpha_bar(2) == pytest.approx(0.9)
        out = predict_mu(np.array([[1.0]]), 2, np.array([[0.5]]), sched)
        expected = (1.0 - 0.01 / math.sqrt(0.1) * 0.5) / math.sqrt(0.99)
        assert out[0, 0] == pytest.approx(expected, abs=1e-15)
        assert out[0, 0] == pytest.approx(0.98915, abs=5e-6)

    def test_linearity(self):
        sched = paper_schedule()
        rng = RngStream(5)
        x, z = rng.normal((3, 4)), rng.normal((3, 4))
        assert np.allclose(predict_mu(2 * x, 7, 2 * z, sched), 2 * predict_mu(x, 7, z, sched),
                           atol=1e-14)


class TestDenoiserBank:
    def test_zero_bank_predicts_zero(self):
        bank = tiny_bank()
        rng = RngStream(1)
        cond = random_condition(rng, 5, 3, 2)
        out = predict_noise(bank, rng.normal((5, 3)), 2, cond)
        assert np.array_equal(out, np.zeros((5, 3)))

    @pytest.mark.parametrize("mode", ["per-timestep", "shared"])
    def test_output_width_for_all_timesteps(self, mode):
        rng = RngStream(2)
        bank = tiny_bank(rng, mode=mode)
        cond = random_condition(rng, 4, 3, 2)
        x = rng.normal((4, 3))
        for t in range(1, 5):
            assert bank.predict(x, t, cond).shape == (4, 3)

    def test_per_timestep_isolation(self):
        rng = RngStream(3)
        bank = tiny_bank(rng)
        cond = random_condition(rng, 4, 3, 2)
        x = rng.normal((4, 3))
        before = bank.predict(x, 2, cond)
        for p in bank.set_for(3).params():
            p.value += 17.0
        assert np.array_equal(bank.predict(x, 2, cond), before)

    def test_shared_mode_distinguishes_timesteps(self):
        rng = RngStream(4)
        bank = tiny_bank(rng, mode="shared")
        cond = random_condition(rng, 4, 3, 2)
        x = rng.normal((4, 3))
        assert not np.allclose(bank.predict(x, 1, cond), bank.predict(x, 4, cond))

    def test_condition_shape_mismatch_named(self):
        bank = tiny_bank()
        with pytest.raises(ValueError, match="ingredient semantics"):
            bank.predict(np.zeros((2, 3)), 1, (np.zeros((2, 3)), np.zeros((2, 5)), np.zeros((2, 2))))

    def test_out_of_range_timestep(self):
        bank = tiny_bank()
        cond = (np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(ValueError, match="outside"):
            bank.predict(np.zeros((1, 3)), 5, cond)

    def test_timestep_embedding_shape_and_range(self):
        emb = timestep_embedding(13, 32)
        assert emb.shape == (32,)
        assert np.all(np.abs(emb) <= 1.0)


class TestReverseProcess:
    def test_final_step_deterministic(self):
        rng = RngStream(6)
        bank = tiny_bank(rng)
        sched = build_schedule(4, 1e-3, 1e-2)
        cond = random_condition(rng, 3, 3, 2)
        x = rng.normal((3, 3))
        a = reverse_step(x, 1, cond, bank, sched, RngStream(1))
        b = reverse_step(x, 1, cond, bank, sched, RngStream(2))
        assert np.array_equal(a, b)
        z_hat = bank.predict(x, 1, cond)
        assert np.allclose(a, predict_mu(x, 1, z_hat, sched), atol=1e-15)

    def test_algebraic_inversion_recovers_clean_state(self):
        sched = paper_schedule()
        rng = RngStream(7)
        x0 = rng.normal((5, 4))
        z = rng.normal((5, 4))
        x_t = diffuse_closed(x0, 60, z, sched)
        assert np.allclose(invert_closed(x_t, 60, z, sched), x0, atol=1e-12)

    def test_same_rng_state_same_step(self):
        rng = RngStream(8)
        bank = tiny_bank(rng)
        sched = build_schedule(4, 1e-3, 1e-2)
        cond = random_condition(rng, 2, 3, 2)
        x = rng.normal((2, 3))
        a = reverse_step(x, 3, cond, bank, sched, RngStream(55))
        b = reverse_step(x, 3, cond, bank, sched, RngStream(55))
        assert np.array_equal(a, b)
        assert a.shape == (2, 3)

    def test_untrained_bank_chain_is_centered(self):
        sched = paper_schedule()
        bank = DenoiserBank(100, 4, 2, 4)  # zero parameters
        cond = (np.zeros(4), np.zeros(2), np.zeros(2))
        out = sample(bank, cond, sched, RngStream(9), 2000)
        assert out.shape == (2000, 4)
        assert np.all(np.abs(out.mean(axis=0)) < 0.1)

    def test_sample_row_count(self):
        rng = RngStream(10)
        bank = tiny_bank(rng)
        sched = build_schedule(4, 1e-3, 1e-2)
        cond = (np.zeros(3), np.zeros(2), np.zeros(2))
        assert sample(bank, cond, sched, rng, 7).shape == (7, 3)


class _OracleBank:
    """Returns the exact noise that produced x_t (computable from the cached call)."""

    def __init__(self, true_z, ts):
        self.true_z = true_z
        self.ts = ts

    def predict(self, x_t, t, cond):
        idx = np.flatnonzero(self.ts == t)
        return self.true_z[idx]


class TestRfddmLoss:
    def test_oracle_predictor_zero_loss(self):
        sched = paper_schedule()
        rng = RngStream(11)
        clean = rng.normal((32, 4))
        cond = random_condition(rng, 32, 4, 2)
        ts = rng.integers(1, 101, (32,))
        zs = rng.normal((32, 4))
        loss = rfddm_loss(clean, cond, _OracleBank(zs, ts), sched, rng, ts=ts, zs=zs)
        assert loss == pytest.approx(0.0, abs=1e-24)

    def test_zero_predictor_loss_near_dimension(self):
        sched = paper_schedule()
        rng = RngStream(12)
        d = 4
        clean = np.zeros((10_000, d))
        bank = DenoiserBank(100, d, 2, 4)
        cond = (np.zeros((10_000, d)), np.zeros((10_000, 2)), np.zeros((10_000, 2)))
        loss = rfddm_loss(clean, cond, bank, sched, rng)
        assert abs(loss - d) < 0.05 * d

    def test_loss_nonnegative(self):
        sched = build_schedule(4, 1e-3, 1e-2)
        rng = RngStream(13)
        bank = tiny_bank(RngStream(14))
        clean = rng.normal((8, 3))
        cond = random_condition(rng, 8, 3, 2)
        assert rfddm_loss(clean, cond, bank, sched, rng) >= 0.0

    def test_all_timesteps_flag_matches_average_scale(self):
        sched = build_schedule(3, 1e-3, 1e-3)
        rng = RngStream(15)
        d = 3
        clean = np.zeros((500, d))
        bank = DenoiserBank(3, d, 2, 4)
        cond = (np.zeros((500, d)), np.zeros((500, 2)), np.zeros((500, 2)))
        total = rfddm_loss_all_timesteps(clean, cond, bank, sched, rng)
        # zero predictor: each timestep term is about d, so the sum is about T*d
        assert abs(total - 3 * d) < 0.15 * 3 * d

    @pytest.mark.parametrize("mode", ["per-timestep", "shared"])
    def test_bank_gradients_match_finite_differences(self, mode):
        rng = RngStream(16)
        bank = tiny_bank(rng, T=3, d=3, s=2, e=4, mode=mode)
        sched = build_schedule(3, 1e-3, 1e-2)
        clean = rng.normal((6, 3))
        cond = random_condition(rng, 6, 3, 2)
        ts = np.array([1, 2, 3, 1, 2, 3], dtype=np.intp)
        zs = RngStream(17).normal((6, 3))

        def loss_and_backward():
            zero_grads(bank.params())
            return rfddm_loss_backward(clean, cond, bank, sched, RngStream(0), ts=ts, zs=zs)

        check_gradients(loss_and_backward, bank.params())

    def test_gradient_isolation_across_timesteps(self):
        rng = RngStream(18)
        bank = tiny_bank(rng, T=4, d=3, s=2, e=4)
        sched = build_schedule(4, 1e-3, 1e-2)
        clean = rng.normal((5, 3))
        cond = random_condition(rng, 5, 3, 2)
        zero_grads(bank.params())
        rfddm_loss_backward(clean, cond, bank, sched, RngStream(19),
                            ts=np.full(5, 2, dtype=np.intp))
        for t in (1, 3, 4):
            for p in bank.set_for(t).params():
                assert np.array_equal(p.grad, np.zeros_like(p.grad))
        assert any(np.any(p.grad != 0) for p in bank.set_for(2).params())
