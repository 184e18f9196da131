"""Tests for pixel-space and adaptive illusion attacks"""

import numpy as np
import pytest

from illusion_guard.core.exceptions import ConfigurationError
from illusion_guard.engine.attack import (
    AttackResult,
    adaptive_pgd,
    attack_cost_record,
    cosine_at_first_flip,
    measure_attack_cost,
    pgd_illusion,
)
from illusion_guard.engine.encoder import grad_cosine_wrt_input
from illusion_guard.engine.reconstruct import (
    AutoencoderReconstructor,
    DiffusionPurifier,
    PcaBasis,
    VariationalReconstructor,
)
from illusion_guard.engine.transforms import PixelTransform
from illusion_guard.schemas.config import AttackConfig, TransformSpec


class TestPgdIllusion:
    """Test the undefended pixel-space attack"""

    def test_hand_computed_step(self, identity_encoder, axis_bank):
        """Test one signed step from (0, 1) toward e1"""
        cfg = AttackConfig(linf_budget=0.3, step_size=0.3, max_iters=1)
        result = pgd_illusion(np.array([0.0, 1.0]), 0, identity_encoder, axis_bank, cfg)
        np.testing.assert_allclose(result.perturbed, [0.3, 1.0])
        assert result.best_cos == pytest.approx(0.3 / np.sqrt(1.09), abs=1e-12)
        assert result.loops_used == 1
        assert not result.success

    def test_zero_budget(self, linear_encoder, dataset):
        """Test that epsilon 0 leaves the input unchanged"""
        x = dataset.eval.pixels[0]
        cfg = AttackConfig(linf_budget=0.0, max_iters=20)
        result = pgd_illusion(x, 1, linear_encoder, dataset.bank, cfg)
        np.testing.assert_array_equal(result.delta, np.zeros(64))
        u = linear_encoder.forward(x)
        target = dataset.bank.embedding(1)
        expected = u @ target / (np.linalg.norm(u) * np.linalg.norm(target))
        assert result.best_cos == pytest.approx(expected)
        assert result.success == (expected >= cfg.cos_threshold)
        assert result.loops_used == 1

    def test_threshold_minus_one_succeeds_immediately(self, linear_encoder, dataset):
        """Test that every attack succeeds at loop 1 under threshold -1"""
        cfg = AttackConfig(cos_threshold=-1.0, max_iters=20)
        for x in dataset.eval.pixels:
            result = pgd_illusion(x, 0, linear_encoder, dataset.bank, cfg)
            assert result.success
            assert result.loops_used == 1

    @pytest.mark.parametrize("eps", [0.01, 0.05, 0.2])
    def test_feasible_and_best_iterate(self, linear_encoder, dataset, eps):
        """Test the L-infinity ball, the unit box and best-iterate bookkeeping"""
        cfg = AttackConfig(linf_budget=eps, max_iters=30, cos_threshold=1.0)
        for index, x in enumerate(dataset.eval.pixels[:4]):
            result = pgd_illusion(x, (index + 1) % 4, linear_encoder, dataset.bank, cfg)
            assert np.max(np.abs(result.delta)) <= eps + 1e-12
            assert result.perturbed.min() >= 0.0
            assert result.perturbed.max() <= 1.0
            np.testing.assert_array_equal(result.perturbed, np.clip(x + result.delta, 0, 1))
            assert result.best_cos == pytest.approx(float(np.max(result.cos_trajectory)))

    def test_attack_raises_target_cosine(self, linear_encoder, dataset):
        """Test that the best cosine is above the clean cosine"""
        x = dataset.eval.pixels[0]
        cfg = AttackConfig(linf_budget=0.1, max_iters=50, cos_threshold=1.0)
        result = pgd_illusion(x, 3, linear_encoder, dataset.bank, cfg)
        u = linear_encoder.forward(x)
        target = dataset.bank.embedding(3)
        clean = u @ target / (np.linalg.norm(u) * np.linalg.norm(target))
        assert result.best_cos > clean

    def test_reproducible(self, linear_encoder, dataset):
        """Test that two runs are identical"""
        cfg = AttackConfig(max_iters=25)
        x = dataset.eval.pixels[6]
        first = pgd_illusion(x, 0, linear_encoder, dataset.bank, cfg)
        second = pgd_illusion(x, 0, linear_encoder, dataset.bank, cfg)
        np.testing.assert_array_equal(first.delta, second.delta)
        np.testing.assert_array_equal(first.cos_trajectory, second.cos_trajectory)


class TestCosineAtFirstFlip:
    """Test the cosine at the first target flip"""

    def test_hand_computed_flip(self, identity_encoder, axis_bank):
        """Test that the prediction flips at (0.6, 0.4) on the third step"""
        cfg = AttackConfig(linf_budget=0.6, step_size=0.3, max_iters=10)
        value = cosine_at_first_flip(np.array([0.0, 1.0]), 0, identity_encoder, axis_bank, cfg)
        assert value == pytest.approx(0.6 / np.sqrt(0.52))

    def test_never_flips(self, identity_encoder, axis_bank):
        """Test that a budget too small to flip gives None"""
        cfg = AttackConfig(linf_budget=0.3, step_size=0.3, max_iters=10)
        x = np.array([0.0, 1.0])
        assert cosine_at_first_flip(x, 0, identity_encoder, axis_bank, cfg) is None

    def test_already_target(self, identity_encoder, axis_bank):
        """Test an input already classified as the target"""
        cfg = AttackConfig(linf_budget=0.1)
        value = cosine_at_first_flip(np.array([3.0, 4.0]), 1, identity_encoder, axis_bank, cfg)
        assert value == pytest.approx(0.8)


class TestAdaptivePgd:
    """Test the attack through a sanitizer"""

    def test_zero_noise_vae_matches_autoencoder(self, linear_encoder, dataset, basis):
        """Test that VAE at sigma 0 with one draw follows the AE trajectory"""
        cfg = AttackConfig(max_iters=15, eot_samples=1, cos_threshold=1.0)
        x = dataset.eval.pixels[1]
        ae = adaptive_pgd(
            x, 2, linear_encoder, dataset.bank, AutoencoderReconstructor(basis), cfg, 41
        )
        vae = adaptive_pgd(
            x, 2, linear_encoder, dataset.bank, VariationalReconstructor(basis, 0.0), cfg, 41
        )
        np.testing.assert_array_equal(ae.cos_trajectory, vae.cos_trajectory)
        np.testing.assert_array_equal(ae.delta, vae.delta)
        assert ae.loops_used == vae.loops_used

    def test_on_manifold_orthogonal_target_makes_no_progress(self, identity_encoder, axis_bank):
        """Test that a target orthogonal to the manifold's image gets a zero gradient"""
        basis = PcaBasis(
            mean=np.zeros(2),
            components=np.array([[1.0], [0.0]]),
            explained_variance=np.array([1.0]),
            total_variance=1.0,
        )
        cfg = AttackConfig(linf_budget=0.2, max_iters=10)
        result = adaptive_pgd(
            np.array([0.5, 0.0]),
            1,
            identity_encoder,
            axis_bank,
            AutoencoderReconstructor(basis),
            cfg,
        )
        np.testing.assert_array_equal(result.delta, np.zeros(2))
        assert result.best_cos == pytest.approx(0.0)
        assert not result.success
        assert result.stagnated
        assert result.loops_used == 1

    def test_transform_is_rejected(self, linear_encoder, dataset):
        """Test that pixel transforms are not adaptive targets"""
        recon = PixelTransform(TransformSpec(name="gaussian_blur"), (8, 8))
        with pytest.raises(ConfigurationError):
            adaptive_pgd(
                dataset.eval.pixels[0], 1, linear_encoder, dataset.bank, recon, AttackConfig()
            )

    def test_stochastic_attack_is_reproducible(self, linear_encoder, dataset, basis):
        """Test that fixed EOT streams give identical runs"""
        cfg = AttackConfig(max_iters=10, eot_samples=3)
        vae = VariationalReconstructor(basis, 0.15)
        x = dataset.eval.pixels[2]
        first = adaptive_pgd(x, 0, linear_encoder, dataset.bank, vae, cfg, 42)
        second = adaptive_pgd(x, 0, linear_encoder, dataset.bank, vae, cfg, 42)
        np.testing.assert_array_equal(first.delta, second.delta)
        assert np.max(np.abs(first.delta)) <= cfg.linf_budget + 1e-12

    @pytest.mark.parametrize("mode", ["straight_through", "exact_jacobian"])
    def test_diffusion_gradient_modes(self, linear_encoder, dataset, mode):
        """Test that both purifier gradient modes give feasible attacks"""
        cfg = AttackConfig(max_iters=3, eot_samples=2, dm_gradient_mode=mode)
        dm = DiffusionPurifier(dataset.mixture, 0.3, 5)
        result = adaptive_pgd(dataset.eval.pixels[4], 1, linear_encoder, dataset.bank, dm, cfg)
        assert result.loops_used <= 3
        assert np.max(np.abs(result.delta)) <= cfg.linf_budget + 1e-12
        assert -1.0 <= result.best_cos <= 1.0

    def test_eot_gradient_is_stable(self, linear_encoder, dataset, basis):
        """Test that two independent 1000-draw gradient averages agree in direction"""
        vae = VariationalReconstructor(basis, 0.15)
        x = dataset.eval.pixels[0]
        target = dataset.bank.embedding(2)

        def averaged(seeds):
            total = np.zeros(64)
            for seed in seeds:
                grad = grad_cosine_wrt_input(linear_encoder, vae.reconstruct(x, seed), target)
                total += vae.vjp(x, grad, seed)
            return total / len(seeds)

        first = averaged(range(1000))
        second = averaged(range(1000, 3000))
        cos = first @ second / (np.linalg.norm(first) * np.linalg.norm(second))
        assert cos >= 0.95

    def test_stochastic_zero_gradient_stagnates_after_window(self, identity_encoder, axis_bank):
        """Test that a noisy sanitizer with no useful gradient stops once the window fills"""
        basis = PcaBasis(
            mean=np.zeros(2),
            components=np.array([[1.0], [0.0]]),
            explained_variance=np.array([1.0]),
            total_variance=1.0,
        )
        cfg = AttackConfig(linf_budget=0.2, max_iters=20, eot_samples=2, stagnation_window=3)
        vae = VariationalReconstructor(basis, 0.1)
        result = adaptive_pgd(np.array([0.5, 0.0]), 1, identity_encoder, axis_bank, vae, cfg)
        assert result.stagnated
        assert result.loops_used == 3
        record = attack_cost_record(0, 1, result, cfg, defended=True)
        assert record.stagnated
        assert record.loops_used == cfg.loop_budget

    def test_progress_is_not_stagnation(self, linear_encoder, dataset):
        """Test that a moving attack never reports stagnation"""
        cfg = AttackConfig(max_iters=5, stagnation_window=1, cos_threshold=1.0)
        result = pgd_illusion(dataset.eval.pixels[0], 2, linear_encoder, dataset.bank, cfg)
        assert not result.stagnated

    def test_diffusion_draws_batch_like_single_draws(self, dataset):
        """Test that batched purification matches purifying each seed alone"""
        dm = DiffusionPurifier(dataset.mixture, 0.3, 5, stochastic=True)
        x = dataset.eval.pixels[3]
        batch = dm.reconstruct_many(x, [11, 12, 13])
        singles = np.vstack([dm.reconstruct(x, seed) for seed in (11, 12, 13)])
        np.testing.assert_allclose(batch.outputs, singles, atol=1e-12)
        assert batch.draw_seeds == (11, 12, 13)

    def test_batched_diffusion_attack_is_reproducible(self, linear_encoder, dataset):
        """Test that the EOT attack through the purifier repeats exactly"""
        cfg = AttackConfig(max_iters=3, eot_samples=3)
        dm = DiffusionPurifier(dataset.mixture, 0.3, 4, stochastic=True)
        x = dataset.eval.pixels[5]
        first = adaptive_pgd(x, 0, linear_encoder, dataset.bank, dm, cfg, 45)
        second = adaptive_pgd(x, 0, linear_encoder, dataset.bank, dm, cfg, 45)
        np.testing.assert_array_equal(first.delta, second.delta)
        np.testing.assert_array_equal(first.cos_trajectory, second.cos_trajectory)

class TestAttackCost:
    """Test loop counting"""

    def test_threshold_minus_one(self, linear_encoder, dataset):
        """Test that every sample costs one loop"""
        cfg = AttackConfig(cos_threshold=-1.0, loop_budget=10)
        records = measure_attack_cost(
            dataset.eval.head(4), [1, 2, 3, 0], linear_encoder, dataset.bank, None, cfg
        )
        assert [r.loops_used for r in records] == [1, 1, 1, 1]
        assert all(r.success and not r.defended for r in records)

    def test_unreachable_threshold_charges_budget(self, linear_encoder, dataset, basis):
        """Test that failures are charged the full loop budget"""
        cfg = AttackConfig(cos_threshold=1.0, loop_budget=5, eot_samples=1)
        samples = dataset.eval.head(3)
        for recon in (None, VariationalReconstructor(basis, 0.15)):
            records = measure_attack_cost(
                samples, [1, 2, 3], linear_encoder, dataset.bank, recon, cfg
            )
            assert [r.loops_used for r in records] == [5, 5, 5]
            assert not any(r.success for r in records)
            assert all(r.defended == (recon is not None) for r in records)
            assert [r.sample_id for r in records] == list(samples.sample_ids)

    def test_record_of_success_keeps_loops(self):
        """Test that a successful result reports its own loop count"""
        result = AttackResult(
            delta=np.zeros(2),
            perturbed=np.zeros(2),
            best_cos=0.9,
            cos_trajectory=np.array([0.5, 0.9]),
            loops_used=2,
            success=True,
        )
        record = attack_cost_record(7, 1, result, AttackConfig(loop_budget=50), defended=True)
        assert record.loops_used == 2
        assert record.final_cos == 0.9

    def test_custom_mapper_sees_every_pair_in_order(self, linear_encoder, dataset):
        """Test that the per-sample attack runs through the supplied mapper"""
        cfg = AttackConfig(cos_threshold=-1.0, loop_budget=10)
        samples = dataset.eval.head(3)
        seen = []

        def mapper(fn, items):
            seen.extend(sample.sample_id for sample, _ in items)
            return [fn(item) for item in reversed(items)][::-1]

        records = measure_attack_cost(
            samples, [1, 2, 3], linear_encoder, dataset.bank, None, cfg, mapper=mapper
        )
        assert seen == list(samples.sample_ids)
        assert [r.sample_id for r in records] == list(samples.sample_ids)
        assert [r.target_label for r in records] == [1, 2, 3]
        assert not any(r.stagnated for r in records)
