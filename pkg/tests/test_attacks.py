"""Attack generators: constraint satisfaction, reductions between methods,
the input-diversity adjoint, and the piecewise-constant baselines."""

import numpy as np
import pytest

from rhp.attacks import (
    AttackConfig,
    AttackError,
    apply_universal,
    check_linf,
    dim,
    expand_cellwise,
    fgsm,
    mim,
    op_baseline,
    rhp_attack,
    rp_baseline,
    _diverse_transform,
)
from rhp.partition import RegionSplitSpec, build_partition
from rhp.transformer import init_transformer


@pytest.fixture
def batch(small_eval_set):
    return small_eval_set.images[:8], small_eval_set.labels[:8]


class TestConfig:
    def test_eps_conversion(self):
        assert AttackConfig(epsilon=16.0).eps == pytest.approx(16 / 255)

    def test_validation(self):
        with pytest.raises(AttackError):
            AttackConfig(epsilon=-1.0)
        with pytest.raises(AttackError):
            AttackConfig(steps=0)


class TestCheckLinf:
    def test_passes_inside_ball(self, rng):
        clean = rng.uniform(size=(2, 3, 4, 4))
        adv = np.clip(clean + 15 / 255, 0, 1)
        check_linf(clean, adv, 16.0)

    def test_raises_outside_ball(self, rng):
        clean = rng.uniform(size=(2, 3, 4, 4))
        with pytest.raises(AttackError, match="L-inf"):
            check_linf(clean, clean + 20 / 255, 16.0)


class TestFgsm:
    def test_constraint_and_range(self, small_classifier, batch):
        x, y = batch
        adv = fgsm(small_classifier, x, y, AttackConfig(epsilon=16.0))
        check_linf(x, adv, 16.0)
        assert adv.min() >= 0.0 and adv.max() <= 1.0

    def test_moves_along_gradient_sign(self, small_classifier, batch):
        x, y = batch
        cfg = AttackConfig(epsilon=16.0)
        adv = fgsm(small_classifier, x, y, cfg)
        from rhp.models import input_gradient
        g = input_gradient(small_classifier, x, y)
        interior = (x > cfg.eps) & (x < 1 - cfg.eps) & (g != 0)
        np.testing.assert_allclose((adv - x)[interior],
                                   (cfg.eps * np.sign(g))[interior], atol=1e-12)

    def test_raises_loss(self, small_classifier, batch):
        x, y = batch
        adv = fgsm(small_classifier, x, y, AttackConfig(epsilon=16.0))
        assert small_classifier.loss_sum(adv, y) > small_classifier.loss_sum(x, y)


class TestMim:
    def test_single_step_no_decay_equals_fgsm(self, small_classifier, batch):
        x, y = batch
        a = mim(small_classifier, x, y, AttackConfig(epsilon=16.0, steps=1,
                                                     momentum_decay=0.0))
        b = fgsm(small_classifier, x, y, AttackConfig(epsilon=16.0))
        np.testing.assert_array_equal(a, b)

    def test_iterative_stays_in_ball(self, small_classifier, batch):
        x, y = batch
        adv = mim(small_classifier, x, y, AttackConfig(epsilon=16.0, steps=5))
        check_linf(x, adv, 16.0)
        assert adv.min() >= 0.0 and adv.max() <= 1.0


class TestDim:
    def test_stays_in_ball_and_seeded(self, small_classifier, batch):
        x, y = batch
        cfg = AttackConfig(epsilon=16.0, steps=3, seed=5)
        a = dim(small_classifier, x, y, cfg)
        b = dim(small_classifier, x, y, cfg)
        np.testing.assert_array_equal(a, b)
        check_linf(x, a, 16.0)

    def test_diversity_backmap_is_exact_adjoint(self, rng):
        # <T x, u> == <x, T* u> for the resize+pad and its gradient backmap
        cfg = AttackConfig(input_diversity_prob=1.0, resize_low=0.7)
        x = rng.normal(size=(3, 3, 12, 12))
        out, backmap = _diverse_transform(x, cfg, np.random.default_rng(2))
        u = rng.normal(size=out.shape)
        lhs = float((out * u).sum())
        rhs = float((x * backmap(u)).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_zero_probability_reduces_to_mim(self, small_classifier, batch):
        x, y = batch
        cfg = AttackConfig(epsilon=16.0, steps=3, input_diversity_prob=0.0)
        np.testing.assert_array_equal(dim(small_classifier, x, y, cfg),
                                      mim(small_classifier, x, y, cfg))


class TestRhpAttack:
    def test_equals_fgsm_at_init(self, small_classifier, batch, vertical8):
        spec, part = vertical8
        params = init_transformer(3, part, seed=0, split_spec=spec)
        x, y = batch
        cfg = AttackConfig(epsilon=16.0)
        a = rhp_attack(small_classifier, params, x, y, cfg)
        b = fgsm(small_classifier, x, y, cfg)
        np.testing.assert_array_equal(a, b)


class TestUniversalApplication:
    def test_apply_clips_and_checks_shape(self, rng, vertical8):
        spec, part = vertical8
        art = rp_baseline(part, 3, 16.0, seed=0, split_spec=spec)
        imgs = rng.uniform(size=(4, 3, 32, 32))
        adv = apply_universal(imgs, art)
        check_linf(imgs, adv, 16.0)
        assert adv.min() >= 0.0 and adv.max() <= 1.0
        with pytest.raises(AttackError):
            apply_universal(rng.uniform(size=(1, 3, 16, 16)), art)

    def test_expand_cellwise(self, vertical8):
        _, part = vertical8
        values = np.arange(3 * 8, dtype=float).reshape(3, 8)
        full = expand_cellwise(values, part)
        assert full.shape == (3, 32, 32)
        for k in range(8):
            cells = full[:, part.label_map == k]
            np.testing.assert_array_equal(cells, np.repeat(values[:, k][:, None],
                                                           cells.shape[1], axis=1))


class TestRpBaseline:
    def test_cells_are_exactly_pm_eps(self, vertical8):
        spec, part = vertical8
        art = rp_baseline(part, 3, 16.0, seed=1, split_spec=spec)
        mag = art.magnitude
        assert set(np.unique(art.tensor)) <= {np.float32(-mag), np.float32(mag)}
        for k in range(part.k_regions):
            for ch in range(3):
                assert art.tensor[ch][part.label_map == k].var() == 0.0

    def test_seeded(self, vertical8):
        spec, part = vertical8
        a = rp_baseline(part, 3, 16.0, seed=1, split_spec=spec)
        b = rp_baseline(part, 3, 16.0, seed=1, split_spec=spec)
        np.testing.assert_array_equal(a.tensor, b.tensor)
        c = rp_baseline(part, 3, 16.0, seed=2, split_spec=spec)
        assert np.abs(a.tensor - c.tensor).max() > 0


class TestOpBaseline:
    def test_piecewise_constant_within_ball(self, small_classifier,
                                            small_module_set, vertical8):
        spec, part = vertical8
        art = op_baseline(small_classifier, small_module_set, part, 16.0,
                          iterations=5, seed=0, split_spec=spec)
        assert np.abs(art.tensor).max() <= 16 / 255 + 1e-9
        for k in range(part.k_regions):
            for ch in range(3):
                assert np.ptp(art.tensor[ch][part.label_map == k]) == 0.0

    def test_ascends_the_loss(self, small_classifier, small_module_set, vertical8):
        spec, part = vertical8
        art = op_baseline(small_classifier, small_module_set, part, 16.0,
                          iterations=40, seed=0, split_spec=spec)
        x = small_module_set.images
        y = small_module_set.labels
        adv = apply_universal(x, art)
        assert small_classifier.loss_sum(adv, y) > small_classifier.loss_sum(x, y)

    def test_empty_dataset_rejected(self, small_module_set, small_classifier,
                                    vertical8):
        spec, part = vertical8
        with pytest.raises(AttackError):
            op_baseline(small_classifier, small_module_set.subset([]), part, 16.0)
