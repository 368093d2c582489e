"""The transforming paradigm: frozen classifier, parameter accounting,
log bookkeeping, and the TU noise variant."""

import numpy as np
import pytest

from rhp.models import parameters_checksum
from rhp.training import (
    TrainConfig,
    TrainingError,
    TrainLog,
    train_transformer,
    train_tu_variant,
)
from rhp.transformer import init_transformer, transform


@pytest.fixture
def quick_cfg():
    return TrainConfig(epochs=2, batch_size=16, epsilon=16.0, seed=0)


class TestConfig:
    def test_validation(self):
        with pytest.raises(TrainingError):
            TrainConfig(epochs=-1)
        with pytest.raises(TrainingError):
            TrainConfig(epsilon=0.0)
        with pytest.raises(TrainingError):
            TrainConfig(sign_mode="tanh")

    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 50
        assert cfg.learning_rate == pytest.approx(1e-3)
        assert cfg.adam_betas == (0.9, 0.999)
        assert cfg.sign_mode == "straight_through"


class TestTrainLog:
    def test_bookkeeping_and_round_trip(self, tmp_path):
        log = TrainLog()
        for i in range(6):
            log.append(i, i // 3, 1.0 + i, 0.1 * i, 0.2 * i)
        assert log.final_epoch_mean(log.losses) == pytest.approx(5.0)
        path = tmp_path / "log.jsonl"
        log.save(path)
        back = TrainLog.load(path)
        assert back.steps == log.steps
        assert back.losses == log.losses
        assert back.frac_b_over_a == log.frac_b_over_a

    def test_moving_average(self):
        log = TrainLog()
        vals = [1.0, 2.0, 3.0, 4.0]
        smoothed = log.moving_average(vals, window=2)
        assert smoothed == [1.0, 1.5, 2.5, 3.5]


class TestTrainTransformer:
    def test_classifier_is_frozen(self, small_classifier, small_module_set,
                                  vertical8, quick_cfg):
        spec, part = vertical8
        before = parameters_checksum(small_classifier)
        train_transformer(small_classifier, small_module_set, part, quick_cfg,
                          split_spec=spec)
        assert parameters_checksum(small_classifier) == before

    def test_only_module_parameters_change(self, small_classifier,
                                           small_module_set, vertical8, quick_cfg):
        spec, part = vertical8
        init = init_transformer(3, part, quick_cfg.seed, split_spec=spec)
        params, _ = train_transformer(small_classifier, small_module_set, part,
                                      quick_cfg, split_spec=spec)
        changed = sum([
            int((params.conv_weight != init.conv_weight).sum()),
            int((params.conv_bias != init.conv_bias).sum()),
            int((params.rn_state.gamma != init.rn_state.gamma).sum()),
            int((params.rn_state.beta != init.rn_state.beta).sum()),
        ])
        assert changed == params.parameter_count()  # every trainable scalar moved
        assert params.partition is part

    def test_log_has_one_entry_per_step(self, small_classifier, small_module_set,
                                        vertical8, quick_cfg):
        spec, part = vertical8
        _, log = train_transformer(small_classifier, small_module_set, part,
                                   quick_cfg, split_spec=spec)
        steps_per_epoch = -(-len(small_module_set) // quick_cfg.batch_size)
        assert len(log.steps) == 2 * steps_per_epoch
        assert log.steps == list(range(len(log.steps)))
        assert all(np.isfinite(log.losses))
        assert all(0.0 <= f <= 1.0 for f in log.frac_b_over_a)

    def test_seed_determinism(self, small_classifier, small_module_set,
                              vertical8, quick_cfg):
        spec, part = vertical8
        a, _ = train_transformer(small_classifier, small_module_set, part,
                                 quick_cfg, split_spec=spec)
        b, _ = train_transformer(small_classifier, small_module_set, part,
                                 quick_cfg, split_spec=spec)
        np.testing.assert_array_equal(a.conv_weight, b.conv_weight)
        np.testing.assert_array_equal(a.rn_state.beta, b.rn_state.beta)
        np.testing.assert_array_equal(a.rn_state.moving_mean, b.rn_state.moving_mean)

    def test_train_set_size_cap(self, small_classifier, small_module_set,
                                vertical8):
        spec, part = vertical8
        cfg = TrainConfig(epochs=1, batch_size=16, epsilon=16.0, seed=0,
                          train_set_size=4)
        _, log = train_transformer(small_classifier, small_module_set, part, cfg,
                                   split_spec=spec)
        assert len(log.steps) == 1  # 4 images, one batch

    def test_linear_mode_runs(self, small_classifier, small_module_set,
                              vertical8):
        spec, part = vertical8
        cfg = TrainConfig(epochs=1, batch_size=16, epsilon=16.0, seed=0,
                          sign_mode="linear")
        params, _ = train_transformer(small_classifier, small_module_set, part,
                                      cfg, split_spec=spec)
        assert np.isfinite(params.conv_weight).all()

    def test_empty_dataset_rejected(self, small_classifier, small_module_set,
                                    vertical8, quick_cfg):
        spec, part = vertical8
        with pytest.raises(TrainingError):
            train_transformer(small_classifier, small_module_set.subset([]),
                              part, quick_cfg, split_spec=spec)


class TestTuVariant:
    def test_runs_and_differs_from_gradient_training(self, small_classifier,
                                                     small_module_set,
                                                     vertical8, quick_cfg):
        spec, part = vertical8
        tu, _ = train_tu_variant(small_classifier, small_module_set, part,
                                 quick_cfg, split_spec=spec)
        rhp, _ = train_transformer(small_classifier, small_module_set, part,
                                   quick_cfg, split_spec=spec)
        assert np.abs(tu.rn_state.beta - rhp.rn_state.beta).max() > 0

    def test_seed_determinism(self, small_classifier, small_module_set,
                              vertical8, quick_cfg):
        spec, part = vertical8
        a, _ = train_tu_variant(small_classifier, small_module_set, part,
                                quick_cfg, split_spec=spec)
        b, _ = train_tu_variant(small_classifier, small_module_set, part,
                                quick_cfg, split_spec=spec)
        np.testing.assert_array_equal(a.conv_weight, b.conv_weight)
        g = np.random.default_rng(0).normal(size=(1, 3, 32, 32))
        out_a, _, _ = transform(g, a, mode="eval")
        out_b, _, _ = transform(g, b, mode="eval")
        np.testing.assert_array_equal(out_a, out_b)
