"""Evaluation harness: report arithmetic, split hygiene, constraint audits,
homogeneity scoring against a brute-force oracle, and the sweep drivers."""

import numpy as np
import pytest

from rhp.artifacts import PerturbationArtifact
from rhp.attacks import AttackConfig, fgsm
from rhp.datasets import generate_synthetic_dataset
from rhp.evaluation import (
    EvalError,
    EvalReport,
    error_increase,
    error_rate,
    homogeneity_score,
    k_sweep,
    transfer_matrix,
    universality_gap,
)
from rhp.models import resize_pad_defense
from rhp.training import TrainConfig
from rhp.transformer import init_transformer


class TestEvalReport:
    def test_arithmetic_enforced(self):
        with pytest.raises(EvalError):
            EvalReport("m", "a", clean_error=0.2, adv_error=0.5,
                       error_increase=0.25, sample_count=10, seed=0)

    def test_consistent_report_accepted(self):
        rep = EvalReport("m", "a", clean_error=0.213, adv_error=0.459,
                         error_increase=0.246, sample_count=500, seed=0)
        assert rep.error_increase == pytest.approx(0.246)


class TestErrorRate:
    def test_matches_brute_force(self, small_classifier, small_eval_set):
        rate = error_rate(small_classifier, small_eval_set)
        wrong = 0
        for i in range(len(small_eval_set)):
            pred = small_classifier.predict(small_eval_set.images[i:i + 1])[0]
            wrong += int(pred != small_eval_set.labels[i])
        assert rate == pytest.approx(wrong / len(small_eval_set))

    def test_empty_rejected(self, small_classifier, small_eval_set):
        with pytest.raises(EvalError):
            error_rate(small_classifier, small_eval_set.subset([]))

    def test_defended_model_is_seeded(self, small_classifier, small_eval_set):
        defense = resize_pad_defense(small_classifier, seed=0)
        a = error_rate(defense, small_eval_set, seed=7)
        b = error_rate(defense, small_eval_set, seed=7)
        assert a == b


class TestErrorIncrease:
    def test_identity_attack_scores_zero(self, small_classifier, small_eval_set):
        rep = error_increase(small_classifier, small_eval_set,
                             lambda m, x, y: x, epsilon=16.0, attack_id="noop")
        assert abs(rep.error_increase) <= 1e-12
        assert rep.adv_error == rep.clean_error

    def test_fgsm_report_fields(self, small_classifier, small_eval_set):
        rep = error_increase(
            small_classifier, small_eval_set,
            lambda m, x, y: fgsm(m, x, y, AttackConfig(epsilon=16.0)),
            epsilon=16.0, attack_id="fgsm")
        assert rep.model_id == "unit_nat"
        assert rep.attack_id == "fgsm"
        assert rep.sample_count == len(small_eval_set)
        assert rep.error_increase == pytest.approx(rep.adv_error - rep.clean_error)

    def test_split_hygiene(self, small_classifier, small_module_set):
        with pytest.raises(EvalError, match="split"):
            error_increase(small_classifier, small_module_set,
                           lambda m, x, y: x, epsilon=16.0)
        rep = error_increase(small_classifier, small_module_set,
                             lambda m, x, y: x, epsilon=16.0,
                             enforce_split=False)
        assert rep.error_increase == 0.0

    def test_epsilon_required_for_callables(self, small_classifier, small_eval_set):
        with pytest.raises(EvalError, match="epsilon"):
            error_increase(small_classifier, small_eval_set, lambda m, x, y: x)

    def test_out_of_ball_attack_rejected(self, small_classifier, small_eval_set):
        cheat = lambda m, x, y: np.clip(x + 40 / 255, 0.0, 1.0)
        with pytest.raises(Exception, match="L-inf"):
            error_increase(small_classifier, small_eval_set, cheat, epsilon=16.0)

    def test_out_of_range_attack_rejected(self, small_classifier, small_eval_set):
        cheat = lambda m, x, y: x + 2.0
        with pytest.raises(Exception):
            error_increase(small_classifier, small_eval_set, cheat, epsilon=255.0 * 2)

    def test_artifact_attack_uses_its_own_metadata(self, small_classifier,
                                                   small_eval_set):
        art = PerturbationArtifact(np.zeros((3, 32, 32)), 16.0, None, "m", "rp")
        rep = error_increase(small_classifier, small_eval_set, art)
        assert rep.attack_id == "rp"
        assert rep.error_increase == 0.0


class TestTransferMatrix:
    def test_one_report_per_pair(self, small_classifier, small_eval_set):
        defense = resize_pad_defense(small_classifier, seed=0)
        zero = PerturbationArtifact(np.zeros((3, 32, 32)), 16.0, None, "m", "rp")
        full = PerturbationArtifact(np.full((3, 32, 32), 16 / 255), 16.0,
                                    None, "m", "op")
        reports = transfer_matrix([small_classifier, defense],
                                  {"rp": zero, "op": full}, small_eval_set)
        assert len(reports) == 4
        assert {(r.attack_id, r.model_id) for r in reports} == {
            ("rp", "unit_nat"), ("rp", "unit_nat+resize_pad"),
            ("op", "unit_nat"), ("op", "unit_nat+resize_pad")}


class TestHomogeneityScore:
    def test_matches_brute_force(self, rng, vertical8):
        _, part = vertical8
        pert = rng.normal(size=(3, 32, 32))
        rep = homogeneity_score(pert, part)
        cells = [pert[ch][part.label_map == k].var()
                 for ch in range(3) for k in range(8)]
        total = np.mean([pert[ch].var() for ch in range(3)])
        assert rep.within_region_variance == pytest.approx(np.mean(cells))
        assert rep.ratio == pytest.approx(np.mean(cells) / total)

    def test_piecewise_constant_scores_zero(self, rng, vertical8):
        _, part = vertical8
        values = rng.normal(size=(3, 8))
        pert = values[:, part.label_map]
        rep = homogeneity_score(pert, part)
        assert rep.within_region_variance == 0.0
        assert rep.ratio == 0.0

    def test_iid_noise_scores_near_one(self, rng, vertical8):
        _, part = vertical8
        rep = homogeneity_score(rng.normal(size=(3, 32, 32)), part)
        assert 0.9 < rep.ratio <= 1.05

    def test_constant_perturbation_defined(self, vertical8):
        _, part = vertical8
        rep = homogeneity_score(np.ones((3, 32, 32)), part)
        assert rep.ratio == 0.0

    def test_rejects_wrong_rank(self, vertical8):
        _, part = vertical8
        with pytest.raises(EvalError):
            homogeneity_score(np.zeros((32, 32)), part)


class TestUniversalityGap:
    def test_identity_module_gap_is_consistent(self, small_classifier,
                                               small_eval_set, vertical8):
        spec, part = vertical8
        params = init_transformer(3, part, seed=0, split_spec=spec)
        inc_u, inc_i, gap = universality_gap(params, small_classifier,
                                             small_eval_set, 16.0)
        assert gap == pytest.approx(abs(inc_u - inc_i))
        assert -1.0 <= inc_u <= 1.0 and -1.0 <= inc_i <= 1.0


class TestKSweep:
    def test_rows_and_artifacts(self, small_classifier, small_module_set,
                                small_eval_set):
        cfg = TrainConfig(epochs=1, batch_size=32, epsilon=16.0, seed=0)
        rows, artifacts = k_sweep(small_classifier,
                                  {"plain": small_classifier},
                                  small_module_set, small_eval_set,
                                  [1, 4], cfg)
        assert [row["k"] for row in rows] == [1, 4]
        for row in rows:
            assert row["homogeneity_ratio"] == 0.0
            assert "plain" in row
        assert set(artifacts) == {1, 4}
        assert artifacts[4].split_spec.k_regions == 4
