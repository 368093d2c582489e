"""Evaluation harness: error-rate metrics, transfer matrices, homogeneity
diagnostics, the universal-vs-image-dependent gap, and the region-count sweep.

The headline metric is the increase of top-1 error: adversarial error minus
clean error, reported as fractions (percentage points only at presentation).
Every evaluated adversarial image is independently re-audited against the
L-inf constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .artifacts import PerturbationArtifact
from .attacks import AttackConfig, apply_universal, check_linf, rhp_attack
from .datasets import Dataset
from .models import ClassifierModel, DefenseWrapper
from .partition import RegionPartition, RegionSplitSpec, build_partition
from .training import TrainConfig, train_transformer
from .transformer import TransformerParams, universal_perturbation


class EvalError(RuntimeError):
    """Empty dataset, split-hygiene violation, or constraint failure."""


@dataclass
class EvalReport:
    model_id: str
    attack_id: str
    clean_error: float
    adv_error: float
    error_increase: float
    sample_count: int
    seed: int

    def __post_init__(self):
        if abs(self.error_increase - (self.adv_error - self.clean_error)) > 1e-12:
            raise EvalError("error_increase must equal adv_error - clean_error")


@dataclass
class HomogeneityReport:
    within_region_variance: float
    total_variance: float
    ratio: float


def _check_split(dataset: Dataset) -> None:
    if dataset.split_tag != "eval":
        raise EvalError(
            f"refusing to evaluate on split {dataset.split_tag!r}; use eval data")


def _predict(model, images: np.ndarray, seed: int, batch_size: int = 256) -> np.ndarray:
    if isinstance(model, DefenseWrapper):
        model.reseed(seed)
    preds = []
    for start in range(0, len(images), batch_size):
        preds.append(model.predict(images[start:start + batch_size]))
    return np.concatenate(preds)


def error_rate(model, dataset: Dataset, seed: int = 0) -> float:
    """Fraction of samples with argmax logit != label (top-1 error)."""
    if len(dataset) == 0:
        raise EvalError("empty dataset")
    preds = _predict(model, dataset.images, seed)
    return float((preds != dataset.labels).mean())


def _generate_adversarial(attack, source_model, dataset: Dataset,
                          batch_size: int = 64) -> np.ndarray:
    if isinstance(attack, PerturbationArtifact):
        return apply_universal(dataset.images, attack)
    advs = []
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        advs.append(attack(source_model, x, y))
    return np.concatenate(advs)


def error_increase(model, dataset: Dataset, attack, seed: int = 0,
                   epsilon: float | None = None, attack_id: str = "",
                   source_model: ClassifierModel | None = None,
                   enforce_split: bool = True) -> EvalReport:
    """Evaluate one attack against one (possibly defended) model.

    `attack` is either a PerturbationArtifact or a callable
    (source_model, images, labels) -> adversarial images; `source_model`
    defaults to `model` (white-box).  `epsilon` (255-scale) is used for the
    independent L-inf audit and defaults to the artifact's.
    """
    if len(dataset) == 0:
        raise EvalError("empty dataset")
    if enforce_split:
        _check_split(dataset)
    if epsilon is None:
        if not isinstance(attack, PerturbationArtifact):
            raise EvalError("epsilon required for callable attacks")
        epsilon = attack.epsilon
    if isinstance(attack, PerturbationArtifact) and not attack_id:
        attack_id = attack.method
    src = source_model
    if src is None and not isinstance(attack, PerturbationArtifact):
        src = model.inner if isinstance(model, DefenseWrapper) else model

    adv = _generate_adversarial(attack, src, dataset)
    check_linf(dataset.images, adv, epsilon)
    if adv.min() < -1e-12 or adv.max() > 1.0 + 1e-12:
        raise EvalError("adversarial images left the [0, 1] range")

    clean = error_rate(model, dataset, seed)
    adv_preds = _predict(model, adv, seed)
    adv_err = float((adv_preds != dataset.labels).mean())
    model_id = model.model_id if hasattr(model, "model_id") else str(model)
    return EvalReport(model_id=model_id, attack_id=attack_id,
                      clean_error=clean, adv_error=adv_err,
                      error_increase=adv_err - clean,
                      sample_count=len(dataset), seed=seed)


def transfer_matrix(models: list, attacks: dict, dataset: Dataset,
                    seed: int = 0, source_model: ClassifierModel | None = None,
                    epsilons: dict | None = None) -> list[EvalReport]:
    """One EvalReport per (attack, target model).

    `attacks` maps attack_id -> artifact or callable, all generated against
    the single designated source model.
    """
    reports = []
    for attack_id, attack in attacks.items():
        eps = (epsilons or {}).get(attack_id)
        for model in models:
            reports.append(error_increase(
                model, dataset, attack, seed=seed, epsilon=eps,
                attack_id=attack_id, source_model=source_model))
    return reports


def homogeneity_score(perturbation: np.ndarray,
                      partition: RegionPartition) -> HomogeneityReport:
    """Within-cell variance relative to total per-channel variance.

    Piecewise-constant perturbations (constant per region/channel cell) score
    exactly 0; i.i.d. noise scores close to 1 for small K.
    """
    if perturbation.ndim != 3:
        raise EvalError(f"expected C x H x W perturbation, got {perturbation.shape}")
    labels = partition.label_map
    cell_vars = []
    for ch in range(perturbation.shape[0]):
        for k in range(partition.k_regions):
            cell = perturbation[ch][labels == k]
            # an exactly constant cell has zero variance; skip the mean
            # subtraction, which can leave rounding dust
            cell_vars.append(0.0 if np.ptp(cell) == 0.0 else float(cell.var()))
    within = float(np.mean(cell_vars))
    total = float(np.mean([perturbation[ch].var() for ch in range(perturbation.shape[0])]))
    ratio = 0.0 if total == 0.0 else within / total
    return HomogeneityReport(within_region_variance=within,
                             total_variance=total, ratio=ratio)


def universality_gap(params: TransformerParams, model, dataset: Dataset,
                     epsilon: float, seed: int = 0,
                     source_model: ClassifierModel | None = None):
    """Error increases of universal vs image-dependent inference, and the gap."""
    src = source_model
    if src is None:
        src = model.inner if isinstance(model, DefenseWrapper) else model
    shape = dataset.input_shape
    artifact = universal_perturbation(params, epsilon, shape,
                                      source_model_id=src.model_id)
    rep_u = error_increase(model, dataset, artifact, seed=seed, attack_id="rhp-u")
    cfg = AttackConfig(epsilon=epsilon, seed=seed)
    rep_i = error_increase(
        model, dataset,
        lambda m, x, y: rhp_attack(m, params, x, y, cfg),
        seed=seed, epsilon=epsilon, attack_id="rhp-i", source_model=src)
    gap = abs(rep_u.error_increase - rep_i.error_increase)
    return rep_u.error_increase, rep_i.error_increase, gap


def k_sweep(model: ClassifierModel, defense_models: dict, train_dataset: Dataset,
            eval_dataset: Dataset, k_values: list[int], cfg: TrainConfig,
            split_kind: str = "vertical", seed: int = 0):
    """Train one transformer per region count and evaluate its universal
    artifact on every defense.  Returns (rows, artifacts) where each row maps
    defense id -> error increase, plus the homogeneity ratio (always 0 for
    piecewise-constant universal artifacts)."""
    c, h, w = train_dataset.input_shape
    rows = []
    artifacts = {}
    for k in k_values:
        spec = RegionSplitSpec(split_kind, k)
        partition = build_partition(spec, h, w)
        params, _ = train_transformer(model, train_dataset, partition,
                                      replace(cfg, seed=cfg.seed), split_spec=spec)
        artifact = universal_perturbation(params, cfg.epsilon, (c, h, w),
                                          source_model_id=model.model_id)
        row = {"k": k,
               "homogeneity_ratio": homogeneity_score(
                   artifact.tensor.astype(np.float64), partition).ratio}
        for defense_id, defense in defense_models.items():
            rep = error_increase(defense, eval_dataset, artifact, seed=seed,
                                 attack_id=f"rhp-k{k}")
            row[defense_id] = rep.error_increase
        rows.append(row)
        artifacts[k] = artifact
    return rows, artifacts
