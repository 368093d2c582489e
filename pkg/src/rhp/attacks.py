"""Attack generation: FGSM/MIM/DIM baselines, the region-homogeneous sign
attack, universal application, and the random/optimized piecewise-constant
baselines.

All attacks take epsilon in 255-scale units, operate on [0, 1] pixels, and
guarantee the L-inf constraint ||adv - clean|| <= epsilon / 255.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import PerturbationArtifact
from .datasets import Dataset
from .models import ClassifierModel, resize_and_pad
from .partition import RegionPartition, RegionSplitSpec
from .transformer import TransformerParams, transform


class AttackError(RuntimeError):
    """Constraint violation or non-finite quantity during attack generation."""


@dataclass
class AttackConfig:
    epsilon: float = 16.0               # 255-scale; divided by 255 internally
    steps: int = 10                     # iterative attacks
    momentum_decay: float = 1.0         # MIM
    input_diversity_prob: float = 0.7   # DIM
    resize_low: float = 0.9             # DIM resize range [resize_low, 1.0]
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise AttackError("epsilon must be nonnegative")
        if self.steps < 1:
            raise AttackError("steps must be >= 1")

    @property
    def eps(self) -> float:
        return self.epsilon / 255.0


def check_linf(clean: np.ndarray, adv: np.ndarray, epsilon: float,
               tol: float = 1e-9) -> None:
    """Audit the epsilon-ball constraint (255-scale epsilon)."""
    gap = float(np.abs(adv - clean).max(initial=0.0))
    if gap > epsilon / 255.0 + tol:
        raise AttackError(f"L-inf violation: {gap} > {epsilon / 255.0}")


def fgsm(model: ClassifierModel, images: np.ndarray, labels: np.ndarray,
         cfg: AttackConfig) -> np.ndarray:
    """adv = clip(I + eps * sign(dL/dI), 0, 1)."""
    _, g = model.loss_and_input_gradient(images, labels)
    return np.clip(images + cfg.eps * np.sign(g), 0.0, 1.0)


def rhp_attack(model: ClassifierModel, transformer: TransformerParams,
               images: np.ndarray, labels: np.ndarray,
               cfg: AttackConfig) -> np.ndarray:
    """FGSM with the gradient routed through the transformer in eval mode."""
    _, g = model.loss_and_input_gradient(images, labels)
    g_hat, _, _ = transform(g, transformer, mode="eval")
    return np.clip(images + cfg.eps * np.sign(g_hat), 0.0, 1.0)


def _mim_core(model, images, labels, cfg: AttackConfig, diversify) -> np.ndarray:
    eps = cfg.eps
    step = eps / cfg.steps
    momentum = np.zeros_like(images)
    adv = images.copy()
    for _ in range(cfg.steps):
        x = diversify(adv) if diversify is not None else adv
        if diversify is not None:
            x, backmap = x
            _, g_t = model.loss_and_input_gradient(x, labels)
            g = backmap(g_t)
        else:
            _, g = model.loss_and_input_gradient(x, labels)
        norm = np.abs(g).mean(axis=(1, 2, 3), keepdims=True)
        norm = np.where(norm > 0, norm, 1.0)
        momentum = cfg.momentum_decay * momentum + g / norm
        adv = adv + step * np.sign(momentum)
        adv = np.clip(adv, images - eps, images + eps)
        adv = np.clip(adv, 0.0, 1.0)
    return adv


def mim(model: ClassifierModel, images: np.ndarray, labels: np.ndarray,
        cfg: AttackConfig) -> np.ndarray:
    """Momentum iterative sign attack; steps=1, decay=0 reduces to FGSM."""
    return _mim_core(model, images, labels, cfg, diversify=None)


def _diverse_transform(images: np.ndarray, cfg: AttackConfig,
                       rng: np.random.Generator):
    """Random resize/pad of a batch; returns (transformed, gradient backmap).

    The backmap is the exact adjoint of the nearest-neighbor resize + pad, so
    gradients computed at the transformed input flow back to the original
    pixel grid.
    """
    n, c, h, w = images.shape
    out = np.empty_like(images)
    plans = []
    for i in range(n):
        if rng.random() >= cfg.input_diversity_prob:
            out[i] = images[i]
            plans.append(None)
            continue
        factor = float(rng.uniform(cfg.resize_low, 1.0))
        new_h = max(1, int(round(h * factor)))
        new_w = max(1, int(round(w * factor)))
        rows = np.minimum((np.arange(new_h) * h) // new_h, h - 1)
        cols = np.minimum((np.arange(new_w) * w) // new_w, w - 1)
        top = int(rng.integers(0, h - new_h + 1))
        left = int(rng.integers(0, w - new_w + 1))
        small = images[i][:, rows[:, None], cols[None, :]]
        canvas = np.zeros((c, h, w))
        canvas[:, top:top + new_h, left:left + new_w] = small
        out[i] = canvas
        plans.append((rows, cols, top, left, new_h, new_w))

    def backmap(grad_t: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(grad_t)
        for i, plan in enumerate(plans):
            if plan is None:
                grad[i] = grad_t[i]
                continue
            rows, cols, top, left, new_h, new_w = plan
            inner = grad_t[i][:, top:top + new_h, left:left + new_w]
            for ch in range(grad.shape[1]):
                np.add.at(grad[i, ch], (rows[:, None], cols[None, :]), inner[ch])
        return grad

    return out, backmap


def dim(model: ClassifierModel, images: np.ndarray, labels: np.ndarray,
        cfg: AttackConfig) -> np.ndarray:
    """MIM with per-step random input diversity (resize + zero pad)."""
    rng = np.random.default_rng(cfg.seed)
    return _mim_core(model, images, labels, cfg,
                     diversify=lambda x: _diverse_transform(x, cfg, rng))


def apply_universal(images: np.ndarray, artifact: PerturbationArtifact) -> np.ndarray:
    """clip(I + u, 0, 1); shapes must match exactly."""
    if images.shape[1:] != artifact.shape:
        raise AttackError(
            f"image shape {images.shape[1:]} does not match artifact {artifact.shape}")
    return np.clip(images + artifact.tensor.astype(np.float64)[None], 0.0, 1.0)


def expand_cellwise(values: np.ndarray, partition: RegionPartition) -> np.ndarray:
    """Broadcast per-(channel, region) values to a C x H x W tensor."""
    return values[:, partition.label_map]


def rp_baseline(partition: RegionPartition, channels: int, epsilon: float,
                seed: int, split_spec: RegionSplitSpec | None = None,
                source_model_id: str = "") -> PerturbationArtifact:
    """Random +/- epsilon per (region, channel) cell."""
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(channels, partition.k_regions))
    tensor = (epsilon / 255.0) * expand_cellwise(signs, partition)
    return PerturbationArtifact(tensor=tensor, epsilon=epsilon, split_spec=split_spec,
                                source_model_id=source_model_id, method="rp", seed=seed)


def op_baseline(model: ClassifierModel, dataset: Dataset, partition: RegionPartition,
                epsilon: float, iterations: int = 200, step_size: float | None = None,
                batch_size: int = 64, seed: int = 0,
                split_spec: RegionSplitSpec | None = None) -> PerturbationArtifact:
    """Projected sign-gradient ascent on one value per (region, channel).

    Maximizes the mean classification loss of the naturally trained model over
    seeded minibatches; every step projects the values back to [-eps, eps].
    """
    if len(dataset) == 0:
        raise AttackError("op_baseline needs a nonempty dataset")
    eps = epsilon / 255.0
    step = (eps / 10.0) if step_size is None else step_size
    rng = np.random.default_rng(seed)
    channels = dataset.input_shape[0]
    labels_flat = partition.label_map.ravel()
    values = np.zeros((channels, partition.k_regions))
    for _ in range(iterations):
        idx = rng.choice(len(dataset), size=min(batch_size, len(dataset)), replace=False)
        x, y = dataset.images[idx], dataset.labels[idx]
        u = expand_cellwise(values, partition)
        raw = x + u[None]
        adv = np.clip(raw, 0.0, 1.0)
        loss, g = model.loss_and_input_gradient(adv, y)
        if not np.isfinite(loss):
            raise AttackError("non-finite loss in op_baseline")
        g = g * ((raw >= 0.0) & (raw <= 1.0))  # clip subgradient
        agg = np.stack([
            np.bincount(labels_flat, weights=g[:, ch].sum(axis=0).ravel(),
                        minlength=partition.k_regions)
            for ch in range(channels)
        ])
        values = np.clip(values + step * np.sign(agg), -eps, eps)
    tensor = expand_cellwise(values, partition)
    return PerturbationArtifact(tensor=tensor, epsilon=epsilon, split_spec=split_spec,
                                source_model_id=model.model_id, method="op", seed=seed)
