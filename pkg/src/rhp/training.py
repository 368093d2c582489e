"""The transforming paradigm: train the gradient transformer by gradient
ascent on the frozen classifier's loss.

Per batch: (1) compute the input-loss gradient g on clean images; (2) push it
through the transformer in train mode; (3) build the adversarial batch
I + eps * sign(g_hat), clipped to [0, 1]; (4) ascend the classifier loss at
that batch w.r.t. the transformer parameters only, with Adam.  The sign in
step (3) is non-differentiable; the default surrogate is straight-through
(forward sign, backward identity), with a documented "linear" alternative
that drops the sign entirely.

The TU variant feeds seeded uniform U(-1, 1) noise instead of real gradients,
which trains the module as an explicit universal generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .models import ClassifierModel, parameters_checksum
from .partition import RegionPartition, RegionSplitSpec
from .transformer import (
    TransformerParams,
    init_transformer,
    probe_fractions,
    transform,
    transform_backward,
)


class TrainingError(RuntimeError):
    """Non-finite loss or invalid configuration during transformer training."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 16.0             # 255-scale
    sign_mode: str = "straight_through"   # or "linear"
    seed: int = 0
    train_set_size: int | None = None  # optional cap on the dataset

    def __post_init__(self):
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if self.epsilon <= 0:
            raise TrainingError("epsilon must be positive")
        if self.sign_mode not in ("straight_through", "linear"):
            raise TrainingError(f"unknown sign_mode {self.sign_mode!r}")


@dataclass
class TrainLog:
    """One record per optimizer step, plus epoch boundaries."""

    steps: list[int] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    frac_b_over_a: list[float] = field(default_factory=list)
    frac_c_over_d: list[float] = field(default_factory=list)

    def append(self, step, epoch, loss, frac_b, frac_c):
        self.steps.append(step)
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.frac_b_over_a.append(frac_b)
        self.frac_c_over_d.append(frac_c)

    def moving_average(self, values: list[float], window: int = 100) -> list[float]:
        out = []
        for i in range(len(values)):
            lo = max(0, i - window + 1)
            out.append(float(np.mean(values[lo:i + 1])))
        return out

    def final_epoch_mean(self, values: list[float]) -> float:
        last = self.epochs[-1]
        sel = [v for v, e in zip(values, self.epochs) if e == last]
        return float(np.mean(sel))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(len(self.steps)):
                fh.write(json.dumps({
                    "step": self.steps[i],
                    "epoch": self.epochs[i],
                    "loss": self.losses[i],
                    "frac_b_over_a": self.frac_b_over_a[i],
                    "frac_c_over_d": self.frac_c_over_d[i],
                }, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "TrainLog":
        log = TrainLog()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                log.append(rec["step"], rec["epoch"], rec["loss"],
                           rec["frac_b_over_a"], rec["frac_c_over_d"])
        return log


class _Adam:
    """Adam in ascent mode over the transformer's named parameter arrays."""

    def __init__(self, shapes: dict[str, tuple], lr: float, betas: tuple[float, float]):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = 1e-8
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def ascend(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            m_hat = self.m[k] / (1 - self.b1 ** self.t)
            v_hat = self.v[k] / (1 - self.b2 ** self.t)
            params[k] += self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _train_loop(model: ClassifierModel, dataset: Dataset, partition: RegionPartition,
                cfg: TrainConfig, gradient_source: str,
                split_spec: RegionSplitSpec | None = None):
    if len(dataset) == 0:
        raise TrainingError("empty training dataset")
    data = dataset
    if cfg.train_set_size is not None and cfg.train_set_size < len(dataset):
        data = dataset.subset(np.arange(cfg.train_set_size))
    channels = data.input_shape[0]
    eps = cfg.epsilon / 255.0

    params = init_transformer(channels, partition, cfg.seed, split_spec=split_spec)
    tensors = {
        "conv_weight": params.conv_weight, "conv_bias": params.conv_bias,
        "gamma": params.rn_state.gamma, "beta": params.rn_state.beta,
    }
    adam = _Adam({k: v.shape for k, v in tensors.items()},
                 cfg.learning_rate, cfg.adam_betas)
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog()
    frozen = parameters_checksum(model)

    step_count = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = data.images[idx], data.labels[idx]
            if gradient_source == "model":
                _, g = model.loss_and_input_gradient(x, y)
            else:
                g = rng.uniform(-1.0, 1.0, size=x.shape)

            g_hat, probes, cache = transform(g, params, mode="train")
            if cfg.sign_mode == "straight_through":
                direction = np.sign(g_hat)
            else:
                direction = g_hat
            raw = x + eps * direction
            adv = np.clip(raw, 0.0, 1.0)
            loss, grad_adv = model.loss_and_input_gradient(adv, y)
            if not np.isfinite(loss):
                raise TrainingError("non-finite loss during transformer training")

            # clip subgradient, then eps * (straight-through or linear) factor
            grad_ghat = eps * grad_adv * ((raw >= 0.0) & (raw <= 1.0))
            grads, _ = transform_backward(grad_ghat, cache, params)
            adam.ascend(tensors, {
                "conv_weight": grads.conv_weight, "conv_bias": grads.conv_bias,
                "gamma": grads.gamma, "beta": grads.beta,
            })
            frac_b, frac_c = probe_fractions(probes)
            log.append(step_count, epoch, loss / len(idx), frac_b, frac_c)
            step_count += 1

    if parameters_checksum(model) != frozen:
        raise TrainingError("classifier parameters changed during training")
    return params, log


def train_transformer(model: ClassifierModel, dataset: Dataset,
                      partition: RegionPartition, cfg: TrainConfig,
                      split_spec: RegionSplitSpec | None = None):
    """Train T on real loss gradients of the frozen classifier."""
    return _train_loop(model, dataset, partition, cfg, "model", split_spec)


def train_tu_variant(model: ClassifierModel, dataset: Dataset,
                     partition: RegionPartition, cfg: TrainConfig,
                     split_spec: RegionSplitSpec | None = None):
    """Ablation: seeded uniform U(-1, 1) noise replaces the loss gradient."""
    return _train_loop(model, dataset, partition, cfg, "noise", split_spec)
