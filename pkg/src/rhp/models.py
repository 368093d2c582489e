"""Desk-scale classifiers and defense analogs.

A small fixed CNN (float64, CPU) stands in for large backbones; defenses are
PGD adversarial training and a random resize/pad input transform.  All public
entry points exchange numpy arrays; torch is an internal engine.  Gradients
w.r.t. the input use a sum-reduced cross-entropy, so each image's gradient is
the gradient of its own loss.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .artifacts import load_arrays, save_arrays
from .datasets import Dataset

torch.set_num_threads(1)  # bit-reproducible accumulation order


class ModelError(RuntimeError):
    """Non-finite loss/gradient or an invalid model operation."""


def _build_net(class_count: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(3, 16, 3, padding=1), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(),
        nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        nn.Linear(64, class_count),
    ).double()


@dataclass
class ClassifierModel:
    net: nn.Module
    class_count: int
    input_shape: tuple[int, int, int]
    model_id: str
    clean_error: float | None = None

    def logits(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = self.net(torch.from_numpy(np.ascontiguousarray(images, dtype=np.float64)))
        return out.numpy()

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.logits(images).argmax(axis=1)

    def loss_sum(self, images: np.ndarray, labels: np.ndarray) -> float:
        with torch.no_grad():
            out = self.net(torch.from_numpy(np.ascontiguousarray(images, dtype=np.float64)))
            loss = F.cross_entropy(out, torch.from_numpy(labels), reduction="sum")
        return float(loss)

    def loss_and_input_gradient(self, images: np.ndarray, labels: np.ndarray):
        """(sum cross-entropy, d loss / d images); the model is not mutated."""
        x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float64))
        x.requires_grad_(True)
        loss = F.cross_entropy(self.net(x), torch.from_numpy(labels), reduction="sum")
        grad, = torch.autograd.grad(loss, x)
        g = grad.numpy()
        loss = float(loss.detach())
        if not np.isfinite(g).all() or not np.isfinite(loss):
            raise ModelError("non-finite loss or input gradient")
        return loss, g


def input_gradient(model: ClassifierModel, images: np.ndarray,
                   labels: np.ndarray) -> np.ndarray:
    """Gradient of each image's cross-entropy loss w.r.t. that image."""
    _, g = model.loss_and_input_gradient(images, labels)
    return g


def parameters_checksum(model: ClassifierModel) -> str:
    digest = hashlib.sha256()
    for _, p in sorted(model.net.state_dict().items()):
        digest.update(p.detach().numpy().tobytes())
    return digest.hexdigest()


def build_toy_cnn(class_count: int = 10, input_shape: tuple[int, int, int] = (3, 32, 32),
                  seed: int = 0, model_id: str = "toy_cnn") -> ClassifierModel:
    """Fixed small CNN architecture with seeded initialization."""
    torch.manual_seed(seed)
    net = _build_net(class_count)
    net.eval()
    return ClassifierModel(net, class_count, input_shape, model_id)


def _run_epochs(model: ClassifierModel, make_batch, n_samples: int, epochs: int,
                lr: float, batch_size: int, seed: int) -> None:
    opt = torch.optim.Adam(model.net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    model.net.train()
    for _ in range(epochs):
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            idx = order[start:start + batch_size]
            x, y = make_batch(idx)
            opt.zero_grad()
            loss = F.cross_entropy(model.net(x), y)
            if not torch.isfinite(loss):
                raise ModelError("non-finite training loss")
            loss.backward()
            opt.step()
    model.net.eval()


def train_classifier(model: ClassifierModel, dataset: Dataset, epochs: int = 10,
                     lr: float = 2e-3, batch_size: int = 32,
                     seed: int = 0) -> ClassifierModel:
    """Standard cross-entropy training; records the final clean error rate."""
    if epochs > 0:
        images = torch.from_numpy(np.ascontiguousarray(dataset.images, dtype=np.float64))
        labels = torch.from_numpy(dataset.labels)

        def make_batch(idx):
            t = torch.from_numpy(idx)
            return images[t], labels[t]

        _run_epochs(model, make_batch, len(dataset), epochs, lr, batch_size, seed)
    preds = model.predict(dataset.images)
    model.clean_error = float((preds != dataset.labels).mean())
    return model


def _pgd_batch(model: ClassifierModel, x: np.ndarray, y: np.ndarray, eps: float,
               steps: int, rng: np.random.Generator) -> np.ndarray:
    adv = np.clip(x + rng.uniform(-eps, eps, size=x.shape), 0.0, 1.0)
    step = eps / 4.0
    for _ in range(steps):
        _, g = model.loss_and_input_gradient(adv, y)
        adv = adv + step * np.sign(g)
        adv = np.clip(adv, x - eps, x + eps)
        adv = np.clip(adv, 0.0, 1.0)
    return adv


def adv_train_classifier(model: ClassifierModel, dataset: Dataset, epsilon: float = 16.0,
                         pgd_steps: int = 5, epochs: int = 10, lr: float = 2e-3,
                         batch_size: int = 32, seed: int = 0) -> ClassifierModel:
    """PGD adversarial training: each batch is replaced by its PGD adversaries.

    epsilon is in 255-scale units; epsilon == 0 reduces to plain training.
    """
    eps = epsilon / 255.0
    if eps == 0.0:
        return train_classifier(model, dataset, epochs, lr, batch_size, seed)
    if epochs > 0:
        rng = np.random.default_rng(seed + 1)
        images = dataset.images
        labels = dataset.labels

        def make_batch(idx):
            x, y = images[idx], labels[idx]
            model.net.eval()
            adv = _pgd_batch(model, x, y, eps, pgd_steps, rng)
            model.net.train()
            return (torch.from_numpy(np.ascontiguousarray(adv, dtype=np.float64)),
                    torch.from_numpy(y))

        _run_epochs(model, make_batch, len(dataset), epochs, lr, batch_size, seed)
    preds = model.predict(dataset.images)
    model.clean_error = float((preds != dataset.labels).mean())
    return model


def nearest_resize(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a C x H x W array (deterministic)."""
    c, h, w = image.shape
    rows = np.minimum((np.arange(new_h) * h) // new_h, h - 1)
    cols = np.minimum((np.arange(new_w) * w) // new_w, w - 1)
    return image[:, rows[:, None], cols[None, :]]


def resize_and_pad(image: np.ndarray, factor: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Downscale by `factor` (nearest neighbor) and zero-pad back, at a random
    offset drawn from `rng`."""
    c, h, w = image.shape
    new_h = max(1, int(round(h * factor)))
    new_w = max(1, int(round(w * factor)))
    if new_h == h and new_w == w:
        return image.copy()
    small = nearest_resize(image, new_h, new_w)
    out = np.zeros_like(image)
    top = int(rng.integers(0, h - new_h + 1))
    left = int(rng.integers(0, w - new_w + 1))
    out[:, top:top + new_h, left:left + new_w] = small
    return out


@dataclass
class DefenseWrapper:
    """Random resize/pad input-transform defense around a frozen classifier."""

    inner: ClassifierModel
    kind: str = "resize_pad"
    resize_range: tuple[float, float] = (0.8, 1.0)
    seed: int = 0
    _rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = self.resize_range
        if not (0.5 < lo <= hi <= 1.0):
            raise ModelError("resize_range must lie in (0.5, 1.0]")
        self.reseed(self.seed)

    @property
    def model_id(self) -> str:
        return f"{self.inner.model_id}+{self.kind}"

    @property
    def class_count(self) -> int:
        return self.inner.class_count

    def reseed(self, seed: int) -> None:
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def _transform(self, images: np.ndarray) -> np.ndarray:
        lo, hi = self.resize_range
        out = np.empty_like(images)
        for i in range(len(images)):
            factor = float(self._rng.uniform(lo, hi))
            out[i] = resize_and_pad(images[i], factor, self._rng)
        return out

    def logits(self, images: np.ndarray) -> np.ndarray:
        return self.inner.logits(self._transform(images))

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.logits(images).argmax(axis=1)


def resize_pad_defense(model: ClassifierModel, resize_range: tuple[float, float] = (0.8, 1.0),
                       seed: int = 0) -> DefenseWrapper:
    return DefenseWrapper(inner=model, resize_range=resize_range, seed=seed)


def save_classifier(path, model: ClassifierModel) -> None:
    meta = {
        "kind": "toy_cnn",
        "class_count": model.class_count,
        "input_shape": list(model.input_shape),
        "model_id": model.model_id,
        "clean_error": model.clean_error,
    }
    arrays = {name: p.detach().numpy() for name, p in model.net.state_dict().items()}
    save_arrays(path, meta, arrays)


def load_classifier(path) -> ClassifierModel:
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "toy_cnn":
        raise ModelError(f"unknown classifier kind in {path}")
    model = build_toy_cnn(meta["class_count"], tuple(meta["input_shape"]),
                          seed=0, model_id=meta["model_id"])
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    model.net.load_state_dict(state)
    model.clean_error = meta.get("clean_error")
    model.net.eval()
    return model
