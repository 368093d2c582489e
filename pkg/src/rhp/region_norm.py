"""Region Norm: per-region normalization with trainable per-region scale/shift.

Statistics pool over the batch axis, the channel axis, and all pixels of a
region, so each region k normalizes m_k = N * C * |P_k| scalars.  The backward
pass is analytic (no autograd): grad_x couples every pixel in a region through
the shared mean- and variance-direction terms.
"""

from dataclasses import dataclass

import numpy as np

from .partition import RegionPartition


class RegionNormError(ValueError):
    """Shape mismatch or non-finite input to a Region Norm operation."""


@dataclass
class RNState:
    """Trainable and tracked state of one Region Norm layer.

    gamma/beta are the per-region scale and shift; moving_mean/moving_var are
    the inference-time statistics, updated in training mode as
    moving <- (1 - momentum) * moving + momentum * batch_stat.
    moving_var stores variance and is converted to std at use.
    """

    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_var: np.ndarray
    momentum: float = 0.1
    stab_const: float = 1e-5

    def __post_init__(self):
        k = self.gamma.shape[0]
        if self.beta.shape != (k,) or self.moving_mean.shape != (k,) or self.moving_var.shape != (k,):
            raise RegionNormError("gamma/beta/moving stats must all have length K")
        if not 0.0 < self.momentum < 1.0:
            raise RegionNormError("momentum must lie in (0, 1)")
        if self.stab_const <= 0.0:
            raise RegionNormError("stab_const must be positive")
        if (self.moving_var < 0).any():
            raise RegionNormError("moving_var must be nonnegative")

    @property
    def k_regions(self) -> int:
        return self.gamma.shape[0]

    def copy(self) -> "RNState":
        return RNState(
            self.gamma.copy(), self.beta.copy(),
            self.moving_mean.copy(), self.moving_var.copy(),
            self.momentum, self.stab_const,
        )


def init_rn_state(k_regions: int, momentum: float = 0.1, stab_const: float = 1e-5) -> RNState:
    """Zero-initialized state: gamma = beta = 0, so the layer outputs zero."""
    return RNState(
        gamma=np.zeros(k_regions),
        beta=np.zeros(k_regions),
        moving_mean=np.zeros(k_regions),
        moving_var=np.ones(k_regions),
        momentum=momentum,
        stab_const=stab_const,
    )


@dataclass
class RNCache:
    """Intermediates saved by the training-mode forward for the backward pass."""

    x_norm: np.ndarray       # normalized input, same shape as x
    sigma: np.ndarray        # per-region std (stabilized), length K
    m: np.ndarray            # per-region scalar counts m_k = N*C*|P_k|
    partition: RegionPartition


def _check_input(x: np.ndarray, partition: RegionPartition, state: RNState) -> None:
    if x.ndim != 4:
        raise RegionNormError(f"expected N x C x H x W input, got shape {x.shape}")
    if x.shape[2:] != (partition.height, partition.width):
        raise RegionNormError(
            f"input spatial dims {x.shape[2:]} do not match partition "
            f"{partition.height}x{partition.width}"
        )
    if state.k_regions != partition.k_regions:
        raise RegionNormError("RNState K does not match partition K")
    if not np.isfinite(x).all():
        raise RegionNormError("non-finite values in input")


def _region_sum(values: np.ndarray, labels_flat: np.ndarray, k: int) -> np.ndarray:
    """Sum an N x C x H x W tensor per region, pooling batch and channels."""
    return np.bincount(labels_flat, weights=values.sum(axis=(0, 1)).ravel(), minlength=k)


def rn_forward_train(x: np.ndarray, partition: RegionPartition, state: RNState):
    """Training-mode forward: batch statistics, moving-average update.

    Returns (y, cache) with y_i = gamma_k * x_norm_i + beta_k.  Mutates
    state.moving_mean / state.moving_var.
    """
    _check_input(x, partition, state)
    n, c = x.shape[:2]
    k = partition.k_regions
    labels = partition.label_map
    labels_flat = labels.ravel()
    m = (n * c * partition.region_sizes).astype(np.float64)

    mu = _region_sum(x, labels_flat, k) / m
    centered = x - mu[labels]
    var = _region_sum(centered ** 2, labels_flat, k) / m
    sigma = np.sqrt(var + state.stab_const)
    x_norm = centered / sigma[labels]
    y = state.gamma[labels] * x_norm + state.beta[labels]

    mom = state.momentum
    state.moving_mean = (1.0 - mom) * state.moving_mean + mom * mu
    state.moving_var = (1.0 - mom) * state.moving_var + mom * var

    return y, RNCache(x_norm=x_norm, sigma=sigma, m=m, partition=partition)


def rn_forward_eval(x: np.ndarray, partition: RegionPartition, state: RNState) -> np.ndarray:
    """Inference-mode forward using the moving statistics; no state mutation."""
    _check_input(x, partition, state)
    labels = partition.label_map
    sigma = np.sqrt(state.moving_var + state.stab_const)
    x_norm = (x - state.moving_mean[labels]) / sigma[labels]
    return state.gamma[labels] * x_norm + state.beta[labels]


def rn_backward(grad_y: np.ndarray, cache: RNCache, state: RNState):
    """Analytic backward pass of the training-mode forward.

    Returns (grad_x, grad_gamma, grad_beta).  grad_x for pixel i in region k:

        (m_k * d_xnorm_i - sum_j d_xnorm_j - xnorm_i * sum_j d_xnorm_j xnorm_j)
        / (m_k * sigma_k)

    with d_xnorm_i = grad_y_i * gamma_k.
    """
    partition = cache.partition
    labels = partition.label_map
    labels_flat = labels.ravel()
    k = partition.k_regions
    if grad_y.shape != cache.x_norm.shape:
        raise RegionNormError(
            f"grad shape {grad_y.shape} does not match cache shape {cache.x_norm.shape}"
        )

    grad_beta = _region_sum(grad_y, labels_flat, k)
    grad_gamma = _region_sum(grad_y * cache.x_norm, labels_flat, k)

    d_xnorm = grad_y * state.gamma[labels]
    sum_d = _region_sum(d_xnorm, labels_flat, k)
    sum_d_xnorm = _region_sum(d_xnorm * cache.x_norm, labels_flat, k)
    grad_x = (
        cache.m[labels] * d_xnorm
        - sum_d[labels]
        - cache.x_norm * sum_d_xnorm[labels]
    ) / (cache.m[labels] * cache.sigma[labels])
    return grad_x, grad_gamma, grad_beta
