"""The gradient transformer module: T(g) = RN(conv(g)) + g.

conv is a 1x1 convolution (bias enabled) mixing channels at every spatial
location; RN is the Region Norm layer.  With gamma = beta = 0 the residual
branch vanishes and T is exactly the identity, so inserting the module into a
sign attack does not change its initial behavior.  Four probes (a, b, c, d)
are captured on every forward: module input, conv output, RN output, and the
identity-branch copy of the input.
"""

from dataclasses import dataclass

import numpy as np

from .artifacts import PerturbationArtifact
from .partition import RegionPartition, RegionSplitSpec
from .region_norm import (
    RNCache,
    RNState,
    init_rn_state,
    rn_backward,
    rn_forward_eval,
    rn_forward_train,
)


@dataclass
class TransformerParams:
    """Trainable parameters plus the bound partition.

    conv_weight is C x C (out, in); total trainable scalar count is
    C^2 + C + 2K (moving statistics are tracked, not trained).
    """

    conv_weight: np.ndarray
    conv_bias: np.ndarray
    rn_state: RNState
    partition: RegionPartition
    split_spec: RegionSplitSpec | None = None

    @property
    def channels(self) -> int:
        return self.conv_weight.shape[0]

    def parameter_count(self) -> int:
        c = self.channels
        return c * c + c + 2 * self.partition.k_regions

    def copy(self) -> "TransformerParams":
        return TransformerParams(
            self.conv_weight.copy(), self.conv_bias.copy(),
            self.rn_state.copy(), self.partition, self.split_spec,
        )


@dataclass
class ProbeRecord:
    """Tensors tapped at the four wire positions of the module."""

    a: np.ndarray  # module input
    b: np.ndarray  # conv output
    c: np.ndarray  # RN output (residual-branch output)
    d: np.ndarray  # identity-branch copy of the input


@dataclass
class TransformCache:
    """Saved intermediates for the manual backward pass (train mode only)."""

    g: np.ndarray
    rn_cache: RNCache | None


@dataclass
class TransformerGrads:
    conv_weight: np.ndarray
    conv_bias: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray


def init_transformer(channels: int, partition: RegionPartition, seed: int,
                     split_spec: RegionSplitSpec | None = None,
                     conv_std: float = 0.01) -> TransformerParams:
    """Seeded init: small random conv weight, zero bias, zero gamma/beta.

    The zero-initialized Region Norm makes T(g) = g exactly for any g.
    """
    if channels < 1:
        raise ValueError("channels must be >= 1")
    rng = np.random.default_rng(seed)
    return TransformerParams(
        conv_weight=rng.normal(0.0, conv_std, size=(channels, channels)),
        conv_bias=np.zeros(channels),
        rn_state=init_rn_state(partition.k_regions),
        partition=partition,
        split_spec=split_spec,
    )


def _conv1x1(g: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return np.einsum("oc,nchw->nohw", weight, g) + bias[None, :, None, None]


def transform(g: np.ndarray, params: TransformerParams, mode: str = "eval"):
    """Apply T to a batch of gradients; returns (g_hat, probes, cache).

    mode "train" uses batch statistics and updates the moving averages;
    mode "eval" uses the moving statistics and is pure.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if g.ndim != 4 or g.shape[1] != params.channels:
        raise ValueError(f"expected N x {params.channels} x H x W input, got {g.shape}")
    conv_out = _conv1x1(g, params.conv_weight, params.conv_bias)
    if mode == "train":
        rn_out, rn_cache = rn_forward_train(conv_out, params.partition, params.rn_state)
    else:
        rn_out = rn_forward_eval(conv_out, params.partition, params.rn_state)
        rn_cache = None
    g_hat = rn_out + g
    probes = ProbeRecord(a=g, b=conv_out, c=rn_out, d=g)
    return g_hat, probes, TransformCache(g=g, rn_cache=rn_cache)


def transform_backward(grad_ghat: np.ndarray, cache: TransformCache,
                       params: TransformerParams):
    """Backward through a train-mode forward.

    Returns (grads, grad_g) where grads covers the trainable parameters and
    grad_g is the gradient w.r.t. the module input (identity branch included).
    """
    if cache.rn_cache is None:
        raise ValueError("backward requires a cache from a train-mode forward")
    grad_conv_out, grad_gamma, grad_beta = rn_backward(
        grad_ghat, cache.rn_cache, params.rn_state)
    grad_weight = np.einsum("nohw,nchw->oc", grad_conv_out, cache.g)
    grad_bias = grad_conv_out.sum(axis=(0, 2, 3))
    grad_g = np.einsum("oc,nohw->nchw", params.conv_weight, grad_conv_out) + grad_ghat
    grads = TransformerGrads(
        conv_weight=grad_weight, conv_bias=grad_bias,
        gamma=grad_gamma, beta=grad_beta,
    )
    return grads, grad_g


def sign_pos_zero(x: np.ndarray) -> np.ndarray:
    """Sign function with sign(0) = +1 (total, fixed for reproducibility)."""
    return np.where(x >= 0, 1.0, -1.0)


def universal_perturbation(params: TransformerParams, epsilon: float,
                           shape: tuple[int, int, int],
                           source_model_id: str = "", method: str = "rhp",
                           seed: int = 0) -> PerturbationArtifact:
    """u = (epsilon/255) * sign(T(0)) in eval mode; values exactly +/- eps.

    The fixed zero input makes the output depend only on the trained
    parameters, so u is constant within each (region, channel) cell.
    """
    c, h, w = shape
    z = np.zeros((1, c, h, w))
    t0, _, _ = transform(z, params, mode="eval")
    u = (epsilon / 255.0) * sign_pos_zero(t0[0])
    return PerturbationArtifact(
        tensor=u, epsilon=epsilon, split_spec=params.split_spec,
        source_model_id=source_model_id, method=method, seed=seed,
    )


def save_transformer(path, params: TransformerParams) -> None:
    """Checkpoint the module; requires a split spec to rebuild the partition."""
    if params.split_spec is None:
        raise ValueError("cannot checkpoint a transformer without a split spec")
    from .artifacts import save_arrays

    meta = {
        "kind": "gradient_transformer",
        "split": params.split_spec.to_dict(),
        "height": params.partition.height,
        "width": params.partition.width,
        "momentum": params.rn_state.momentum,
        "stab_const": params.rn_state.stab_const,
    }
    save_arrays(path, meta, {
        "conv_weight": params.conv_weight,
        "conv_bias": params.conv_bias,
        "gamma": params.rn_state.gamma,
        "beta": params.rn_state.beta,
        "moving_mean": params.rn_state.moving_mean,
        "moving_var": params.rn_state.moving_var,
    })


def load_transformer(path) -> TransformerParams:
    from .artifacts import load_arrays
    from .partition import build_partition

    meta, arrays = load_arrays(path)
    if meta.get("kind") != "gradient_transformer":
        raise ValueError(f"not a transformer checkpoint: {path}")
    spec = RegionSplitSpec.from_dict(meta["split"])
    partition = build_partition(spec, int(meta["height"]), int(meta["width"]))
    state = RNState(
        gamma=arrays["gamma"], beta=arrays["beta"],
        moving_mean=arrays["moving_mean"], moving_var=arrays["moving_var"],
        momentum=float(meta["momentum"]), stab_const=float(meta["stab_const"]),
    )
    return TransformerParams(
        conv_weight=arrays["conv_weight"], conv_bias=arrays["conv_bias"],
        rn_state=state, partition=partition, split_spec=spec,
    )


def probe_fractions(probes: ProbeRecord, threshold: float = 10.0):
    """Fractions of elements where one probe dominates its reference.

    Returns (frac_b_over_a, frac_c_over_d): the share of elements with
    |b| > threshold * |a| and |c| > threshold * |d|.
    """
    total = probes.a.size
    frac_b = float((np.abs(probes.b) > threshold * np.abs(probes.a)).sum()) / total
    frac_c = float((np.abs(probes.c) > threshold * np.abs(probes.d)).sum()) / total
    return frac_b, frac_c
