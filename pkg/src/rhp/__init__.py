"""Regionally homogeneous universal perturbations at desk scale."""

from .artifacts import PerturbationArtifact, load_artifact, save_artifact
from .attacks import AttackConfig, apply_universal, dim, fgsm, mim, op_baseline, rhp_attack, rp_baseline
from .datasets import Dataset, generate_synthetic_dataset, load_dataset
from .evaluation import (
    EvalReport,
    HomogeneityReport,
    error_increase,
    error_rate,
    homogeneity_score,
    k_sweep,
    transfer_matrix,
    universality_gap,
)
from .models import (
    ClassifierModel,
    DefenseWrapper,
    adv_train_classifier,
    build_toy_cnn,
    input_gradient,
    resize_pad_defense,
    train_classifier,
)
from .partition import RegionPartition, RegionSplitSpec, build_partition, region_pixel_sets
from .region_norm import RNState, init_rn_state, rn_backward, rn_forward_eval, rn_forward_train
from .training import TrainConfig, TrainLog, train_transformer, train_tu_variant
from .transformer import (
    ProbeRecord,
    TransformerParams,
    init_transformer,
    load_transformer,
    probe_fractions,
    save_transformer,
    transform,
    universal_perturbation,
)

__version__ = "0.1.0"
