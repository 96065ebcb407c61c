"""fedspectral: a deterministic workbench for Byzantine-robust federated learning.

The package bundles a spectral-subspace Krum defense, eight classical robust
aggregation baselines, seven model-poisoning attack scenarios, a desk-scale
federated simulator over synthetic non-IID data, and an experiment harness
that emits AUC summaries, overhead tables, and accuracy curves.
"""

__version__ = "0.1.0"

from .aggregators import (
    AggregationResult,
    RuleConfig,
    RULE_NAMES,
    bulyan,
    coord_median_rule,
    dnc_cluster,
    dnc_pmf,
    full_krum,
    geometric_median,
    krum_scores,
    make_aggregator,
    mean_rule,
    multi_krum,
    trimmed_mean,
)
from .attacks import ATTACK_NAMES, AttackContext, AttackScenario, apply_attack
from .config import ConfigError, ExperimentConfig, load_config
from .data import ClientPartition, SyntheticDataset, dirichlet_partition, generate_dataset
from .linalg import (
    BufferMatrix,
    SubspaceModel,
    coordinate_median,
    nearest_rank_quantile,
    orthogonal_energy,
    pairwise_sq_distances,
    pca_topk,
)
from .models import ModelSpec
from .rng import derive_seed, make_rng
from .sim import FederatedRun, RoundRecord, compute_metrics
from .spectral_krum import SpectralKrum, SpectralKrumConfig, build_subspace

__all__ = [
    "__version__",
    "AggregationResult",
    "RuleConfig",
    "RULE_NAMES",
    "ATTACK_NAMES",
    "AttackContext",
    "AttackScenario",
    "apply_attack",
    "bulyan",
    "BufferMatrix",
    "ClientPartition",
    "ConfigError",
    "coordinate_median",
    "coord_median_rule",
    "compute_metrics",
    "derive_seed",
    "dirichlet_partition",
    "dnc_cluster",
    "dnc_pmf",
    "ExperimentConfig",
    "FederatedRun",
    "full_krum",
    "generate_dataset",
    "geometric_median",
    "krum_scores",
    "load_config",
    "make_aggregator",
    "make_rng",
    "mean_rule",
    "ModelSpec",
    "multi_krum",
    "nearest_rank_quantile",
    "orthogonal_energy",
    "pairwise_sq_distances",
    "pca_topk",
    "RoundRecord",
    "SpectralKrum",
    "SpectralKrumConfig",
    "SubspaceModel",
    "SyntheticDataset",
    "trimmed_mean",
    "build_subspace",
]
