# Init file for har_kit package
from har_kit.attacks import (
    attack_batch,
    coarse_net_attack,
    fgsm_attack,
    pgd_attack,
    project,
    random_init,
    worst_case_hierarchical_attack,
)
from har_kit.checkpoint import load_checkpoint, save_checkpoint
from har_kit.data import Dataset, generate, load_dataset, save_dataset, split
from har_kit.errors import HarKitError
from har_kit.hierarchy import (
    CIFAR10_HIERARCHY,
    CIFAR100_HIERARCHY,
    Hierarchy,
    candidate_targets,
    coarse_of,
    parse_hierarchy,
    random_coarse_chance,
)
from har_kit.metrics import (
    coarse_accuracy,
    evaluate,
    fine_accuracy,
    targeted_robust_accuracy,
    within_coarse_ratio,
)
from har_kit.models import (
    Classifier,
    HarModel,
    build_model,
    coarse_marginal,
    har_compose,
    har_predict,
    predict,
)
from har_kit.tensor import Tensor, backward
from har_kit.training import train, train_har
from har_kit.types import (
    ArchSpec,
    AttackOutcome,
    AttackSpec,
    EvalReport,
    ExperimentConfig,
    SynthSpec,
    TrainConfig,
)

__all__ = [
    "Tensor",
    "backward",
    "Hierarchy",
    "parse_hierarchy",
    "coarse_of",
    "candidate_targets",
    "random_coarse_chance",
    "CIFAR10_HIERARCHY",
    "CIFAR100_HIERARCHY",
    "Classifier",
    "HarModel",
    "build_model",
    "predict",
    "har_predict",
    "har_compose",
    "coarse_marginal",
    "save_checkpoint",
    "load_checkpoint",
    "random_init",
    "project",
    "pgd_attack",
    "fgsm_attack",
    "worst_case_hierarchical_attack",
    "coarse_net_attack",
    "attack_batch",
    "train",
    "train_har",
    "fine_accuracy",
    "coarse_accuracy",
    "within_coarse_ratio",
    "targeted_robust_accuracy",
    "evaluate",
    "Dataset",
    "generate",
    "split",
    "save_dataset",
    "load_dataset",
    "ArchSpec",
    "AttackSpec",
    "AttackOutcome",
    "TrainConfig",
    "SynthSpec",
    "EvalReport",
    "ExperimentConfig",
    "HarKitError",
]
