from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

Norm = Literal["linf", "l2"]

AttackMode = Literal[
    "untargeted",
    "fgsm",
    "targeted",
    "worst_case_hierarchical",
    "average_case_hierarchical",
    "best_case_hierarchical",
    "coarse_net_targeted",
]

TrainMethod = Literal["standard", "adv", "adv_t", "trades", "adv_hce"]

HIERARCHICAL_MODES = (
    "worst_case_hierarchical",
    "average_case_hierarchical",
    "best_case_hierarchical",
    "coarse_net_targeted",
)

DEFAULT_EPSILON = 8 / 255
DEFAULT_TRADES_BETA = 9.0


class AttackSpec(BaseModel):
    """
    Perturbation budget, step rule and target selection for one attack.

    ``alpha`` may be given as ``None`` or ``"auto"``; it then resolves to epsilon / 4.
    """

    norm: Norm = "linf"
    epsilon: float = Field(default=DEFAULT_EPSILON, ge=0)
    alpha: float = Field(default=DEFAULT_EPSILON / 4, ge=0)
    iterations: int = Field(default=20, ge=1)
    mode: AttackMode = "untargeted"
    target: int | None = Field(default=None, ge=0)
    random_init: bool = True
    seed: int = 0

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="before")
    @classmethod
    def _resolve_alpha(cls, data: Any) -> Any:
        if isinstance(data, dict):
            alpha = data.get("alpha")
            if alpha is None or alpha == "auto":
                eps = float(data.get("epsilon", DEFAULT_EPSILON))
                data = {**data, "alpha": eps / 4}
        return data

    @model_validator(mode="after")
    def _check_target(self) -> "AttackSpec":
        if self.mode == "targeted" and self.target is None:
            raise ValueError("targeted mode needs a target label")
        return self

    @property
    def is_hierarchical(self) -> bool:
        return self.mode in HIERARCHICAL_MODES

    def with_seed(self, seed: int) -> "AttackSpec":
        return self.model_copy(update={"seed": seed})

    def label(self) -> str:
        name = "FGSM" if self.mode == "fgsm" else f"PGD{self.iterations}"
        return f"{name} {self.norm} eps={self.epsilon:.4g}"


class AttackOutcome(BaseModel):
    """
    Result of attacking one sample. ``x_adv`` is kept in memory only; the
    JSON-lines record carries the flags, targets and perturbation norms.
    """

    index: int = 0
    mode: AttackMode = "untargeted"
    norm: Norm = "linf"
    eps: float = 0.0
    k: int = 1
    label: int
    prediction: int
    succeeded_fine: bool
    succeeded_coarse: bool
    succeeded_target: bool | None = None
    succeeded_coarse_net: bool | None = None
    target_level: Literal["fine", "coarse"] = "fine"
    targets_tried: list[int] = Field(default_factory=list)
    iterations_used: int = 0
    l2_delta: float = 0.0
    linf_delta: float = 0.0
    x_adv: np.ndarray | None = Field(default=None, exclude=True)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _check_implications(self) -> "AttackOutcome":
        if self.succeeded_target and not self.succeeded_coarse:
            raise ValueError("a reached cross-coarse target implies coarse success")
        if self.succeeded_coarse and not self.succeeded_fine:
            raise ValueError("coarse success implies fine success")
        return self

    def to_record(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


class ChanceBaseline(BaseModel):
    """
    Chance levels for a uniformly random wrong label.
    """

    fine_cross_coarse: float
    coarse_correct: float
    coarse_wrong: float


def default_inner_mode(method: str) -> AttackMode:
    return "average_case_hierarchical" if method == "adv_t" else "untargeted"


class LrSchedule(BaseModel):
    initial: float = Field(default=0.1, gt=0)
    decay_factor: float = Field(default=0.1, gt=0)
    decay_epochs: list[int] = Field(default_factory=lambda: [30, 45])

    model_config = ConfigDict(frozen=True)


class TrainConfig(BaseModel):
    """
    Training procedure for one model. Adversarial methods get a default inner
    attack (10-step linf PGD, epsilon 8/255, step epsilon/4) when none is given.
    """

    method: TrainMethod = "standard"
    epochs: int = Field(default=60, ge=0)
    batch_size: int = Field(default=128, ge=1)
    schedule: LrSchedule = Field(default_factory=LrSchedule)
    momentum: float = Field(default=0.9, ge=0)
    weight_decay: float = Field(default=2e-4, ge=0)
    attack: AttackSpec | None = None
    beta: float | None = Field(default=None, ge=0)
    inner_loop: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_method_fields(self) -> "TrainConfig":
        if self.method == "trades":
            if self.beta is None:
                self.beta = DEFAULT_TRADES_BETA
        elif self.beta is not None:
            raise ValueError("beta only applies to the trades method")

        if self.method == "standard":
            if self.attack is not None:
                raise ValueError("standard training takes no inner attack")
        elif self.attack is None:
            mode = default_inner_mode(self.method)
            self.attack = AttackSpec(iterations=10, mode=mode)
        return self


class SynthSpec(BaseModel):
    """
    Gaussian-blob dataset with coarse clusters that are farther apart than the
    fine clusters inside them.
    """

    coarse_count: int = Field(default=2, ge=1)
    fines_per_coarse: int = Field(default=2, ge=1)
    dim: int = Field(default=8, ge=1)
    per_class: int = Field(default=200, ge=1)
    coarse_separation: float = 0.6
    fine_separation: float = 0.25
    noise_sigma: float = Field(default=0.05, ge=0)
    seed: int = 0

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_separation(self) -> "SynthSpec":
        if not self.coarse_separation > self.fine_separation > 0:
            raise ValueError("need coarse_separation > fine_separation > 0")
        return self


class ArchSpec(BaseModel):
    """
    MLP layout. ``flat`` uses ``hidden`` for one classifier over all fine labels;
    ``har`` uses ``coarse_hidden`` / ``fine_hidden`` (falling back to ``hidden``)
    for the coarse net and every fine net.
    """

    kind: Literal["flat", "har"] = "flat"
    input_dim: int = Field(ge=1)
    hidden: list[int] = Field(default_factory=lambda: [32])
    coarse_hidden: list[int] | None = None
    fine_hidden: list[int] | None = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_widths(self) -> "ArchSpec":
        for widths in (self.hidden, self.coarse_hidden or [], self.fine_hidden or []):
            if any(w < 1 for w in widths):
                raise ValueError("hidden widths must be positive")
        return self

    @property
    def coarse_widths(self) -> list[int]:
        return self.coarse_hidden if self.coarse_hidden is not None else self.hidden

    @property
    def fine_widths(self) -> list[int]:
        return self.fine_hidden if self.fine_hidden is not None else self.hidden


class AttackSummary(BaseModel):
    """
    Aggregate metrics for one attack spec; undefined values are None.
    """

    spec: AttackSpec
    n_samples: int
    fine_acc: float | None = None
    coarse_acc: float | None = None
    within_coarse_ratio: float | None = None
    targeted_robust_acc: float | None = None


class EvalReport(BaseModel):
    clean_fine_acc: float | None = None
    clean_coarse_acc: float | None = None
    clean_within_coarse_ratio: float | None = None
    attacked_fine_acc: float | None = None
    attacked_coarse_acc: float | None = None
    within_coarse_ratio: float | None = None
    targeted_robust_acc: float | None = None
    n_samples: int = 0
    n_targeted: int = 0
    attack_spec: AttackSpec | None = None
    targeted_spec: AttackSpec | None = None
    attacks: list[AttackSummary] = Field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    hierarchy_hash: str = ""

    @model_validator(mode="after")
    def _check_rates(self) -> "EvalReport":
        rates = [
            self.clean_fine_acc,
            self.clean_coarse_acc,
            self.clean_within_coarse_ratio,
            self.attacked_fine_acc,
            self.attacked_coarse_acc,
            self.within_coarse_ratio,
            self.targeted_robust_acc,
        ]
        if any(r is not None and not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("rates must lie in [0, 1]")
        if (
            self.attacked_fine_acc is not None
            and self.attacked_coarse_acc is not None
            and self.attacked_fine_acc > self.attacked_coarse_acc
        ):
            raise ValueError("fine accuracy cannot exceed coarse accuracy")
        return self


class EvalOptions(BaseModel):
    subsample_size: int = Field(default=1000, ge=1)
    subsample_seed: int = 0
    workers: int = Field(default=1, ge=1)


class ExperimentConfig(BaseModel):
    """
    End-to-end run description, usually loaded from YAML.
    """

    hierarchy: Path | None = None
    train_data: Path | None = None
    test_data: Path | None = None
    synth: SynthSpec | None = None
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    arch: ArchSpec
    train: TrainConfig = Field(default_factory=TrainConfig)
    attacks: list[AttackSpec] = Field(default_factory=list)
    eval: EvalOptions = Field(default_factory=EvalOptions)
    seed: int = 0
    output_dir: Path = Path("runs/default")

    @model_validator(mode="after")
    def _check_sources(self) -> "ExperimentConfig":
        from_files = self.train_data is not None or self.test_data is not None
        if from_files == (self.synth is not None):
            raise ValueError("give either synth or train_data/test_data, not both")
        if from_files:
            if self.train_data is None or self.test_data is None:
                raise ValueError("train_data and test_data go together")
            if self.hierarchy is None:
                raise ValueError("dataset files need a hierarchy file")
        for path in (self.hierarchy, self.train_data, self.test_data):
            if path is not None and not path.exists():
                raise ValueError(f"path does not exist: {path}")
        return self

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        return cls.model_validate(raw)
