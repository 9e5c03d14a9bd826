"""
Accuracy metrics at fine and coarse granularity, the within-coarse ratio, the
targeted robust accuracy and the evaluation harness that aggregates them.

Metric functions raise UndefinedMetricError on empty denominators; reports store
such values as None so they render as absent rather than 0.
"""

import logging
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np
from scipy.stats import binomtest

from har_kit.attacks import attack_batch
from har_kit.data import Dataset
from har_kit.errors import DimensionError, HierarchyMismatchError, UndefinedMetricError
from har_kit.hierarchy import Hierarchy
from har_kit.models import ProbabilisticClassifier
from har_kit.types import AttackOutcome, AttackSpec, AttackSummary, EvalReport
from har_kit.utils import make_rng

logger = logging.getLogger(__name__)

SUBSAMPLE_STREAM = 0x5AB5

Labels = Sequence[int] | np.ndarray


def _labels(preds: Labels, labels: Labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds)
    if p.ndim == 2:
        p = np.argmax(p, axis=1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    p = p.astype(np.int64).reshape(-1)
    if p.shape != y.shape:
        raise DimensionError(f"{p.size} predictions for {y.size} labels")
    if y.size == 0:
        raise UndefinedMetricError("no samples")
    return p, y


def fine_accuracy(preds: Labels, labels: Labels) -> float:
    """
    Fraction of predictions equal to the label. ``preds`` may be class ids or
    rows of probabilities.
    """
    p, y = _labels(preds, labels)
    return float(np.mean(p == y))


def coarse_accuracy(preds: Labels, labels: Labels, h: Hierarchy) -> float:
    p, y = _labels(preds, labels)
    return float(np.mean(h.coarse_labels(p) == h.coarse_labels(y)))


def within_coarse_ratio(preds: Labels, labels: Labels, h: Hierarchy) -> float:
    """
    Among fine-misclassified samples, the fraction still in the true coarse class.
    """
    p, y = _labels(preds, labels)
    wrong = p != y
    if not wrong.any():
        raise UndefinedMetricError("no fine misclassifications")
    return float(np.mean(h.coarse_labels(p[wrong]) == h.coarse_labels(y[wrong])))


def targeted_robust_accuracy(outcomes: Sequence[AttackOutcome]) -> float:
    """
    Fraction of samples where no tried target was reached.
    """
    if not outcomes:
        raise UndefinedMetricError("no attack outcomes")
    return float(np.mean([not o.succeeded_target for o in outcomes]))


def binomial_interval(
    successes: int, trials: int, confidence: float = 0.95
) -> tuple[float, float]:
    """
    Clopper-Pearson interval for a binomial proportion.
    """
    if trials <= 0:
        raise UndefinedMetricError("binomial interval over zero trials")
    ci = binomtest(successes, trials).proportion_ci(
        confidence_level=confidence, method="exact"
    )
    return float(ci.low), float(ci.high)


def exceeds_chance(
    successes: int, trials: int, chance: float, confidence: float = 0.95
) -> bool:
    low, _ = binomial_interval(successes, trials, confidence)
    return low > chance


def _defined(fn: Callable[..., float], *args: Any) -> float | None:
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def spec_of(outcome: AttackOutcome) -> AttackSpec:
    """
    Attack spec echoed by a stored outcome (seed and alpha are not recorded).
    """
    return AttackSpec(
        norm=outcome.norm,
        epsilon=outcome.eps,
        iterations=outcome.k,
        mode=outcome.mode,
        target=outcome.targets_tried[0] if outcome.mode == "targeted" else None,
    )


def summarize(
    outcomes: Sequence[AttackOutcome], h: Hierarchy, spec: AttackSpec
) -> AttackSummary:
    preds = np.array([o.prediction for o in outcomes], dtype=np.int64)
    labels = np.array([o.label for o in outcomes], dtype=np.int64)
    targeted = spec.is_hierarchical or spec.mode == "targeted"
    return AttackSummary(
        spec=spec,
        n_samples=len(outcomes),
        fine_acc=_defined(fine_accuracy, preds, labels),
        coarse_acc=_defined(coarse_accuracy, preds, labels, h),
        within_coarse_ratio=_defined(within_coarse_ratio, preds, labels, h),
        targeted_robust_acc=(
            _defined(targeted_robust_accuracy, outcomes) if targeted else None
        ),
    )


def subsample_indices(n: int, size: int, seed: int) -> np.ndarray:
    """
    Sorted random subset drawn from its own stream, independent of attack seeds.
    """
    if size >= n:
        if size > n:
            logger.warning("subsample size %d exceeds %d samples; using all", size, n)
        return np.arange(n)
    rng = make_rng(seed, SUBSAMPLE_STREAM)
    return np.sort(rng.choice(n, size=size, replace=False))


def build_report(
    summaries: Sequence[AttackSummary],
    clean_preds: np.ndarray | None,
    labels: np.ndarray | None,
    h: Hierarchy,
    seed: int = 0,
    config_hash: str = "",
) -> EvalReport:
    """
    Top-level attacked metrics come from the first non-hierarchical spec, the
    targeted robust accuracy from the first worst-case spec (or, failing that,
    the first hierarchical one).
    """
    report = EvalReport(
        attacks=list(summaries),
        seed=seed,
        config_hash=config_hash,
        hierarchy_hash=h.digest(),
    )
    if clean_preds is not None and labels is not None:
        report.n_samples = int(len(labels))
        report.clean_fine_acc = _defined(fine_accuracy, clean_preds, labels)
        report.clean_coarse_acc = _defined(coarse_accuracy, clean_preds, labels, h)
        report.clean_within_coarse_ratio = _defined(
            within_coarse_ratio, clean_preds, labels, h
        )

    flat = [s for s in summaries if not s.spec.is_hierarchical]
    if flat:
        first = flat[0]
        report.attack_spec = first.spec
        report.attacked_fine_acc = first.fine_acc
        report.attacked_coarse_acc = first.coarse_acc
        report.within_coarse_ratio = first.within_coarse_ratio
        if clean_preds is None:
            report.n_samples = first.n_samples

    hier = [s for s in summaries if s.spec.mode == "worst_case_hierarchical"] or [
        s for s in summaries if s.spec.is_hierarchical
    ]
    if hier:
        report.targeted_spec = hier[0].spec
        report.targeted_robust_acc = hier[0].targeted_robust_acc
        report.n_targeted = hier[0].n_samples
    return EvalReport.model_validate(report.model_dump())


def evaluate(
    model: ProbabilisticClassifier,
    dataset: Dataset,
    h: Hierarchy,
    specs: Sequence[AttackSpec],
    subsample_size: int = 1000,
    subsample_seed: int = 0,
    workers: int = 1,
    seed: int = 0,
    config_hash: str = "",
) -> tuple[EvalReport, dict[int, list[AttackOutcome]]]:
    """
    Clean metrics and untargeted attacks over the full set; hierarchical
    attacks over a seeded subsample. Returns the report and the outcomes per
    spec position.
    """
    if dataset.hierarchy_hash != h.digest():
        raise HierarchyMismatchError(h.digest(), dataset.hierarchy_hash)
    x, y = dataset.features, dataset.fine_labels
    clean_preds = model.predict_labels(x)
    subset = subsample_indices(len(dataset), subsample_size, subsample_seed)

    summaries = []
    outcomes: dict[int, list[AttackOutcome]] = {}
    for pos, spec in enumerate(specs):
        indices = subset if spec.is_hierarchical else np.arange(len(dataset))
        result = attack_batch(model, h, x, y, spec, indices=indices, workers=workers)
        outcomes[pos] = result
        summaries.append(summarize(result, h, spec))
        logger.info(
            "%s (%s): %s",
            spec.label(),
            spec.mode,
            summaries[-1].model_dump(exclude={"spec"}),
        )

    report = build_report(
        summaries, clean_preds, y, h, seed=seed, config_hash=config_hash
    )
    return report, outcomes
