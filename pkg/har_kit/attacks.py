"""
FGSM and PGD attacks under linf / l2 budgets, the worst-case hierarchical
targeted attack, its average/best-case variants and the coarse-network attack.

All kernels work on float64 arrays of shape [n, d] (a 1-D sample is treated as
one row). The box is [0, 1] and every emitted point satisfies both the norm
budget and the box.
"""

import json
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Literal

import numpy as np

from har_kit.errors import NoCrossCoarseTargetError, SpecError
from har_kit.hierarchy import Hierarchy, candidate_targets, flat_hierarchy
from har_kit.models import HarModel, ProbabilisticClassifier
from har_kit.tensor import Tensor, backward, cross_entropy
from har_kit.types import AttackOutcome, AttackSpec
from har_kit.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

LossFn = Callable[[Tensor], Tensor]
Init = Literal["uniform", "gaussian", "none"]

ASCENT = 1.0
DESCENT = -1.0

# stream key for the average-case target draw; real targets are < 2**32
TARGET_DRAW_STREAM = 1 << 32
TRADES_INIT_SCALE = 0.001
L2_PROJECTION_SLACK = 1e-12


def _rows(x: Tensor | np.ndarray) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return np.atleast_2d(data).astype(np.float64, copy=False)


def random_init(
    x: Tensor | np.ndarray, spec: AttackSpec, rng: np.random.Generator
) -> np.ndarray:
    """
    Uniform start inside the budget: i.i.d. U(-eps, eps) per coordinate for linf,
    uniform in the eps-ball for l2 (radius eps * u ** (1 / d)). Clipped to the box,
    then re-projected.
    """
    x0 = _rows(x)
    n, d = x0.shape
    eps = spec.epsilon
    if spec.norm == "linf":
        eta = rng.uniform(-eps, eps, size=x0.shape)
    else:
        direction = rng.standard_normal(size=x0.shape)
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        direction /= np.maximum(norms, 1e-300)
        radius = eps * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / d)
        eta = direction * radius
    out = project(np.clip(x0 + eta, 0.0, 1.0), x0, spec)
    return out.reshape(np.shape(x.data if isinstance(x, Tensor) else x))


def project(
    x_cand: Tensor | np.ndarray, x_orig: Tensor | np.ndarray, spec: AttackSpec
) -> np.ndarray:
    """
    Projection onto the eps-ball around x_orig intersected with [0, 1]. Feasible
    points are returned unchanged, so the map is idempotent.
    """
    xc = _rows(x_cand)
    xo = _rows(x_orig)
    if xc.shape != xo.shape:
        raise SpecError(f"cannot project {xc.shape} around {xo.shape}")
    delta = xc - xo
    eps = spec.epsilon
    if spec.norm == "linf":
        outside = np.abs(delta) > eps
        out = np.where(outside, xo + np.clip(delta, -eps, eps), xc)
    else:
        norms = np.linalg.norm(delta, axis=1, keepdims=True)
        outside = norms > eps * (1.0 + L2_PROJECTION_SLACK)
        factor = np.where(outside, eps / np.where(norms > 0, norms, 1.0), 1.0)
        out = np.where(outside, xo + delta * factor, xc)
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(np.shape(x_cand.data if isinstance(x_cand, Tensor) else x_cand))


def input_gradient(loss_fn: LossFn, x: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Loss value and dLoss/dx; model parameters receive no gradient.
    """
    xt = Tensor(x, requires_grad=True)
    loss = loss_fn(xt)
    backward(loss, inputs=[xt])
    grad = xt.grad if xt.grad is not None else np.zeros_like(x)
    return loss.item(), grad


def _step_direction(grad: np.ndarray, spec: AttackSpec) -> tuple[np.ndarray, int]:
    if spec.norm == "linf":
        return np.sign(grad), 0
    norms = np.linalg.norm(grad, axis=1, keepdims=True)
    zero = norms[:, 0] == 0
    direction = np.where(norms > 0, grad / np.where(norms > 0, norms, 1.0), 0.0)
    return direction, int(zero.sum())


def _step(
    loss_fn: LossFn, x_j: np.ndarray, x_orig: np.ndarray, spec: AttackSpec, sign: float
) -> tuple[np.ndarray, int]:
    _, grad = input_gradient(loss_fn, x_j)
    direction, skipped = _step_direction(grad, spec)
    return project(x_j + sign * spec.alpha * direction, x_orig, spec), skipped


def pgd_perturb(
    loss_fn: LossFn,
    x: np.ndarray,
    spec: AttackSpec,
    rng: np.random.Generator,
    direction: float = ASCENT,
    init: Init = "uniform",
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """
    Batched PGD kernel shared by attacks and training inner loops.

    ``direction`` is ASCENT for loss maximization and DESCENT for targeted
    minimization. ``init="gaussian"`` starts from x + 0.001 * N(0, I).
    """
    x_orig = _rows(x)
    if init == "uniform" and spec.random_init:
        x_adv = random_init(x_orig, spec, rng)
    elif init == "gaussian":
        x_adv = project(
            x_orig + TRADES_INIT_SCALE * rng.standard_normal(size=x_orig.shape),
            x_orig,
            spec,
        )
    else:
        x_adv = x_orig.copy()

    skipped = 0
    for j in range(spec.iterations):
        x_adv, s = _step(loss_fn, x_adv, x_orig, spec, direction)
        skipped += s
        if on_step is not None:
            on_step(j + 1, x_adv)
    if skipped:
        logger.warning("skipped %d l2 steps with a zero gradient", skipped)
    return x_adv


def _ce_loss(model: ProbabilisticClassifier, labels: np.ndarray) -> LossFn:
    return lambda xt: cross_entropy(model.forward(xt), labels)


def pgd_step_untargeted(
    model: ProbabilisticClassifier,
    x_j: np.ndarray,
    x_orig: np.ndarray,
    y_star: int | np.ndarray,
    spec: AttackSpec,
) -> np.ndarray:
    xj = _rows(x_j)
    labels = np.broadcast_to(np.asarray(y_star), (xj.shape[0],))
    return _step(_ce_loss(model, labels), xj, _rows(x_orig), spec, ASCENT)[0]


def pgd_step_targeted(
    model: ProbabilisticClassifier,
    x_j: np.ndarray,
    x_orig: np.ndarray,
    y_hat: int | np.ndarray,
    spec: AttackSpec,
) -> np.ndarray:
    xj = _rows(x_j)
    labels = np.broadcast_to(np.asarray(y_hat), (xj.shape[0],))
    return _step(_ce_loss(model, labels), xj, _rows(x_orig), spec, DESCENT)[0]


def _resolve_hierarchy(
    model: ProbabilisticClassifier, hierarchy: Hierarchy | None
) -> Hierarchy:
    if hierarchy is not None:
        return hierarchy
    if isinstance(model, HarModel):
        return model.hierarchy
    return flat_hierarchy(model.class_count)


def _outcome(
    model: ProbabilisticClassifier,
    h: Hierarchy,
    x: np.ndarray,
    x_adv: np.ndarray,
    y_star: int,
    spec: AttackSpec,
    **fields: Any,
) -> AttackOutcome:
    pred = int(model.predict_labels(x_adv)[0])
    delta = (x_adv - x).reshape(-1)
    if y_star >= 0:
        succeeded_fine = pred != y_star
        succeeded_coarse = h.coarse_of(pred) != h.coarse_of(y_star)
    else:
        succeeded_fine = succeeded_coarse = fields.pop("coarse_changed")
    return AttackOutcome(
        mode=spec.mode,
        norm=spec.norm,
        eps=spec.epsilon,
        k=spec.iterations,
        label=y_star,
        prediction=pred,
        succeeded_fine=succeeded_fine,
        succeeded_coarse=succeeded_coarse,
        l2_delta=float(np.linalg.norm(delta)),
        linf_delta=float(np.max(np.abs(delta))) if delta.size else 0.0,
        x_adv=x_adv.reshape(-1),
        **fields,
    )


def pgd_attack(
    model: ProbabilisticClassifier,
    x: Tensor | np.ndarray,
    y_star: int,
    spec: AttackSpec,
    hierarchy: Hierarchy | None = None,
) -> AttackOutcome:
    """
    Untargeted PGD, or targeted PGD towards ``spec.target`` in targeted mode.
    Success flags come from the prediction after the last step.
    """
    h = _resolve_hierarchy(model, hierarchy)
    x0 = _rows(x)
    if spec.mode == "targeted":
        target = int(spec.target)  # type: ignore[arg-type]
        x_adv = _targeted_run(model, x0, target, spec)
        pred = int(model.predict_labels(x_adv)[0])
        return _outcome(
            model,
            h,
            x0,
            x_adv,
            y_star,
            spec,
            succeeded_target=(
                pred == target and h.coarse_of(target) != h.coarse_of(y_star)
            ),
            targets_tried=[target],
            iterations_used=spec.iterations,
        )
    labels = np.array([y_star])
    x_adv = pgd_perturb(_ce_loss(model, labels), x0, spec, make_rng(spec.seed))
    return _outcome(model, h, x0, x_adv, y_star, spec, iterations_used=spec.iterations)


def fgsm_attack(
    model: ProbabilisticClassifier,
    x: Tensor | np.ndarray,
    y_star: int,
    spec: AttackSpec,
    hierarchy: Hierarchy | None = None,
) -> AttackOutcome:
    """
    One eps-sized step along sign(grad) (linf) or grad / ||grad|| (l2).
    """
    h = _resolve_hierarchy(model, hierarchy)
    x0 = _rows(x)
    _, grad = input_gradient(_ce_loss(model, np.array([y_star])), x0)
    direction, _ = _step_direction(grad, spec)
    x_adv = project(x0 + spec.epsilon * direction, x0, spec)
    return _outcome(model, h, x0, x_adv, y_star, spec, iterations_used=1)


def _targeted_run(
    model: ProbabilisticClassifier,
    x0: np.ndarray,
    target: int,
    spec: AttackSpec,
    hits: list[int] | None = None,
) -> np.ndarray:
    """
    k targeted steps from a fresh random start drawn from stream (seed, target).
    When ``hits`` is given, the first iteration whose prediction equals the
    target is appended to it (or nothing if it never does).
    """
    first_hit: list[int] = []

    def track(j: int, x_j: np.ndarray) -> None:
        if not first_hit and int(model.predict_labels(x_j)[0]) == target:
            first_hit.append(j)

    x_adv = pgd_perturb(
        _ce_loss(model, np.array([target])),
        x0,
        spec,
        make_rng(spec.seed, target),
        direction=DESCENT,
        on_step=track if hits is not None else None,
    )
    if hits is not None:
        hits.extend(first_hit)
    return x_adv


def _require_targets(h: Hierarchy, y_star: int) -> list[int]:
    targets = candidate_targets(h, y_star)
    if not targets:
        raise NoCrossCoarseTargetError(
            f"no fine label outside the coarse class of {y_star}"
        )
    return targets


def worst_case_hierarchical_attack(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    x: Tensor | np.ndarray,
    y_star: int,
    spec: AttackSpec,
) -> AttackOutcome:
    """
    Tries every fine label outside the true coarse class, in ascending id order,
    as the target of a k-step targeted PGD with a fresh random start. Stops at
    the first target the final prediction reaches.
    """
    targets = _require_targets(hierarchy, y_star)
    x0 = _rows(x)
    tried: list[int] = []
    x_adv = x0
    reached = False
    for target in targets:
        tried.append(target)
        x_adv = _targeted_run(model, x0, target, spec)
        if int(model.predict_labels(x_adv)[0]) == target:
            reached = True
            break
    return _outcome(
        model,
        hierarchy,
        x0,
        x_adv,
        y_star,
        spec,
        succeeded_target=reached,
        targets_tried=tried,
        iterations_used=spec.iterations * len(tried),
    )


def average_case_hierarchical_attack(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    x: Tensor | np.ndarray,
    y_star: int,
    spec: AttackSpec,
) -> AttackOutcome:
    """
    Targeted PGD towards one target drawn uniformly from the cross-coarse labels.
    """
    targets = _require_targets(hierarchy, y_star)
    x0 = _rows(x)
    rng = make_rng(spec.seed, TARGET_DRAW_STREAM)
    target = targets[int(rng.integers(len(targets)))]
    x_adv = _targeted_run(model, x0, target, spec)
    return _outcome(
        model,
        hierarchy,
        x0,
        x_adv,
        y_star,
        spec,
        succeeded_target=int(model.predict_labels(x_adv)[0]) == target,
        targets_tried=[target],
        iterations_used=spec.iterations,
    )


def best_case_hierarchical_attack(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    x: Tensor | np.ndarray,
    y_star: int,
    spec: AttackSpec,
) -> AttackOutcome:
    """
    Runs every cross-coarse target and keeps the successful one that was first
    reached in the fewest iterations (lowest id on ties).
    """
    targets = _require_targets(hierarchy, y_star)
    x0 = _rows(x)
    best: tuple[int, int, np.ndarray] | None = None
    x_last = x0
    for target in targets:
        hits: list[int] = []
        x_last = _targeted_run(model, x0, target, spec, hits=hits)
        if int(model.predict_labels(x_last)[0]) != target:
            continue
        first = hits[0] if hits else spec.iterations
        if best is None or first < best[0]:
            best = (first, target, x_last)

    if best is None:
        return _outcome(
            model,
            hierarchy,
            x0,
            x_last,
            y_star,
            spec,
            succeeded_target=False,
            targets_tried=list(targets),
            iterations_used=spec.iterations * len(targets),
        )
    first, target, x_adv = best
    return _outcome(
        model,
        hierarchy,
        x0,
        x_adv,
        y_star,
        spec,
        succeeded_target=True,
        targets_tried=list(targets),
        iterations_used=first,
    )


def coarse_net_attack(
    har: HarModel,
    x: Tensor | np.ndarray,
    z_star: int,
    spec: AttackSpec,
    y_star: int | None = None,
) -> AttackOutcome:
    """
    Worst-case targeted PGD on the coarse network's loss over every coarse class
    other than z_star. The attack is judged by the full HAR prediction: it stops
    at the first coarse target the composite prediction lands in.

    Without ``y_star`` the fine flags fall back to the coarse change and the
    outcome label is recorded as -1.
    """
    if not isinstance(har, HarModel):
        raise SpecError("the coarse-network attack needs a HAR model")
    h = har.hierarchy
    if not 0 <= z_star < h.coarse_count:
        raise SpecError(f"coarse id {z_star} outside [0, {h.coarse_count})")
    targets = [z for z in range(h.coarse_count) if z != z_star]
    if not targets:
        raise NoCrossCoarseTargetError("a single coarse class leaves no coarse target")

    x0 = _rows(x)
    tried: list[int] = []
    x_adv = x0
    reached = False
    coarse_net_fooled = False
    for target in targets:
        tried.append(target)
        x_adv = pgd_perturb(
            _ce_loss(har.coarse_net, np.array([target])),
            x0,
            spec,
            make_rng(spec.seed, target),
            direction=DESCENT,
        )
        coarse_net_fooled = int(har.coarse_net.predict_labels(x_adv)[0]) == target
        pred = int(har.predict_labels(x_adv)[0])
        if h.coarse_of(pred) == target:
            reached = True
            break

    pred = int(har.predict_labels(x_adv)[0])
    extra: dict[str, Any] = {}
    if y_star is None:
        extra["coarse_changed"] = h.coarse_of(pred) != z_star
    return _outcome(
        har,
        h,
        x0,
        x_adv,
        -1 if y_star is None else y_star,
        spec,
        succeeded_target=reached,
        succeeded_coarse_net=coarse_net_fooled,
        target_level="coarse",
        targets_tried=tried,
        iterations_used=spec.iterations * len(tried),
        **extra,
    )


def run_attack(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    x: Tensor | np.ndarray,
    y_star: int,
    spec: AttackSpec,
    index: int = 0,
) -> AttackOutcome:
    """
    Dispatches on ``spec.mode``.
    """
    if spec.mode in ("untargeted", "targeted"):
        outcome = pgd_attack(model, x, y_star, spec, hierarchy)
    elif spec.mode == "fgsm":
        outcome = fgsm_attack(model, x, y_star, spec, hierarchy)
    elif spec.mode == "worst_case_hierarchical":
        outcome = worst_case_hierarchical_attack(model, hierarchy, x, y_star, spec)
    elif spec.mode == "average_case_hierarchical":
        outcome = average_case_hierarchical_attack(model, hierarchy, x, y_star, spec)
    elif spec.mode == "best_case_hierarchical":
        outcome = best_case_hierarchical_attack(model, hierarchy, x, y_star, spec)
    elif spec.mode == "coarse_net_targeted":
        if not isinstance(model, HarModel):
            raise SpecError("coarse-targeted attacks need a HAR checkpoint")
        outcome = coarse_net_attack(
            model, x, hierarchy.coarse_of(y_star), spec, y_star=y_star
        )
    else:
        raise SpecError(f"unknown attack mode {spec.mode}")
    outcome.index = index
    return outcome


def attack_batch(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    features: np.ndarray,
    labels: np.ndarray,
    spec: AttackSpec,
    indices: Sequence[int] | None = None,
    workers: int = 1,
) -> list[AttackOutcome]:
    """
    Attacks each selected sample with its own seed (spec.seed XOR index).
    Results are in ``indices`` order whatever the worker count.
    """
    if indices is None:
        indices = range(features.shape[0])
    indices = [int(i) for i in indices]

    def one(i: int) -> AttackOutcome:
        sample_spec = spec.with_seed(derive_seed(spec.seed, i))
        return run_attack(model, hierarchy, features[i], int(labels[i]), sample_spec, i)

    logger.info(
        "attacking %d samples (%s, mode=%s, workers=%d)",
        len(indices),
        spec.label(),
        spec.mode,
        workers,
    )
    if workers <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, indices))


def write_outcomes_jsonl(
    outcomes: Sequence[AttackOutcome],
    path: str | Path,
    config_hash: str = "",
    seed: int = 0,
) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for o in outcomes:
            record = {**o.to_record(), "config_hash": config_hash, "seed": seed}
            f.write(json.dumps(record, sort_keys=True) + "\n")
    logger.info("wrote %d outcomes to %s", len(outcomes), path)


def read_outcomes_jsonl(path: str | Path) -> list[AttackOutcome]:
    outcomes = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                outcomes.append(AttackOutcome.model_validate_json(line))
    return outcomes
