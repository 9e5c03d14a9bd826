"""
Training procedures: Standard, ADV, ADV-T, TRADES and ADV-hCE for a single
classifier, and independent (optionally parallel) training of HAR components.
"""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from har_kit.attacks import ASCENT, DESCENT, attack_batch, pgd_perturb
from har_kit.data import Dataset
from har_kit.errors import SpecError, TrainingError
from har_kit.hierarchy import (
    Hierarchy,
    candidate_targets,
    flat_hierarchy,
    single_coarse_hierarchy,
)
from har_kit.metrics import fine_accuracy
from har_kit.models import Classifier, HarModel, ProbabilisticClassifier, build_model
from har_kit.optim import SGD, learning_rate
from har_kit.tensor import (
    Tensor,
    add,
    backward,
    coarse_marginal_op,
    cross_entropy,
    kl_divergence,
    scale,
)
from har_kit.types import ArchSpec, AttackSpec, TrainConfig, TrainMethod
from har_kit.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

SHUFFLE_STREAM = 0
ATTACK_STREAM = 1


class EpochRow(BaseModel):
    component: str = "model"
    epoch: int
    lr: float
    train_loss: float
    train_acc: float


class TrainResult(BaseModel):
    model: ProbabilisticClassifier
    rows: list[EpochRow] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def final_loss(self) -> float | None:
        return self.rows[-1].train_loss if self.rows else None


def hierarchical_cross_entropy(
    probs: Tensor, labels: np.ndarray, hierarchy: Hierarchy
) -> Tensor:
    """
    CE(F(x), y) + CE(G(x), z) with G the per-coarse sum of F. With a single
    coarse class the second term is identically zero and is left out.
    """
    fine = cross_entropy(probs, labels)
    if hierarchy.coarse_count == 1:
        return fine
    g = coarse_marginal_op(probs, hierarchy.membership_matrix())
    return add(fine, cross_entropy(g, hierarchy.coarse_labels(labels)))


def draw_cross_coarse_targets(
    hierarchy: Hierarchy, labels: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """
    One target per label, uniform over the fine labels outside its coarse class.
    """
    candidates = {
        int(y): candidate_targets(hierarchy, int(y)) for y in np.unique(labels)
    }
    targets = np.empty(len(labels), dtype=np.int64)
    for i, y in enumerate(labels):
        options = candidates[int(y)]
        if not options:
            raise TrainingError(
                f"sample {i} (label {int(y)}) has no cross-coarse target"
            )
        targets[i] = options[int(rng.integers(len(options)))]
    return targets


def _inner_inputs(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    method: TrainMethod,
    xb: np.ndarray,
    yb: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    spec: AttackSpec | None = cfg.attack
    if method == "standard" or spec is None or not cfg.inner_loop:
        return xb

    if method == "adv":
        return pgd_perturb(
            lambda xt: cross_entropy(model.forward(xt), yb), xb, spec, rng, ASCENT
        )
    if method == "adv_t":
        targets = draw_cross_coarse_targets(hierarchy, yb, rng)
        return pgd_perturb(
            lambda xt: cross_entropy(model.forward(xt), targets), xb, spec, rng, DESCENT
        )
    if method == "adv_hce":
        return pgd_perturb(
            lambda xt: hierarchical_cross_entropy(model.forward(xt), yb, hierarchy),
            xb,
            spec,
            rng,
            ASCENT,
        )
    if method == "trades":
        if not cfg.beta:
            return xb
        clean = Tensor(model.predict(xb).data)
        return pgd_perturb(
            lambda xt: kl_divergence(clean, model.forward(xt)),
            xb,
            spec,
            rng,
            ASCENT,
            init="gaussian",
        )
    raise SpecError(f"unknown training method {method}")


def _outer_loss(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    method: TrainMethod,
    x_in: np.ndarray,
    xb: np.ndarray,
    yb: np.ndarray,
    cfg: TrainConfig,
) -> tuple[Tensor, Tensor]:
    if method == "trades":
        probs = model.forward(Tensor(xb))
        loss = cross_entropy(probs, yb)
        if cfg.beta:
            kl = kl_divergence(probs, model.forward(Tensor(x_in)))
            loss = add(loss, scale(kl, float(cfg.beta)))
        return loss, probs
    probs = model.forward(Tensor(x_in))
    if method == "adv_hce":
        return hierarchical_cross_entropy(probs, yb, hierarchy), probs
    return cross_entropy(probs, yb), probs


def _fit(
    model: ProbabilisticClassifier,
    data: Dataset,
    cfg: TrainConfig,
    method: TrainMethod,
    hierarchy: Hierarchy | None = None,
    component: str = "model",
) -> TrainResult:
    if len(data) and int(data.fine_labels.max()) >= model.class_count:
        raise SpecError(
            f"labels reach {int(data.fine_labels.max())} but the model has "
            f"{model.class_count} classes"
        )
    if method != "standard" and cfg.attack is None:
        raise SpecError(f"method {method} needs an inner attack spec")
    h = hierarchy if hierarchy is not None else flat_hierarchy(model.class_count)

    model = model.copy()
    rows: list[EpochRow] = []
    if model.class_count == 1:
        logger.info("%s: single class, nothing to learn", component)
        return TrainResult(model=model, rows=rows)

    shuffle_rng = make_rng(cfg.seed, SHUFFLE_STREAM)
    attack_rng = make_rng(cfg.seed, ATTACK_STREAM)
    opt = SGD(model.parameters(), cfg)
    x_all, y_all = data.features, data.fine_labels
    n = len(data)

    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            x_in = _inner_inputs(model, h, method, xb, yb, cfg, attack_rng)
            opt.zero_grad()
            loss, probs = _outer_loss(model, h, method, x_in, xb, yb, cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"loss diverged to {value}", epoch=epoch, component=component
                )
            backward(loss)
            opt.step(epoch)
            total_loss += value * len(idx)
            correct += int((np.argmax(probs.data, axis=1) == yb).sum())
            logger.debug(
                "%s epoch %d batch %d loss %.6f", component, epoch, start, value
            )

        row = EpochRow(
            component=component,
            epoch=epoch,
            lr=learning_rate(cfg.schedule, epoch),
            train_loss=total_loss / max(n, 1),
            train_acc=correct / max(n, 1),
        )
        rows.append(row)
        logger.info(
            "%s epoch %d lr=%.4g loss=%.4f acc=%.3f",
            component,
            epoch,
            row.lr,
            row.train_loss,
            row.train_acc,
        )
    return TrainResult(model=model, rows=rows)


def train_standard(
    model: ProbabilisticClassifier, data: Dataset, cfg: TrainConfig
) -> TrainResult:
    return _fit(model, data, cfg, "standard")


def train_adv(
    model: ProbabilisticClassifier, data: Dataset, cfg: TrainConfig
) -> TrainResult:
    return _fit(model, data, cfg, "adv")


def train_adv_t(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    data: Dataset,
    cfg: TrainConfig,
) -> TrainResult:
    return _fit(model, data, cfg, "adv_t", hierarchy)


def train_trades(
    model: ProbabilisticClassifier, data: Dataset, cfg: TrainConfig
) -> TrainResult:
    if cfg.beta is None:
        raise SpecError("trades needs beta")
    return _fit(model, data, cfg, "trades")


def train_adv_hce(
    model: ProbabilisticClassifier,
    hierarchy: Hierarchy,
    data: Dataset,
    cfg: TrainConfig,
) -> TrainResult:
    return _fit(model, data, cfg, "adv_hce", hierarchy)


def component_hierarchy(method: TrainMethod, index: int, class_count: int) -> Hierarchy:
    """
    Hierarchy a HAR component trains under. The coarse net (index 0) always sees
    the flat hierarchy over coarse labels. Fine nets see the flat hierarchy over
    their local labels, except under ADV-hCE where one group makes hCE plain CE.
    """
    if index > 0 and method == "adv_hce":
        return single_coarse_hierarchy(class_count)
    return flat_hierarchy(class_count)


def component_datasets(har: HarModel, data: Dataset) -> list[tuple[str, Dataset]]:
    """
    Coarse net: all samples with coarse labels. Fine net i: the samples of
    coarse class i with within-coarse labels.
    """
    h = har.hierarchy
    coarse = data.coarse_labels(h)
    jobs = [
        (
            "coarse",
            Dataset(
                features=data.features,
                fine_labels=coarse,
                fine_count=h.coarse_count,
                hierarchy_hash=flat_hierarchy(h.coarse_count).digest(),
            ),
        )
    ]
    for z, idx in enumerate(data.by_coarse(h)):
        if idx.size == 0:
            raise TrainingError(
                f"coarse class {h.coarse_names[z]} has no training samples",
                component=f"fine[{z}]",
            )
        size = h.block_sizes[z]
        jobs.append(
            (
                f"fine[{z}]",
                Dataset(
                    features=data.features[idx],
                    fine_labels=h.local_labels(data.fine_labels[idx]),
                    fine_count=size,
                    hierarchy_hash=single_coarse_hierarchy(size).digest(),
                ),
            )
        )
    return jobs


def train_har(
    har: HarModel,
    data: Dataset,
    cfg: TrainConfig,
    workers: int = 1,
    order: Sequence[int] | None = None,
) -> TrainResult:
    """
    Trains the coarse net and every fine net independently with the same method.
    Component i (coarse = 0, fine net z = z + 1) uses seed cfg.seed XOR i, so the
    result does not depend on ``workers`` or on the submission ``order``.
    """
    jobs = component_datasets(har, data)
    nets: list[Classifier] = har.components()
    method = cfg.method

    def run(i: int) -> TrainResult:
        name, component_data = jobs[i]
        net = nets[i]
        component_cfg = cfg.model_copy(update={"seed": derive_seed(cfg.seed, i)})
        return _fit(
            net,
            component_data,
            component_cfg,
            method,
            component_hierarchy(method, i, net.class_count),
            component=name,
        )

    schedule = list(order) if order is not None else list(range(len(jobs)))
    if sorted(schedule) != list(range(len(jobs))):
        raise SpecError("order must be a permutation of the component indices")
    logger.info("training %d HAR components (workers=%d)", len(jobs), workers)
    if workers <= 1:
        results = {i: run(i) for i in schedule}
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(zip(schedule, pool.map(run, schedule), strict=True))

    trained = [results[i].model for i in range(len(jobs))]
    model = HarModel(trained[0], trained[1:], har.hierarchy)  # type: ignore[arg-type]
    rows = [row for i in range(len(jobs)) for row in results[i].rows]
    return TrainResult(model=model, rows=rows)


def train(
    model: ProbabilisticClassifier,
    data: Dataset,
    cfg: TrainConfig,
    hierarchy: Hierarchy | None = None,
    workers: int = 1,
) -> TrainResult:
    """
    Dispatches on the model type and ``cfg.method``.
    """
    if isinstance(model, HarModel):
        return train_har(model, data, cfg, workers=workers)
    return _fit(model, data, cfg, cfg.method, hierarchy)


def write_metrics_log(
    result: TrainResult, path: str | Path, config_hash: str = "", seed: int = 0
) -> None:
    frame = pd.DataFrame(
        [row.model_dump() for row in result.rows],
        columns=["component", "epoch", "lr", "train_loss", "train_acc"],
    )
    frame["config_hash"] = config_hash
    frame["seed"] = seed
    frame.to_csv(path, index=False)
    logger.info("wrote metrics log %s", path)


class BetaSweepRow(BaseModel):
    beta: float
    clean_acc: float
    fgsm_acc: float
    pgd20_acc: float


class BetaSweepResult(BaseModel):
    rows: list[BetaSweepRow]
    best_beta: float


def trades_beta_sweep(
    train_data: Dataset,
    test_data: Dataset,
    arch: ArchSpec,
    hierarchy: Hierarchy,
    cfg: TrainConfig,
    betas: Sequence[float] = (1.0, 5.0, 9.0, 13.0),
    workers: int = 1,
) -> BetaSweepResult:
    """
    Trains one TRADES model per beta and scores it on clean, FGSM and PGD20
    inputs; the selected beta has the best PGD20 accuracy (first on ties).
    """
    base = cfg.attack or AttackSpec(iterations=10)
    fgsm = base.model_copy(update={"mode": "fgsm", "iterations": 1})
    pgd20 = AttackSpec(
        norm=base.norm,
        epsilon=base.epsilon,
        iterations=20,
        mode="untargeted",
        seed=cfg.seed,
    )
    x, y = test_data.features, test_data.fine_labels

    def attacked_acc(model: ProbabilisticClassifier, spec: AttackSpec) -> float:
        outcomes = attack_batch(model, hierarchy, x, y, spec, workers=workers)
        return fine_accuracy(np.array([o.prediction for o in outcomes]), y)

    rows = []
    for beta in betas:
        beta_cfg = cfg.model_copy(
            update={"method": "trades", "beta": float(beta), "attack": base}
        )
        model = build_model(arch, hierarchy, seed=cfg.seed)
        trained = train_trades(model, train_data, beta_cfg).model
        rows.append(
            BetaSweepRow(
                beta=float(beta),
                clean_acc=fine_accuracy(trained.predict_labels(x), y),
                fgsm_acc=attacked_acc(trained, fgsm),
                pgd20_acc=attacked_acc(trained, pgd20),
            )
        )
        logger.info(
            "beta=%s clean=%.3f pgd20=%.3f",
            beta,
            rows[-1].clean_acc,
            rows[-1].pgd20_acc,
        )

    best = max(rows, key=lambda r: r.pgd20_acc)
    return BetaSweepResult(rows=rows, best_beta=best.beta)
