import numpy as np
import pandas as pd
import pytest
from scipy.stats import chisquare

from har_kit.data import Dataset
from har_kit.errors import SpecError, TrainingError
from har_kit.hierarchy import flat_hierarchy, single_coarse_hierarchy
from har_kit.models import Classifier, HarModel, build_model
from har_kit.tensor import Tensor
from har_kit.training import (
    component_datasets,
    component_hierarchy,
    draw_cross_coarse_targets,
    hierarchical_cross_entropy,
    train,
    train_adv,
    train_adv_hce,
    train_har,
    train_standard,
    train_trades,
    write_metrics_log,
)
from har_kit.types import ArchSpec, AttackSpec, LrSchedule, TrainConfig

FAST = LrSchedule(initial=0.1, decay_epochs=[])


def _cfg(method="standard", epochs=3, **kw):
    return TrainConfig(
        method=method, epochs=epochs, batch_size=16, schedule=FAST, seed=5, **kw
    )


def _same_parameters(a, b):
    return all(
        np.array_equal(p, q)
        for p, q in zip(a.parameter_arrays(), b.parameter_arrays(), strict=True)
    )


@pytest.fixture
def mlp(toy_data):
    return Classifier(toy_data.dim, [16], 4, seed=1)


@pytest.fixture
def har(toy_data, toy_data_hierarchy):
    arch = ArchSpec(kind="har", input_dim=toy_data.dim, hidden=[8])
    return build_model(arch, toy_data_hierarchy, seed=1)


def test_standard_fits_separable_data(mlp, toy_data):
    result = train_standard(mlp, toy_data, _cfg(epochs=60))
    preds = result.model.predict_labels(toy_data.features)
    assert np.mean(preds == toy_data.fine_labels) >= 0.99
    assert result.rows[-1].train_loss < result.rows[0].train_loss


def test_zero_epochs_returns_untouched_copy(mlp, toy_data):
    result = train_standard(mlp, toy_data, _cfg(epochs=0))
    assert result.rows == []
    assert result.final_loss is None
    assert _same_parameters(result.model, mlp)
    assert result.model is not mlp


def test_training_is_deterministic(mlp, toy_data):
    cfg = _cfg("adv", attack=AttackSpec(epsilon=0.05, iterations=2))
    a = train(mlp, toy_data, cfg).model
    b = train(mlp, toy_data, cfg).model
    assert _same_parameters(a, b)


def test_adv_with_zero_budget_matches_standard(mlp, toy_data):
    attack = AttackSpec(epsilon=0.0, iterations=2, random_init=False)
    adv = train_adv(mlp, toy_data, _cfg("adv", attack=attack)).model
    standard = train_standard(mlp, toy_data, _cfg()).model
    assert _same_parameters(adv, standard)


def test_trades_with_zero_beta_matches_standard(mlp, toy_data):
    trades = train_trades(mlp, toy_data, _cfg("trades", beta=0.0)).model
    standard = train_standard(mlp, toy_data, _cfg()).model
    assert _same_parameters(trades, standard)


def test_adv_without_inner_loop_matches_standard(mlp, toy_data):
    adv = train_adv(mlp, toy_data, _cfg("adv", inner_loop=False)).model
    standard = train_standard(mlp, toy_data, _cfg()).model
    assert _same_parameters(adv, standard)


def test_hce_on_single_coarse_matches_adv(mlp, toy_data):
    cfg = _cfg("adv", attack=AttackSpec(epsilon=0.05, iterations=2))
    hce = train_adv_hce(mlp, single_coarse_hierarchy(4), toy_data, cfg).model
    adv = train_adv(mlp, toy_data, cfg).model
    assert _same_parameters(hce, adv)


def test_hierarchical_cross_entropy_value(toy_hierarchy):
    probs = Tensor([[0.1, 0.3, 0.4, 0.2]])
    loss = hierarchical_cross_entropy(probs, np.array([0]), toy_hierarchy)
    assert loss.item() == pytest.approx(-np.log(0.1) - np.log(0.4))


def test_cross_coarse_targets(toy_hierarchy):
    rng = np.random.default_rng(0)
    labels = np.array([0, 1, 2, 3] * 1000)
    targets = draw_cross_coarse_targets(toy_hierarchy, labels, rng)
    coarse = toy_hierarchy.coarse_labels
    assert np.all(coarse(targets) != coarse(labels))
    counts = np.bincount(targets[labels == 0], minlength=4)[2:]
    assert chisquare(counts).pvalue > 0.001


def test_cross_coarse_targets_need_other_coarse():
    with pytest.raises(TrainingError, match="sample 0"):
        draw_cross_coarse_targets(
            single_coarse_hierarchy(3), np.array([1]), np.random.default_rng(0)
        )


def test_component_datasets_route_samples(har, toy_data, toy_data_hierarchy):
    jobs = component_datasets(har, toy_data)
    assert [name for name, _ in jobs] == ["coarse", "fine[0]", "fine[1]"]
    coarse = jobs[0][1]
    coarse_labels = toy_data.coarse_labels(toy_data_hierarchy)
    assert np.array_equal(coarse.fine_labels, coarse_labels)
    for z, (_, ds) in enumerate(jobs[1:]):
        mask = coarse_labels == z
        assert len(ds) == int(mask.sum())
        assert set(ds.fine_labels.tolist()) <= {0, 1}
        assert np.array_equal(ds.features, toy_data.features[mask])


def test_har_training_is_order_and_worker_independent(har, toy_data):
    cfg = _cfg(epochs=2)
    serial = train_har(har, toy_data, cfg).model
    parallel = train_har(har, toy_data, cfg, workers=3).model
    permuted = train_har(har, toy_data, cfg, order=[2, 0, 1]).model
    assert _same_parameters(serial, parallel)
    assert _same_parameters(serial, permuted)


def test_har_training_reports_every_component(har, toy_data):
    result = train(har, toy_data, _cfg(epochs=2))
    assert isinstance(result.model, HarModel)
    assert {row.component for row in result.rows} == {"coarse", "fine[0]", "fine[1]"}


def test_har_training_with_empty_coarse_class(har, toy_data, toy_data_hierarchy):
    keep = np.flatnonzero(toy_data.coarse_labels(toy_data_hierarchy) == 0)
    with pytest.raises(TrainingError, match="no training samples"):
        train_har(har, toy_data.subset(keep), _cfg())


def test_divergence_is_reported(monkeypatch, mlp, toy_data):
    monkeypatch.setattr(
        "har_kit.training.cross_entropy", lambda probs, labels: Tensor(np.nan)
    )
    with pytest.raises(TrainingError, match="diverged") as exc:
        train_standard(mlp, toy_data, _cfg())
    assert exc.value.epoch == 0


def test_labels_beyond_model_classes(toy_data):
    with pytest.raises(SpecError, match="classes"):
        train_standard(Classifier(toy_data.dim, [], 2), toy_data, _cfg())


def test_metrics_log(tmp_path, mlp, toy_data):
    result = train_standard(mlp, toy_data, _cfg(epochs=2))
    path = tmp_path / "metrics.csv"
    write_metrics_log(result, path, config_hash="feed", seed=5)
    frame = pd.read_csv(path)
    assert list(frame.columns) == [
        "component",
        "epoch",
        "lr",
        "train_loss",
        "train_acc",
        "config_hash",
        "seed",
    ]
    assert frame["epoch"].tolist() == [0, 1]
    assert (frame["config_hash"] == "feed").all()


def test_single_class_component_is_skipped():
    data = Dataset(
        features=np.full((3, 2), 0.5),
        fine_labels=np.zeros(3),
        fine_count=1,
        hierarchy_hash="x",
    )
    result = train_standard(Classifier(2, [], 1), data, _cfg())
    assert result.rows == []


@pytest.mark.slow
@pytest.mark.parametrize("method", ["adv", "adv_t", "trades", "adv_hce"])
def test_adversarial_methods_reduce_loss(method, mlp, toy_data, toy_data_hierarchy):
    attack = AttackSpec(epsilon=0.05, iterations=3)
    cfg = _cfg(method, epochs=15, attack=attack)
    result = train(mlp, toy_data, cfg, hierarchy=toy_data_hierarchy)
    losses = [row.train_loss for row in result.rows]
    assert all(np.isfinite(losses))
    assert losses[-1] < losses[0]


@pytest.mark.parametrize("method", ["adv", "adv_t", "adv_hce"])
def test_coarse_net_trains_under_flat_hierarchy(method):
    assert component_hierarchy(method, 0, 3).digest() == flat_hierarchy(3).digest()


def test_fine_nets_under_hce_share_one_group():
    hce = component_hierarchy("adv_hce", 2, 4)
    adv_t = component_hierarchy("adv_t", 2, 4)
    assert hce.digest() == single_coarse_hierarchy(4).digest()
    assert adv_t.digest() == flat_hierarchy(4).digest()
