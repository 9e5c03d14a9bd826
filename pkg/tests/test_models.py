import numpy as np
import pytest

from har_kit.errors import DimensionError
from har_kit.hierarchy import parse_hierarchy
from har_kit.models import (
    Classifier,
    HarModel,
    build_model,
    coarse_marginal,
    har_compose,
    har_predict,
    predict,
)
from har_kit.tensor import (
    Tensor,
    backward,
    cross_entropy,
    gradient_relative_error,
    numerical_gradient,
)
from har_kit.types import ArchSpec


@pytest.fixture
def har(toy_hierarchy):
    arch = ArchSpec(kind="har", input_dim=3, hidden=[5])
    return build_model(arch, toy_hierarchy, seed=3)


def test_zero_model_is_uniform():
    model = Classifier.zeros(4, [3], 5)
    out = predict(model, np.random.default_rng(0).uniform(size=(2, 4)))
    assert np.allclose(out.data, 0.2)


def test_duplicated_input_gives_identical_rows():
    model = Classifier(4, [6], 3, seed=1)
    x = np.tile(np.random.default_rng(1).uniform(size=(1, 4)), (3, 1))
    out = predict(model, x).data
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_predict_dimension_mismatch():
    with pytest.raises(DimensionError):
        predict(Classifier(4, [], 2), np.zeros((1, 3)))


def test_argmax_ties_go_to_lowest_index():
    model = Classifier.zeros(2, [], 3)
    assert model.predict_labels(np.zeros((2, 2))).tolist() == [0, 0]


def test_parameter_count():
    model = Classifier(4, [6, 5], 3)
    assert model.parameter_count() == (4 * 6 + 6) + (6 * 5 + 5) + (5 * 3 + 3)
    assert model.layer_specs == [(4, 6), (6, 5), (5, 3)]


def test_har_compose_example():
    out = har_compose(Tensor([0.6, 0.4]), [Tensor([0.5, 0.5]), Tensor([1.0])])
    assert np.allclose(out.data, [0.3, 0.3, 0.4])


def test_har_compose_mass_in_one_block():
    out = har_compose(Tensor([1.0, 0.0]), [Tensor([0.2, 0.8]), Tensor([0.5, 0.5])])
    assert out.data[2:].sum() == 0.0
    assert out.data[:2].sum() == pytest.approx(1.0)


def test_har_compose_random_blocks_sum_to_one(rng):
    for _ in range(20):
        g = rng.dirichlet(np.ones(3))
        blocks = [Tensor(rng.dirichlet(np.ones(k))) for k in (2, 4, 1)]
        out = har_compose(Tensor(g), blocks)
        assert abs(out.data.sum() - 1.0) <= 1e-12


def test_har_compose_block_mismatch(toy_hierarchy):
    with pytest.raises(DimensionError):
        blocks = [Tensor([1.0]), Tensor([0.5, 0.5])]
        har_compose(Tensor([0.5, 0.5]), blocks, toy_hierarchy)


def test_coarse_marginal_example(toy_hierarchy):
    g = coarse_marginal(Tensor([0.2, 0.4, 0.3, 0.1]), toy_hierarchy)
    assert np.allclose(g.data, [0.6, 0.4])


def test_coarse_marginal_one_hot(toy_hierarchy):
    for y in range(4):
        g = coarse_marginal(Tensor(np.eye(4)[y]), toy_hierarchy)
        assert np.array_equal(g.data, np.eye(2)[toy_hierarchy.coarse_of(y)])


def test_coarse_marginal_recovers_coarse_distribution(rng):
    h = parse_hierarchy("A: a, b\nB: c\nC: d, e, f")
    for _ in range(20):
        g = rng.dirichlet(np.ones(3))
        blocks = [Tensor(rng.dirichlet(np.ones(k))) for k in h.block_sizes]
        recovered = coarse_marginal(har_compose(Tensor(g), blocks, h), h)
        assert np.max(np.abs(recovered.data - g)) <= 1e-12


def test_har_model_validates_components(toy_hierarchy):
    with pytest.raises(DimensionError):
        HarModel(Classifier(3, [], 3), [Classifier(3, [], 2)] * 2, toy_hierarchy)
    with pytest.raises(DimensionError):
        HarModel(
            Classifier(3, [], 2),
            [Classifier(3, [], 2), Classifier(3, [], 3)],
            toy_hierarchy,
        )


def test_har_uniform_components(toy_hierarchy):
    model = HarModel(
        Classifier.zeros(3, [], 2),
        [Classifier.zeros(3, [], 2), Classifier.zeros(3, [], 2)],
        toy_hierarchy,
    )
    out = har_predict(model, np.random.default_rng(2).uniform(size=(3, 3)))
    assert np.allclose(out.data, 0.25)


def test_har_batch_invariance(har, rng):
    x = rng.uniform(size=(4, 3))
    batch = har_predict(har, x).data
    for i in range(4):
        single = har_predict(har, x[i : i + 1]).data[0]
        assert np.allclose(batch[i], single, atol=1e-15)
    assert np.allclose(batch.sum(axis=1), 1.0, atol=1e-9)


def test_har_input_gradient_matches_finite_differences(har, rng):
    x = rng.uniform(0.1, 0.9, size=(1, 3))
    xt = Tensor(x, requires_grad=True)
    backward(cross_entropy(har.forward(xt), [2]), inputs=[xt])

    def fn(v):
        return cross_entropy(har.forward(Tensor(v)), [2]).item()

    assert gradient_relative_error(xt.grad, numerical_gradient(fn, x)) <= 1e-4


def test_har_coarse_marginal_matches_coarse_net(har, rng):
    x = rng.uniform(size=(50, 3))
    g = har.coarse_predict(x).data
    marginal = coarse_marginal(har_predict(har, x), har.hierarchy).data
    assert np.max(np.abs(marginal - g)) <= 1e-12
    assert np.array_equal(np.argmax(marginal, axis=1), np.argmax(g, axis=1))


def test_build_model_har_components(har, toy_hierarchy):
    assert isinstance(har, HarModel)
    assert har.coarse_net.class_count == 2
    assert [n.class_count for n in har.fine_nets] == toy_hierarchy.block_sizes
    assert har.class_count == 4


def test_build_model_is_seeded(toy_hierarchy):
    arch = ArchSpec(input_dim=3, hidden=[4])
    a = build_model(arch, toy_hierarchy, seed=5)
    b = build_model(arch, toy_hierarchy, seed=5)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p.data, q.data)


def test_copy_is_independent():
    model = Classifier(2, [], 2, seed=0)
    clone = model.copy()
    clone.parameters()[0].data += 1.0
    assert not np.array_equal(model.parameters()[0].data, clone.parameters()[0].data)
