import numpy as np
import pytest

from har_kit.errors import ContractError, DimensionError, DomainError, StateError
from har_kit.tensor import (
    Graph,
    Tensor,
    add,
    affine,
    backward,
    coarse_marginal_op,
    cross_entropy,
    gradient_relative_error,
    har_compose_op,
    kl_divergence,
    numerical_gradient,
    relu,
    reset,
    softmax,
    tensor_sum,
)


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    # scalar reduction of a [n, m] output: sum(out @ w)
    return tensor_sum(affine(out, Tensor(weights), Tensor(np.zeros(weights.shape[1]))))


def _grad_check(build, arrays, tol=1e-4):
    params = [Tensor.parameter(a.copy()) for a in arrays]
    backward(build(*params))
    for i, a in enumerate(arrays):

        def fn(v, i=i):
            args = [Tensor(b) for b in arrays]
            args[i] = Tensor(v)
            return build(*args).item()

        numeric = numerical_gradient(fn, a)
        assert gradient_relative_error(params[i].grad, numeric) <= tol


def test_affine_identity():
    out = affine(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_affine_hand_arithmetic():
    out = affine(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
    assert out.data.tolist() == [[6.0]]


def test_affine_matches_triple_loop(rng):
    x, W, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    expected = np.zeros((2, 4))
    for i in range(2):
        for j in range(4):
            expected[i, j] = sum(x[i, k] * W[k, j] for k in range(3)) + b[j]
    out = affine(Tensor(x), Tensor(W), Tensor(b))
    assert np.max(np.abs(out.data - expected)) <= 1e-12


def test_affine_shape_mismatch():
    with pytest.raises(DimensionError):
        affine(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))), Tensor(np.ones(2)))


def test_relu_values():
    assert relu(Tensor([[-1.0, 0.0, 2.0]])).data.tolist() == [[0.0, 0.0, 2.0]]
    assert np.all(relu(Tensor(-np.ones((2, 3)))).data == 0)


def test_relu_subgradient():
    x = Tensor.parameter([[-1.0, 2.0]])
    backward(tensor_sum(relu(x)))
    assert x.grad.tolist() == [[0.0, 1.0]]


def test_softmax_symmetric_and_saturated():
    assert np.allclose(softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    s = softmax(Tensor([[1000.0, 0.0]])).data
    assert abs(s[0, 0] - 1.0) <= 1e-12 and s[0, 1] <= 1e-12
    assert np.all(np.isfinite(s))


def test_softmax_matches_extended_precision():
    logits = np.array([1.0, 2.0, 3.0], dtype=np.longdouble)
    oracle = np.exp(logits) / np.exp(logits).sum()
    s = softmax(Tensor([[1.0, 2.0, 3.0]])).data[0]
    assert np.max(np.abs(s - oracle.astype(np.float64))) <= 1e-15


def test_softmax_rows_sum_to_one_for_large_logits(rng):
    logits = rng.uniform(-1e4, 1e4, size=(50, 7))
    s = softmax(Tensor(logits)).data
    assert np.all(s >= 0)
    assert np.max(np.abs(s.sum(axis=1) - 1)) <= 1e-9


def test_cross_entropy_values(rng):
    assert cross_entropy(Tensor([[1.0, 0.0]]), [0]).item() <= 1e-12
    assert cross_entropy(Tensor([[0.5, 0.5]]), [1]).item() == pytest.approx(np.log(2))
    probs = softmax(Tensor(rng.normal(size=(3, 4)))).data
    labels = [0, 3, 2]
    expected = np.mean([-np.log(probs[i, y]) for i, y in enumerate(labels)])
    value = cross_entropy(Tensor(probs), labels).item()
    assert value == pytest.approx(expected, abs=1e-14)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(DomainError):
        cross_entropy(Tensor([[0.5, 0.5]]), [2])


def test_kl_divergence_values(rng):
    p = softmax(Tensor(rng.normal(size=(4, 5))))
    assert kl_divergence(p, p).item() == 0.0
    kl = kl_divergence(Tensor([[1.0, 0.0]]), Tensor([[0.5, 0.5]])).item()
    assert kl == pytest.approx(np.log(2))


def test_kl_divergence_matches_extended_precision(rng):
    p = softmax(Tensor(rng.normal(size=(3, 4)))).data
    q = softmax(Tensor(rng.normal(size=(3, 4)))).data
    pl, ql = p.astype(np.longdouble), q.astype(np.longdouble)
    oracle = float(np.mean(np.sum(pl * (np.log(pl) - np.log(ql)), axis=1)))
    value = kl_divergence(Tensor(p), Tensor(q)).item()
    assert abs(value - oracle) <= 1e-10
    assert value >= -1e-9


def test_backward_sum_gives_ones():
    x = Tensor.parameter(np.zeros((2, 3)))
    grads = backward(tensor_sum(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))
    assert np.array_equal(grads[x.id].data, np.ones((2, 3)))


def test_backward_constant_leaf_gets_no_entry():
    x = Tensor.parameter([[1.0, 2.0]])
    c = Tensor.constant([[3.0, 4.0]])
    W = Tensor.constant(np.eye(2))
    grads = backward(tensor_sum(add(affine(x, W, Tensor([0.0, 0.0])), c)))
    assert x.id in grads
    assert c.id not in grads and W.id not in grads
    assert c.grad is None and W.grad is None


def test_backward_non_scalar_is_contract_error():
    x = Tensor.parameter([[1.0, 2.0]])
    with pytest.raises(ContractError):
        backward(relu(x))


def test_double_backward_needs_reset():
    x = Tensor.parameter([[1.0, -2.0]])
    loss = tensor_sum(relu(x))
    backward(loss)
    with pytest.raises(StateError):
        backward(loss)
    reset(loss)
    x.zero_grad()
    backward(loss)
    assert x.grad.tolist() == [[1.0, 0.0]]


def test_backward_restricted_to_inputs():
    x = Tensor.parameter([[1.0, 2.0]])
    W = Tensor.parameter(np.eye(2))
    backward(tensor_sum(affine(x, W, Tensor([0.0, 0.0]))), inputs=[x])
    assert x.grad is not None and W.grad is None


def test_graph_visits_each_node_once():
    x = Tensor.parameter([[0.5, -0.5]])
    h = relu(x)
    W, b = Tensor.parameter(np.eye(2)), Tensor.parameter(np.zeros(2))
    loss = tensor_sum(affine(h, W, b))
    graph = Graph.build(loss)
    ids = [t.id for t in graph.nodes]
    assert len(ids) == len(set(ids))
    for t in graph.nodes:
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad:
                    assert graph.order[parent.id] < graph.order[t.id]


def test_two_class_toy_matches_finite_differences(rng):
    x = rng.uniform(-2, 2, size=(1, 3))

    def build(W, b):
        return cross_entropy(softmax(affine(Tensor(x), W, b)), [1])

    _grad_check(build, [rng.uniform(-2, 2, size=(3, 2)), rng.uniform(-2, 2, size=2)])


@pytest.mark.parametrize("case", range(100))
def test_op_gradients_match_finite_differences(case):
    rng = np.random.default_rng(case)
    n, d, m = 2, 3, 4
    w = rng.uniform(-2, 2, size=(m, 1))
    x = rng.uniform(-2, 2, size=(n, d))
    W = rng.uniform(-2, 2, size=(d, m))
    b = rng.uniform(-2, 2, size=m)
    logits = rng.uniform(-2, 2, size=(n, m))
    labels = rng.integers(0, m, size=n)

    _grad_check(lambda x_, W_, b_: _weighted_sum(affine(x_, W_, b_), w), [x, W, b])
    _grad_check(lambda z: _weighted_sum(relu(z), w), [logits])
    _grad_check(lambda z: _weighted_sum(softmax(z), w), [logits])
    _grad_check(lambda z: cross_entropy(softmax(z), labels), [logits])
    other = rng.uniform(-2, 2, size=(n, m))
    _grad_check(lambda z, u: kl_divergence(softmax(z), softmax(u)), [logits, other])


def test_composition_ops_match_finite_differences(rng):
    g_logits = rng.uniform(-2, 2, size=(2, 2))
    h1 = rng.uniform(-2, 2, size=(2, 2))
    h2 = rng.uniform(-2, 2, size=(2, 3))
    membership = np.array([[1, 0], [1, 0], [0, 1], [0, 1], [0, 1]], dtype=float)

    def build(g, a, c):
        f = har_compose_op(softmax(g), [softmax(a), softmax(c)])
        return cross_entropy(f, [4, 1])

    _grad_check(build, [g_logits, h1, h2])

    def build_marginal(z):
        f = softmax(z)
        return cross_entropy(coarse_marginal_op(f, membership), [1, 0])

    _grad_check(build_marginal, [rng.uniform(-2, 2, size=(2, 5))])


def test_backward_is_deterministic(rng):
    x = rng.uniform(-2, 2, size=(4, 3))
    W = rng.uniform(-2, 2, size=(3, 5))

    def grads():
        Wt = Tensor.parameter(W)
        probs = softmax(affine(Tensor(x), Wt, Tensor(np.zeros(5))))
        backward(cross_entropy(probs, [0, 1, 2, 3]))
        return Wt.grad

    assert np.array_equal(grads(), grads())
