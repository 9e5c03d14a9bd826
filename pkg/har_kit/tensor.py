"""
Dense float64 tensors with a reverse-mode tape.

Every differentiable operation records a node on the output tensor that points at
its inputs and knows how to map the output gradient to input gradients. A backward
pass collects the nodes reachable from a scalar loss in topological order and visits
each of them exactly once.
"""

import itertools
import logging
from collections.abc import Callable, Iterable, Sequence
from typing import Any

import numpy as np

from har_kit.errors import ContractError, DimensionError, DomainError, StateError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Node:
    """
    Operation record: op kind, input tensors and the local backward rule.
    """

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """
    Dense n-dimensional float64 array with optional tape participation.
    """

    __slots__ = ("id", "data", "requires_grad", "grad", "node", "_consumed")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        node: Node | None = None,
    ):
        self.id = next(_ids)
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node = node
        self._consumed = False

    @classmethod
    def constant(cls, data: Any) -> "Tensor":
        return cls(data, requires_grad=False)

    @classmethod
    def parameter(cls, data: Any) -> "Tensor":
        return cls(data, requires_grad=True)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _make(
    op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn
) -> Tensor:
    requires_grad = any(t.requires_grad for t in inputs)
    if not requires_grad:
        return Tensor(data)
    return Tensor(data, requires_grad=True, node=Node(op, inputs, backward_fn))


def _as_tensor(x: "Tensor | np.ndarray | float") -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """
    out[i, j] = sum_k x[i, k] * W[k, j] + b[j]
    """
    if x.data.ndim != 2 or W.data.ndim != 2 or b.data.ndim != 1:
        raise DimensionError(
            f"affine expects x[n,d], W[d,m], b[m]; got {x.shape}, {W.shape}, {b.shape}"
        )
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise DimensionError(
            f"affine shapes do not conform: {x.shape} @ {W.shape} + {b.shape}"
        )
    out = x.data @ W.data + b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return g @ W.data.T, x.data.T @ g, g.sum(axis=0)

    return _make("affine", out, (x, W, b), backward)


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * mask,)

    return _make("relu", out, (x,), backward)


def softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax expects [n, c], got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _make("softmax", s, (logits,), backward)


def _check_labels(labels: Iterable[int] | np.ndarray, n: int, c: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise DimensionError(f"expected {n} labels, got {y.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise DomainError(
            f"labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]"
        )
    return y


def cross_entropy(probs: Tensor, labels: Iterable[int] | np.ndarray) -> Tensor:
    """
    Mean over rows of -log(probs[i, labels[i]]), probabilities floored at 1e-12.
    """
    if probs.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects [n, c], got {probs.shape}")
    n, c = probs.shape
    y = _check_labels(labels, n, c)
    rows = np.arange(n)
    picked = probs.data[rows, y]
    clamped = np.maximum(picked, PROB_FLOOR)
    out = np.array(-np.log(clamped).mean())

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(probs.data)
        grad[rows, y] = np.where(picked > PROB_FLOOR, -1.0 / clamped, 0.0) * (g / n)
        return (grad,)

    return _make("cross_entropy", out, (probs,), backward)


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """
    Mean over rows of sum_j p_j (log p_j - log q_j); zero entries of p contribute 0.
    """
    if p.shape != q.shape or p.data.ndim != 2:
        raise DimensionError(
            f"kl_divergence expects equal [n, c] shapes, got {p.shape}, {q.shape}"
        )
    n = p.shape[0]
    pc = np.maximum(p.data, PROB_FLOOR)
    qc = np.maximum(q.data, PROB_FLOOR)
    log_ratio = np.log(pc) - np.log(qc)
    positive = p.data > 0
    terms = np.where(positive, p.data * log_ratio, 0.0)
    out = np.array(terms.sum(axis=1).mean())

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        scale = g / n
        above = p.data > PROB_FLOOR
        gp = np.where(above, log_ratio + 1.0, log_ratio) * scale
        gq = np.where(q.data > PROB_FLOOR, -p.data / qc, 0.0) * scale
        return gp, gq

    return _make("kl_divergence", out, (p, q), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add expects equal shapes, got {a.shape}, {b.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g, g

    return _make("add", a.data + b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * c,)

    return _make("scale", a.data * c, (a,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.full_like(x.data, float(g)),)

    return _make("sum", np.array(x.data.sum()), (x,), backward)


def har_compose_op(g: Tensor, blocks: Sequence[Tensor]) -> Tensor:
    """
    Concatenates g[:, i] * blocks[i] along the class axis.
    """
    if g.data.ndim != 2 or g.shape[1] != len(blocks):
        raise DimensionError(
            f"coarse output {g.shape} does not match {len(blocks)} fine blocks"
        )
    n = g.shape[0]
    for i, h in enumerate(blocks):
        if h.data.ndim != 2 or h.shape[0] != n:
            raise DimensionError(
                f"fine block {i} has shape {h.shape}, expected [{n}, *]"
            )
    widths = [h.shape[1] for h in blocks]
    offsets = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    out = np.concatenate(
        [g.data[:, i : i + 1] * h.data for i, h in enumerate(blocks)], axis=1
    )

    def backward(grad: np.ndarray) -> list[np.ndarray]:
        gg = np.empty_like(g.data)
        block_grads = []
        for i, h in enumerate(blocks):
            part = grad[:, offsets[i] : offsets[i + 1]]
            gg[:, i] = (part * h.data).sum(axis=1)
            block_grads.append(part * g.data[:, i : i + 1])
        return [gg, *block_grads]

    return _make("har_compose", out, (g, *blocks), backward)


def coarse_marginal_op(f: Tensor, membership: np.ndarray) -> Tensor:
    """
    Sums fine probabilities per coarse class: f @ membership (fine x coarse 0/1).
    """
    if f.data.ndim != 2 or f.shape[1] != membership.shape[0]:
        raise DimensionError(
            f"fine output {f.shape} does not match membership {membership.shape}"
        )

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g @ membership.T,)

    return _make("coarse_marginal", f.data @ membership, (f,), backward)


class Graph:
    """
    Topologically ordered view of the tape reachable from a scalar loss.
    """

    def __init__(self, loss: Tensor, nodes: list[Tensor]):
        self.loss = loss
        self.nodes = nodes
        self.order = {t.id: i for i, t in enumerate(nodes)}

    @classmethod
    def build(cls, loss: Tensor) -> "Graph":
        ordered: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                ordered.append(t)
                continue
            if t.id in seen:
                continue
            seen.add(t.id)
            stack.append((t, True))
            if t.node is not None:
                for parent in reversed(t.node.inputs):
                    if parent.requires_grad and parent.id not in seen:
                        stack.append((parent, False))
        return cls(loss, ordered)

    def reset(self) -> None:
        self.loss._consumed = False
        for t in self.nodes:
            t.grad = None

    def run(self, inputs: Sequence[Tensor] | None = None) -> dict[int, Tensor]:
        grads: dict[int, np.ndarray] = {self.loss.id: np.ones_like(self.loss.data)}
        for t in reversed(self.nodes):
            g = grads.get(t.id)
            if g is None or t.node is None:
                continue
            for parent, pg in zip(t.node.inputs, t.node.backward_fn(g), strict=True):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg

        wanted = (
            [t for t in self.nodes if t.node is None]
            if inputs is None
            else list(inputs)
        )
        result: dict[int, Tensor] = {}
        for leaf in wanted:
            g = grads.get(leaf.id)
            if g is None or not leaf.requires_grad:
                continue
            if not np.all(np.isfinite(g)):
                raise ContractError(f"non-finite gradient for tensor {leaf.id}")
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            result[leaf.id] = Tensor(g)
        self.loss._consumed = True
        return result


def backward(loss: Tensor, inputs: Sequence[Tensor] | None = None) -> dict[int, Tensor]:
    """
    Runs reverse mode from a scalar loss.

    Every requires_grad leaf (or only those in ``inputs``) receives dLoss/dLeaf in its
    ``grad`` field; the returned map is keyed by tensor id. Constants get no entry.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise StateError("backward already ran on this loss; call reset(loss) first")
    return Graph.build(loss).run(inputs)


def reset(loss: Tensor) -> None:
    Graph.build(loss).reset()


def numerical_gradient(
    fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """
    Central differences of a scalar function at x.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        f_plus = fn(x)
        x.flat[i] = orig - h
        f_minus = fn(x)
        x.flat[i] = orig
        grad.flat[i] = (f_plus - f_minus) / (2 * h)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    ||a - n|| / max(||a|| + ||n||, 1e-8)
    """
    num = float(np.linalg.norm(analytic - numeric))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return num / max(den, 1e-8)
