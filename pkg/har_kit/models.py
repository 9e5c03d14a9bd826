"""
Softmax MLP classifiers and the HAR composite model.

A HAR model holds one coarse classifier and one fine classifier per coarse class.
Its fine-label distribution is the block concatenation

    F(x) = [g_1(x) H_1(x), ..., g_C(x) H_C(x)]

ordered by (coarse id, position inside the coarse class).
"""

import copy
import logging
from abc import ABC, abstractmethod
from collections.abc import Sequence

import numpy as np

from har_kit.errors import DimensionError
from har_kit.hierarchy import Hierarchy
from har_kit.tensor import (
    Tensor,
    affine,
    coarse_marginal_op,
    har_compose_op,
    relu,
    softmax,
)
from har_kit.types import ArchSpec
from har_kit.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)


def _as_input(x: Tensor | np.ndarray) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.constant(x)


class ProbabilisticClassifier(ABC):
    """
    Abstract differentiable map x -> class distribution.
    """

    @property
    @abstractmethod
    def input_dim(self) -> int:
        pass

    @property
    @abstractmethod
    def class_count(self) -> int:
        pass

    @abstractmethod
    def forward(self, x: Tensor) -> Tensor:
        """
        Returns row distributions of shape [n, class_count], on the tape.
        """
        pass

    @abstractmethod
    def parameters(self) -> list[Tensor]:
        pass

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"model expects inputs of shape [n, {self.input_dim}], got {x.shape}"
            )

    def predict(self, x: Tensor | np.ndarray) -> Tensor:
        return self.forward(_as_input(x))

    def predict_labels(self, x: Tensor | np.ndarray) -> np.ndarray:
        """
        Argmax per row; ties go to the lowest class id.
        """
        return np.argmax(self.predict(x).data, axis=1)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def parameter_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def set_parameter_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise DimensionError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays, strict=True):
            if tuple(a.shape) != p.shape:
                raise DimensionError(f"parameter shape {p.shape} != array {a.shape}")
            p.data = np.array(a, dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "ProbabilisticClassifier":
        return copy.deepcopy(self)


class Classifier(ProbabilisticClassifier):
    """
    Stack of affine + ReLU layers ending in affine + softmax.
    """

    def __init__(
        self,
        input_dim: int,
        hidden: Sequence[int],
        class_count: int,
        seed: int = 0,
    ):
        if input_dim < 1 or class_count < 1:
            raise DimensionError("input_dim and class_count must be positive")
        self._input_dim = input_dim
        self._class_count = class_count
        self.hidden = list(hidden)
        dims = [input_dim, *self.hidden, class_count]
        self.layer_specs = list(zip(dims[:-1], dims[1:], strict=True))

        # He-uniform weights, zero biases
        rng = make_rng(seed)
        self.layers: list[tuple[Tensor, Tensor]] = []
        for fan_in, fan_out in self.layer_specs:
            bound = np.sqrt(6.0 / fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            self.layers.append((Tensor.parameter(W), Tensor.parameter(b)))

    @classmethod
    def zeros(
        cls, input_dim: int, hidden: Sequence[int], class_count: int
    ) -> "Classifier":
        model = cls(input_dim, hidden, class_count)
        for W, b in model.layers:
            W.data = np.zeros_like(W.data)
            b.data = np.zeros_like(b.data)
        return model

    @property
    def input_dim(self) -> int:
        return self._input_dim

    @property
    def class_count(self) -> int:
        return self._class_count

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]

    def logits(self, x: Tensor) -> Tensor:
        self._check_input(x)
        h = x
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = affine(h, W, b)
            if i < last:
                h = relu(h)
        return h

    def forward(self, x: Tensor) -> Tensor:
        return softmax(self.logits(x))

    def __repr__(self) -> str:
        return f"Classifier(layers={self.layer_specs})"


class HarModel(ProbabilisticClassifier):
    """
    Coarse classifier plus one fine classifier per coarse class.
    """

    def __init__(
        self,
        coarse_net: Classifier,
        fine_nets: Sequence[Classifier],
        hierarchy: Hierarchy,
    ):
        if coarse_net.class_count != hierarchy.coarse_count:
            raise DimensionError(
                f"coarse net has {coarse_net.class_count} classes, "
                f"hierarchy has {hierarchy.coarse_count}"
            )
        if len(fine_nets) != hierarchy.coarse_count:
            raise DimensionError(
                f"need {hierarchy.coarse_count} fine nets, got {len(fine_nets)}"
            )
        for i, net in enumerate(fine_nets):
            if net.class_count != hierarchy.block_sizes[i]:
                raise DimensionError(
                    f"fine net {i} has {net.class_count} classes, "
                    f"coarse class {i} has {hierarchy.block_sizes[i]}"
                )
            if net.input_dim != coarse_net.input_dim:
                raise DimensionError(f"fine net {i} input dim differs from coarse net")
        self.coarse_net = coarse_net
        self.fine_nets = list(fine_nets)
        self.hierarchy = hierarchy

    @property
    def input_dim(self) -> int:
        return self.coarse_net.input_dim

    @property
    def class_count(self) -> int:
        return self.hierarchy.fine_count

    def components(self) -> list[Classifier]:
        return [self.coarse_net, *self.fine_nets]

    def parameters(self) -> list[Tensor]:
        return [p for net in self.components() for p in net.parameters()]

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        g = self.coarse_net.forward(x)
        return har_compose_op(g, [net.forward(x) for net in self.fine_nets])

    def coarse_predict(self, x: Tensor | np.ndarray) -> Tensor:
        """
        Coarse network output alone, G(x).
        """
        return self.coarse_net.forward(_as_input(x))

    def __repr__(self) -> str:
        return (
            f"HarModel(coarse={self.hierarchy.coarse_count}, "
            f"fine={self.hierarchy.fine_count})"
        )


def predict(m: ProbabilisticClassifier, x: Tensor | np.ndarray) -> Tensor:
    return m.predict(x)


def har_predict(m: HarModel, x: Tensor | np.ndarray) -> Tensor:
    return m.predict(x)


def har_compose(
    g: Tensor, h_list: Sequence[Tensor], hierarchy: Hierarchy | None = None
) -> Tensor:
    """
    Accepts a single distribution (1-D g and blocks) or a batch (2-D).
    """
    if hierarchy is not None:
        if len(h_list) != hierarchy.coarse_count:
            raise DimensionError(
                f"hierarchy has {hierarchy.coarse_count} coarse classes, "
                f"got {len(h_list)} blocks"
            )
        for i, h in enumerate(h_list):
            if h.shape[-1] != hierarchy.block_sizes[i]:
                raise DimensionError(
                    f"block {i} has length {h.shape[-1]}, "
                    f"coarse class {i} has {hierarchy.block_sizes[i]} fine labels"
                )
    if g.data.ndim == 1:
        out = har_compose_op(
            Tensor(g.data[None, :]), [Tensor(h.data[None, :]) for h in h_list]
        )
        return Tensor(out.data[0])
    return har_compose_op(g, h_list)


def coarse_marginal(f: Tensor, h: Hierarchy) -> Tensor:
    if f.data.ndim == 1:
        return Tensor(f.data @ h.membership_matrix())
    return coarse_marginal_op(f, h.membership_matrix())


def build_model(
    arch: ArchSpec, hierarchy: Hierarchy, seed: int = 0
) -> ProbabilisticClassifier:
    """
    Flat classifier over all fine labels, or a HAR model whose components are
    seeded with seed XOR index (coarse 0, fine net i gets i + 1).
    """
    if arch.kind == "flat":
        model: ProbabilisticClassifier = Classifier(
            arch.input_dim, arch.hidden, hierarchy.fine_count, seed=seed
        )
    else:
        coarse_net = Classifier(
            arch.input_dim,
            arch.coarse_widths,
            hierarchy.coarse_count,
            seed=derive_seed(seed, 0),
        )
        fine_nets = [
            Classifier(
                arch.input_dim, arch.fine_widths, size, seed=derive_seed(seed, i + 1)
            )
            for i, size in enumerate(hierarchy.block_sizes)
        ]
        model = HarModel(coarse_net, fine_nets, hierarchy)
    logger.debug("built %r with %d parameters", model, model.parameter_count())
    return model


def arch_of(model: ProbabilisticClassifier) -> ArchSpec:
    if isinstance(model, HarModel):
        return ArchSpec(
            kind="har",
            input_dim=model.input_dim,
            hidden=model.coarse_net.hidden,
            coarse_hidden=model.coarse_net.hidden,
            fine_hidden=model.fine_nets[0].hidden,
        )
    if isinstance(model, Classifier):
        return ArchSpec(kind="flat", input_dim=model.input_dim, hidden=model.hidden)
    raise TypeError(f"unsupported model type {type(model).__name__}")
