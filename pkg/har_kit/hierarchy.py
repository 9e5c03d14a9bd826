"""
Two-level class hierarchy: a partition of fine labels into coarse labels.

Text format, one coarse class per line::

    # comment
    Animals: bird, cat, deer, dog, frog, horse
    Vehicles: airplane, automobile, ship, truck

Fine ids are assigned in order of first appearance, so each coarse class owns a
contiguous block of fine ids and the global fine order is (coarse id, position).
"""

import hashlib
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from har_kit.errors import DomainError, HierarchyParseError
from har_kit.types import ChanceBaseline


class Hierarchy(BaseModel):
    """
    Partition of fine-label ids into coarse-label ids.
    """

    coarse_names: list[str]
    fine_names: list[str]
    fine_to_coarse: list[int]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_partition(self) -> "Hierarchy":
        if len(self.fine_names) != len(self.fine_to_coarse):
            raise ValueError("fine_names and fine_to_coarse differ in length")
        if len(set(self.coarse_names)) != len(self.coarse_names):
            raise ValueError("coarse names must be unique")
        if len(set(self.fine_names)) != len(self.fine_names):
            raise ValueError("fine names must be unique")
        c = len(self.coarse_names)
        if any(z < 0 or z >= c for z in self.fine_to_coarse):
            raise ValueError("fine_to_coarse references an unknown coarse id")
        if sorted(self.fine_to_coarse) != list(self.fine_to_coarse):
            raise ValueError("fine ids must form contiguous blocks in coarse order")
        if set(self.fine_to_coarse) != set(range(c)):
            raise ValueError("every coarse class needs at least one fine member")
        return self

    @property
    def coarse_count(self) -> int:
        return len(self.coarse_names)

    @property
    def fine_count(self) -> int:
        return len(self.fine_names)

    @property
    def coarse_array(self) -> np.ndarray:
        return np.asarray(self.fine_to_coarse, dtype=np.int64)

    @property
    def block_sizes(self) -> list[int]:
        counts = np.bincount(self.coarse_array, minlength=self.coarse_count)
        return [int(n) for n in counts]

    @property
    def block_offsets(self) -> list[int]:
        return [0, *np.cumsum(self.block_sizes).tolist()]

    def _check_fine(self, y: int) -> None:
        if not 0 <= int(y) < self.fine_count:
            raise DomainError(f"fine id {y} outside [0, {self.fine_count})")

    def _check_coarse(self, z: int) -> None:
        if not 0 <= int(z) < self.coarse_count:
            raise DomainError(f"coarse id {z} outside [0, {self.coarse_count})")

    def coarse_of(self, y: int) -> int:
        self._check_fine(y)
        return self.fine_to_coarse[int(y)]

    def coarse_labels(self, fine_labels: np.ndarray | list[int]) -> np.ndarray:
        y = np.asarray(fine_labels, dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= self.fine_count):
            raise DomainError(f"fine labels outside [0, {self.fine_count})")
        return self.coarse_array[y]

    def fines_of(self, z: int) -> list[int]:
        self._check_coarse(z)
        return list(range(self.block_offsets[z], self.block_offsets[z + 1]))

    def local_index(self, y: int) -> int:
        """
        Position of fine label y inside its coarse block.
        """
        return int(y) - self.block_offsets[self.coarse_of(y)]

    def local_labels(self, fine_labels: np.ndarray | list[int]) -> np.ndarray:
        y = np.asarray(fine_labels, dtype=np.int64)
        offsets = np.asarray(self.block_offsets[:-1], dtype=np.int64)
        return y - offsets[self.coarse_labels(y)]

    def global_fine_id(self, z: int, local: int) -> int:
        self._check_coarse(z)
        if not 0 <= local < self.block_sizes[z]:
            raise DomainError(f"coarse {z} has no local fine index {local}")
        return self.block_offsets[z] + local

    def membership_matrix(self) -> np.ndarray:
        m = np.zeros((self.fine_count, self.coarse_count))
        m[np.arange(self.fine_count), self.coarse_array] = 1.0
        return m

    def to_text(self) -> str:
        lines = []
        for z, name in enumerate(self.coarse_names):
            members = ", ".join(self.fine_names[y] for y in self.fines_of(z))
            lines.append(f"{name}: {members}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


def parse_hierarchy(text: str) -> Hierarchy:
    coarse_names: list[str] = []
    fine_names: list[str] = []
    fine_to_coarse: list[int] = []
    seen_fine: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise HierarchyParseError("expected 'coarse: fine1, fine2, ...'", lineno)
        coarse, _, rest = line.partition(":")
        coarse = coarse.strip()
        if not coarse:
            raise HierarchyParseError("empty coarse name", lineno)
        if coarse in coarse_names:
            raise HierarchyParseError(f"duplicate coarse class '{coarse}'", lineno)
        members = [m.strip() for m in rest.split(",") if m.strip()]
        if not members:
            raise HierarchyParseError(
                f"coarse class '{coarse}' has no fine labels", lineno
            )
        z = len(coarse_names)
        coarse_names.append(coarse)
        for fine in members:
            if fine in seen_fine:
                raise HierarchyParseError(
                    f"fine label '{fine}' already listed on line {seen_fine[fine]}",
                    lineno,
                )
            seen_fine[fine] = lineno
            fine_names.append(fine)
            fine_to_coarse.append(z)

    if not coarse_names:
        raise HierarchyParseError("hierarchy has no coarse classes")
    return Hierarchy(
        coarse_names=coarse_names, fine_names=fine_names, fine_to_coarse=fine_to_coarse
    )


def load_hierarchy(path: str | Path) -> Hierarchy:
    return parse_hierarchy(Path(path).read_text(encoding="utf-8"))


def save_hierarchy(h: Hierarchy, path: str | Path, header: str | None = None) -> None:
    """
    Writes the text form; ``header`` goes first as a comment line the parser skips.
    """
    text = h.to_text()
    if header:
        text = f"# {header}\n" + text
    Path(path).write_text(text, encoding="utf-8")


def coarse_of(h: Hierarchy, y: int) -> int:
    return h.coarse_of(y)


def candidate_targets(h: Hierarchy, y_star: int) -> list[int]:
    """
    Fine ids outside the coarse class of y_star, ascending. Empty for a single
    coarse class; callers decide what that means.
    """
    z_star = h.coarse_of(y_star)
    return [y for y in range(h.fine_count) if h.fine_to_coarse[y] != z_star]


def random_coarse_chance(h: Hierarchy, y_star: int) -> ChanceBaseline:
    if h.fine_count < 2:
        raise DomainError("chance baseline needs at least two fine classes")
    cross = len(candidate_targets(h, y_star))
    return ChanceBaseline(
        fine_cross_coarse=cross / (h.fine_count - 1),
        coarse_correct=1.0 / h.coarse_count,
        coarse_wrong=(h.coarse_count - 1) / h.coarse_count,
    )


def flat_hierarchy(class_count: int, prefix: str = "class") -> Hierarchy:
    """
    Every class is its own coarse class.
    """
    names = [f"{prefix}{i}" for i in range(class_count)]
    return Hierarchy(
        coarse_names=[f"{n}_group" for n in names],
        fine_names=names,
        fine_to_coarse=list(range(class_count)),
    )


def single_coarse_hierarchy(class_count: int, prefix: str = "class") -> Hierarchy:
    return Hierarchy(
        coarse_names=["all"],
        fine_names=[f"{prefix}{i}" for i in range(class_count)],
        fine_to_coarse=[0] * class_count,
    )


CIFAR10_HIERARCHY_TEXT = """\
Animals: bird, cat, deer, dog, frog, horse
Vehicles: airplane, automobile, ship, truck
"""

CIFAR100_HIERARCHY_TEXT = """\
aquatic_mammals: beaver, dolphin, otter, seal, whale
fish: aquarium_fish, flatfish, ray, shark, trout
flowers: orchid, poppy, rose, sunflower, tulip
food_containers: bottle, bowl, can, cup, plate
fruit_and_vegetables: apple, mushroom, orange, pear, sweet_pepper
household_electrical_devices: clock, keyboard, lamp, telephone, television
household_furniture: bed, chair, couch, table, wardrobe
insects: bee, beetle, butterfly, caterpillar, cockroach
large_carnivores: bear, leopard, lion, tiger, wolf
large_man-made_outdoor_things: bridge, castle, house, road, skyscraper
large_natural_outdoor_scenes: cloud, forest, mountain, plain, sea
large_omnivores_and_herbivores: camel, cattle, chimpanzee, elephant, kangaroo
medium_mammals: fox, porcupine, possum, raccoon, skunk
non-insect_invertebrates: crab, lobster, snail, spider, worm
people: baby, boy, girl, man, woman
reptiles: crocodile, dinosaur, lizard, snake, turtle
small_mammals: hamster, mouse, rabbit, shrew, squirrel
trees: maple_tree, oak_tree, palm_tree, pine_tree, willow_tree
vehicles_1: bicycle, bus, motorcycle, pickup_truck, train
vehicles_2: lawn_mower, rocket, streetcar, tank, tractor
"""

CIFAR10_HIERARCHY = parse_hierarchy(CIFAR10_HIERARCHY_TEXT)
CIFAR100_HIERARCHY = parse_hierarchy(CIFAR100_HIERARCHY_TEXT)
