"""
Synthetic hierarchical datasets and the HARDATA1 file format.

    magic     8 bytes   b"HARDATA1"
    header    uint64 n, uint32 d, uint32 fine_count, 16 ASCII bytes hierarchy hash
    features  n * d float32 LE
    labels    n uint16 LE
    checksum  32 bytes  SHA-256 of everything above
"""

import hashlib
import logging
import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from har_kit.errors import CorruptDataError, HierarchyMismatchError, SpecError
from har_kit.hierarchy import Hierarchy
from har_kit.types import SynthSpec
from har_kit.utils import make_rng

logger = logging.getLogger(__name__)

DATA_MAGIC = b"HARDATA1"
_HEADER = struct.Struct("<QII16s")
_DIGEST_SIZE = 32


class Dataset(BaseModel):
    """
    Features in [0, 1] with fine labels, bound to a hierarchy by its digest.
    """

    features: np.ndarray
    fine_labels: np.ndarray
    fine_count: int
    hierarchy_hash: str

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _check_arrays(self) -> "Dataset":
        self.features = np.asarray(self.features, dtype=np.float64)
        self.fine_labels = np.asarray(self.fine_labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be [n, d], got {self.features.shape}")
        if self.fine_labels.shape != (self.features.shape[0],):
            raise ValueError("one label per feature row")
        if self.features.size and (self.features.min() < 0 or self.features.max() > 1):
            raise ValueError("features must lie in [0, 1]")
        if self.fine_labels.size and (
            self.fine_labels.min() < 0 or self.fine_labels.max() >= self.fine_count
        ):
            raise ValueError(f"labels must lie in [0, {self.fine_count})")
        return self

    @classmethod
    def from_arrays(
        cls, features: np.ndarray, fine_labels: np.ndarray, hierarchy: Hierarchy
    ) -> "Dataset":
        return cls(
            features=features,
            fine_labels=fine_labels,
            fine_count=hierarchy.fine_count,
            hierarchy_hash=hierarchy.digest(),
        )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def coarse_labels(self, h: Hierarchy) -> np.ndarray:
        return h.coarse_labels(self.fine_labels)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            fine_labels=self.fine_labels[idx],
            fine_count=self.fine_count,
            hierarchy_hash=self.hierarchy_hash,
        )

    def by_coarse(self, h: Hierarchy) -> list[np.ndarray]:
        """
        Sample indices routed to each coarse class.
        """
        coarse = self.coarse_labels(h)
        return [np.flatnonzero(coarse == z) for z in range(h.coarse_count)]


def _placement(
    count: int, dim: int, distance: float, axes: Sequence[int]
) -> np.ndarray:
    # rows are count points pairwise `distance` apart, centred on the origin
    basis = np.zeros((count, dim))
    basis[np.arange(count), list(axes)] = 1.0
    return (distance / np.sqrt(2.0)) * (basis - basis.mean(axis=0))


def generate(spec: SynthSpec) -> tuple[Dataset, Hierarchy]:
    """
    Gaussian blobs around fine centroids. Coarse centroids sit on a scaled
    simplex around 0.5; fine centroids are offset inside each coarse cluster on
    a second simplex, so fine classes of one coarse class are closer together.
    """
    c, f, d = spec.coarse_count, spec.fines_per_coarse, spec.dim
    if c > d or f > d:
        raise SpecError(
            f"cannot place {c} coarse and {f} fine centroids per cluster "
            f"in {d} dimensions"
        )
    coarse_centres = 0.5 + _placement(c, d, spec.coarse_separation, range(c))
    fine_offsets = _placement(f, d, spec.fine_separation, range(d - f, d))
    centroids = coarse_centres[:, None, :] + fine_offsets[None, :, :]
    centroids = centroids.reshape(c * f, d)
    if centroids.min() < 0 or centroids.max() > 1:
        raise SpecError("separations push centroids outside [0, 1]; reduce them")

    hierarchy = Hierarchy(
        coarse_names=[f"c{z}" for z in range(c)],
        fine_names=[f"c{z}_f{j}" for z in range(c) for j in range(f)],
        fine_to_coarse=[z for z in range(c) for _ in range(f)],
    )
    rng = make_rng(spec.seed)
    labels = np.repeat(np.arange(c * f), spec.per_class)
    noise = spec.noise_sigma * rng.standard_normal(size=(labels.size, d))
    features = np.clip(centroids[labels] + noise, 0.0, 1.0)
    # stored at 32 bits; snapping here keeps save/load exact
    features = features.astype(np.float32).astype(np.float64)
    logger.info(
        "generated %d samples: %d coarse x %d fine, d=%d", labels.size, c, f, d
    )
    return Dataset.from_arrays(features, labels, hierarchy), hierarchy


def split(ds: Dataset, train_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """
    Stratified by fine label; each class contributes round(fraction * count)
    training samples, at least one to each side.
    """
    if not 0 < train_fraction < 1:
        raise SpecError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = make_rng(seed)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for y in np.unique(ds.fine_labels):
        members = np.flatnonzero(ds.fine_labels == y)
        if members.size < 2:
            raise SpecError(
                f"fine class {y} has {members.size} sample(s); need 2 to split"
            )
        perm = rng.permutation(members)
        n_train = round(train_fraction * members.size)
        n_train = int(np.clip(n_train, 1, members.size - 1))
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    train = ds.subset(np.sort(np.concatenate(train_idx)))
    test = ds.subset(np.sort(np.concatenate(test_idx)))
    return train, test


def save_dataset(ds: Dataset, path: str | Path) -> None:
    if ds.fine_count > np.iinfo(np.uint16).max:
        raise SpecError("HARDATA1 stores labels as uint16")
    header = _HEADER.pack(
        len(ds), ds.dim, ds.fine_count, ds.hierarchy_hash.encode("ascii")[:16]
    )
    body = b"".join(
        [
            DATA_MAGIC,
            header,
            ds.features.astype("<f4").tobytes(),
            ds.fine_labels.astype("<u2").tobytes(),
        ]
    )
    Path(path).write_bytes(body + hashlib.sha256(body).digest())
    logger.info("wrote %d samples to %s", len(ds), path)


def load_dataset(path: str | Path, hierarchy: Hierarchy | None = None) -> Dataset:
    """
    Reads a HARDATA1 file; when ``hierarchy`` is given, its digest must match
    the one stored in the file.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(DATA_MAGIC) + _HEADER.size + _DIGEST_SIZE:
        raise CorruptDataError(f"{path}: file too short")
    if raw[: len(DATA_MAGIC)] != DATA_MAGIC:
        raise CorruptDataError(f"{path}: bad magic")
    body, digest = raw[:-_DIGEST_SIZE], raw[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptDataError(f"{path}: checksum mismatch")

    n, d, fine_count, hash_bytes = _HEADER.unpack_from(body, len(DATA_MAGIC))
    stored_hash = hash_bytes.decode("ascii").rstrip("\x00")
    offset = len(DATA_MAGIC) + _HEADER.size
    expected = offset + n * d * 4 + n * 2
    if len(body) != expected:
        raise CorruptDataError(f"{path}: expected {expected} bytes, found {len(body)}")
    if hierarchy is not None and stored_hash != hierarchy.digest():
        raise HierarchyMismatchError(hierarchy.digest(), stored_hash)

    features = np.frombuffer(body, dtype="<f4", count=n * d, offset=offset)
    labels = np.frombuffer(body, dtype="<u2", count=n, offset=offset + n * d * 4)
    if n and int(labels.max()) >= fine_count:
        raise CorruptDataError(f"{path}: label outside [0, {fine_count})")
    return Dataset(
        features=features.astype(np.float64).reshape(n, d),
        fine_labels=labels.astype(np.int64),
        fine_count=fine_count,
        hierarchy_hash=stored_hash,
    )
