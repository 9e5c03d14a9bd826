"""
HARCKPT1 checkpoint format.

    magic       8 bytes   b"HARCKPT1"
    header_len  uint32 LE
    header      UTF-8 JSON (CheckpointHeader)
    payload     float32 LE, parameters in model order
    checksum    32 bytes  SHA-256 of everything above
"""

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ValidationError

from har_kit.errors import CorruptCheckpointError, HierarchyMismatchError
from har_kit.hierarchy import Hierarchy, parse_hierarchy
from har_kit.models import Classifier, HarModel, ProbabilisticClassifier, arch_of
from har_kit.types import ArchSpec

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HARCKPT1"
CHECKPOINT_VERSION = 1
_DIGEST_SIZE = 32


class CheckpointHeader(BaseModel):
    version: int = CHECKPOINT_VERSION
    kind: Literal["flat", "har"]
    arch: ArchSpec
    class_count: int
    shapes: list[list[int]]
    hierarchy_text: str | None = None
    hierarchy_hash: str | None = None
    config_hash: str = ""
    seed: int = 0


def save_checkpoint(
    model: ProbabilisticClassifier,
    path: str | Path,
    hierarchy: Hierarchy | None = None,
    config_hash: str = "",
    seed: int = 0,
) -> None:
    """
    Writes the model and snaps its live parameters to float32 so the in-memory
    model and a later load predict identically.
    """
    if isinstance(model, HarModel):
        hierarchy = model.hierarchy
    arrays = []
    for p in model.parameters():
        p.data = p.data.astype("<f4").astype(np.float64)
        arrays.append(p.data.astype("<f4"))

    header = CheckpointHeader(
        kind="har" if isinstance(model, HarModel) else "flat",
        arch=arch_of(model),
        class_count=model.class_count,
        shapes=[list(a.shape) for a in arrays],
        hierarchy_text=hierarchy.to_text() if hierarchy is not None else None,
        hierarchy_hash=hierarchy.digest() if hierarchy is not None else None,
        config_hash=config_hash,
        seed=seed,
    )
    header_bytes = header.model_dump_json().encode("utf-8")
    body = b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<I", len(header_bytes)),
            header_bytes,
            *(a.tobytes() for a in arrays),
        ]
    )
    Path(path).write_bytes(body + hashlib.sha256(body).digest())
    logger.info("wrote checkpoint %s (%d parameters)", path, model.parameter_count())


def read_checkpoint(
    path: str | Path,
) -> tuple[ProbabilisticClassifier, CheckpointHeader]:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 + _DIGEST_SIZE:
        raise CorruptCheckpointError(f"{path}: file too short")
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic")
    body, digest = raw[:-_DIGEST_SIZE], raw[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch")

    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    try:
        header = CheckpointHeader.model_validate(
            json.loads(body[offset : offset + header_len].decode("utf-8"))
        )
    except (ValueError, ValidationError) as e:
        raise CorruptCheckpointError(f"{path}: unreadable header ({e})") from e
    if header.version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported version {header.version}")
    offset += header_len

    payload = np.frombuffer(body, dtype="<f4", offset=offset)
    expected = sum(int(np.prod(s)) for s in header.shapes)
    if payload.size != expected:
        raise CorruptCheckpointError(
            f"{path}: payload holds {payload.size} values, header expects {expected}"
        )
    arrays = []
    cursor = 0
    for shape in header.shapes:
        n = int(np.prod(shape))
        arrays.append(payload[cursor : cursor + n].astype(np.float64).reshape(shape))
        cursor += n

    model = _rebuild(header)
    model.set_parameter_arrays(arrays)
    return model, header


def _rebuild(header: CheckpointHeader) -> ProbabilisticClassifier:
    arch = header.arch
    if header.kind == "flat":
        return Classifier(arch.input_dim, arch.hidden, header.class_count)
    if header.hierarchy_text is None:
        raise CorruptCheckpointError("HAR checkpoint without a hierarchy")
    h = parse_hierarchy(header.hierarchy_text)
    return HarModel(
        Classifier(arch.input_dim, arch.coarse_widths, h.coarse_count),
        [Classifier(arch.input_dim, arch.fine_widths, n) for n in h.block_sizes],
        h,
    )


def load_checkpoint(
    path: str | Path, hierarchy: Hierarchy | None = None
) -> ProbabilisticClassifier:
    """
    Loads a model; when ``hierarchy`` is given, the checkpoint must have been
    written under the same hierarchy.
    """
    model, header = read_checkpoint(path)
    if hierarchy is not None and header.hierarchy_hash is not None:
        if header.hierarchy_hash != hierarchy.digest():
            raise HierarchyMismatchError(hierarchy.digest(), header.hierarchy_hash)
    logger.debug("loaded %r from %s", model, path)
    return model
