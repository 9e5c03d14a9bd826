import numpy as np
import pytest

from har_kit.checkpoint import (
    CHECKPOINT_MAGIC,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from har_kit.errors import CorruptCheckpointError, HierarchyMismatchError
from har_kit.hierarchy import parse_hierarchy
from har_kit.models import Classifier, HarModel, build_model
from har_kit.types import ArchSpec


@pytest.fixture
def flat_model():
    return Classifier(5, [7, 4], 4, seed=11)


@pytest.fixture
def har_model(toy_hierarchy):
    arch = ArchSpec(kind="har", input_dim=5, hidden=[6])
    return build_model(arch, toy_hierarchy, seed=2)


def test_flat_round_trip(tmp_path, flat_model, rng):
    path = tmp_path / "flat.ckpt"
    save_checkpoint(flat_model, path)
    loaded = load_checkpoint(path)
    x = rng.uniform(size=(10, 5))
    assert np.array_equal(flat_model.predict(x).data, loaded.predict(x).data)
    for a, b in zip(flat_model.parameter_arrays(), loaded.parameter_arrays()):
        assert np.array_equal(a, b)


def test_har_round_trip(tmp_path, har_model, toy_hierarchy, rng):
    path = tmp_path / "har.ckpt"
    save_checkpoint(har_model, path, config_hash="abc", seed=9)
    loaded = load_checkpoint(path, toy_hierarchy)
    assert isinstance(loaded, HarModel)
    assert loaded.hierarchy == toy_hierarchy
    x = rng.uniform(size=(10, 5))
    assert np.array_equal(har_model.predict(x).data, loaded.predict(x).data)


def test_header_fields(tmp_path, har_model, toy_hierarchy):
    path = tmp_path / "har.ckpt"
    save_checkpoint(har_model, path, config_hash="abc", seed=9)
    _, header = read_checkpoint(path)
    assert header.kind == "har"
    assert header.class_count == 4
    assert header.hierarchy_hash == toy_hierarchy.digest()
    assert header.config_hash == "abc"
    assert header.seed == 9
    assert len(header.shapes) == len(har_model.parameters())


def test_truncated_file(tmp_path, flat_model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(flat_model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_flipped_byte(tmp_path, flat_model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(flat_model, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpointError, match="checksum"):
        load_checkpoint(path)


def test_bad_magic(tmp_path, flat_model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(flat_model, path)
    raw = path.read_bytes()
    path.write_bytes(b"NOTACKPT" + raw[len(CHECKPOINT_MAGIC) :])
    with pytest.raises(CorruptCheckpointError, match="magic"):
        load_checkpoint(path)


def test_tiny_file(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"HAR")
    with pytest.raises(CorruptCheckpointError, match="too short"):
        load_checkpoint(path)


def test_hierarchy_mismatch(tmp_path, har_model):
    path = tmp_path / "har.ckpt"
    save_checkpoint(har_model, path)
    other = parse_hierarchy("A: a0, b0\nB: a1, b1\n")
    with pytest.raises(HierarchyMismatchError):
        load_checkpoint(path, other)


def test_save_snaps_live_parameters_to_float32(tmp_path, flat_model):
    save_checkpoint(flat_model, tmp_path / "m.ckpt")
    for a in flat_model.parameter_arrays():
        assert np.array_equal(a, a.astype(np.float32).astype(np.float64))
