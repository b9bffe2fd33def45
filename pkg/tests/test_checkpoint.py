import struct

import numpy as np
import pytest

from giin.checkpoint import MAGIC, atomic_write, checkpoint_load, checkpoint_save, encode_checkpoint
from giin.config import ExperimentConfig
from giin.errors import FormatError
from giin.model import GiinModel
from giin.schema import DEFAULT_SCHEMA, load_schema


@pytest.fixture
def saved(tmp_path):
    cfg = ExperimentConfig(scale=0.0625, variant="dc", seed=3)
    model = GiinModel(cfg)
    path = tmp_path / "m.giin"
    checkpoint_save(model.params, cfg, path)
    return model, cfg, path


def test_round_trip_bit_exact(saved):
    model, cfg, path = saved
    params, cfg2 = checkpoint_load(path)
    assert cfg2 == cfg
    assert list(params) == list(model.params)
    for k in params:
        assert params[k].data.tobytes() == model.params[k].data.tobytes()


def test_file_size_is_header_plus_eight_bytes_per_value(saved):
    model, cfg, path = saved
    size = path.stat().st_size
    names = sum(2 + len(n.encode()) + 1 + 4 * p.ndim for n, p in model.params.items())
    assert size - 8 * model.params.count() - names < 1024
    assert size > 8 * model.params.count()


def _edit_topology(raw: bytes, new: bytes) -> bytes:
    pos = 8 + 4 + 8
    (n,) = struct.unpack_from("<H", raw, pos)
    assert raw[pos + 2:pos + 2 + n] == b"dc"
    return raw[:pos] + struct.pack("<H", len(new)) + new + raw[pos + 2 + n:]


def test_edited_topology_is_format_error(saved, tmp_path):
    _, _, path = saved
    bad = tmp_path / "bad.giin"
    bad.write_bytes(_edit_topology(path.read_bytes(), b"cd"))
    with pytest.raises(FormatError, match="topology"):
        checkpoint_load(bad)


@pytest.mark.parametrize("mutate,match", [
    (lambda r: b"NOTGIIN!" + r[8:], "magic"),
    (lambda r: r[:8] + struct.pack("<I", 9) + r[12:], "version"),
    (lambda r: r[:-3], "truncated"),
    (lambda r: r + b"\x00", "trailing"),
])
def test_corrupt_files(saved, tmp_path, mutate, match):
    _, _, path = saved
    bad = tmp_path / "bad.giin"
    bad.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(FormatError, match=match):
        checkpoint_load(bad)


def test_schema_mismatch(saved, tmp_path):
    _, _, path = saved
    (tmp_path / "s.txt").write_text("threshold = 4\n")
    with pytest.raises(FormatError, match="schema"):
        checkpoint_load(path, load_schema(tmp_path / "s.txt"))


def test_tensor_set_must_match_config(saved, tmp_path):
    model, cfg, _ = saved
    other = GiinModel(ExperimentConfig(scale=0.0625, variant="fused"))
    raw = encode_checkpoint(other.params, cfg, DEFAULT_SCHEMA)
    (tmp_path / "x.giin").write_bytes(raw)
    with pytest.raises(FormatError, match="architecture"):
        checkpoint_load(tmp_path / "x.giin")


def test_header_layout(saved):
    _, _, path = saved
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    version, schema_hash = struct.unpack_from("<IQ", raw, 8)
    assert version == 1 and schema_hash == DEFAULT_SCHEMA.hash64()


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "sub" / "a.txt", "hello")
    atomic_write(tmp_path / "sub" / "a.txt", b"bye")
    assert (tmp_path / "sub" / "a.txt").read_bytes() == b"bye"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]


def test_loaded_model_predicts_identically(saved):
    model, cfg, path = saved
    params, cfg2 = checkpoint_load(path)
    x = np.random.default_rng(0).normal(size=(2, cfg.feature_dim))
    a = model.forward(x, x).probabilities()
    b = GiinModel(cfg2, params=params).forward(x, x).probabilities()
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
