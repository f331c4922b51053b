"""Checkpoint container: byte stability, integrity failures, key namespaces."""
import hashlib

import numpy as np
import pytest

from sceneparse import tensor as T
from sceneparse.checkpoint import (
    canonical_json, config_hash, load_checkpoint, save_checkpoint,
    split_records,
)
from sceneparse.errors import CheckpointError
from sceneparse.nn import Module
from sceneparse.train import OptimState


class Small(Module):
    def __init__(self):
        super().__init__()
        self.register_parameter("w", T.Tensor(np.arange(6, dtype=np.float32).reshape(2, 3)))
        self.register_parameter("b", T.Tensor(np.zeros(2, dtype=np.float32)), decay=False)
        self.register_buffer("running", np.full(3, 0.5, dtype=np.float64))


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_round_trip(tmp_path):
    m = Small()
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, m, metadata={"iteration": 12, "tag": "x"})
    meta, arrays = load_checkpoint(p)
    assert meta["iteration"] == 12 and meta["tag"] == "x"
    assert meta["format"] == 1
    assert set(arrays) == {"w", "b", "buffer:running"}
    assert np.array_equal(arrays["w"], m.state_arrays()["w"])
    assert arrays["buffer:running"].dtype == np.float64
    m2 = Small()
    m2.load_state_arrays({k: v for k, v in arrays.items()})
    assert np.array_equal(m2.state_arrays()["w"], arrays["w"])


def test_magic_prefix(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, Small())
    assert p.read_bytes()[:8] == b"SCPKPT01"


def test_byte_identical_resave(tmp_path):
    m = Small()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, m, metadata={"k": 1})
    save_checkpoint(b, m, metadata={"k": 1})
    assert sha(a) == sha(b)


def test_optimizer_state_namespace(tmp_path):
    m = Small()
    st = OptimState(max_iter=10)
    st.momentum["w"] = np.ones((2, 3), dtype=np.float32)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, m, optim_state=st)
    meta, arrays = load_checkpoint(p)
    assert "optim:w" in arrays
    model_arrays, optim_arrays = split_records(arrays)
    assert set(model_arrays) == {"w", "b", "buffer:running"}
    assert set(optim_arrays) == {"w"}
    assert np.array_equal(optim_arrays["w"], np.ones((2, 3), dtype=np.float32))


def test_missing_file():
    with pytest.raises(CheckpointError):
        load_checkpoint("/nonexistent/dir/x.ckpt")


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_truncation_detected(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, Small(), metadata={"iteration": 3})
    blob = p.read_bytes()
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(blob[:len(blob) - 9])
    with pytest.raises(CheckpointError):
        load_checkpoint(cut)


def test_config_hash_guard(tmp_path):
    cfg = {"backbone": {"stem_channels": 8}, "model": {"fpn_channels": 6}}
    h = config_hash(cfg)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, Small(), metadata={"config_hash": h})
    meta, _ = load_checkpoint(p, expected_config_hash=h)
    assert meta["config_hash"] == h
    with pytest.raises(CheckpointError):
        load_checkpoint(p, expected_config_hash="0" * len(h))


def test_config_hash_key_order_invariant():
    a = config_hash({"x": 1, "y": {"a": [1, 2], "b": None}})
    b = config_hash({"y": {"b": None, "a": [1, 2]}, "x": 1})
    assert a == b
    assert config_hash({"x": 2}) != a


def test_canonical_json_is_sorted_and_compact():
    blob = canonical_json({"b": 1, "a": [True, None, 2.5]})
    assert blob == '{"a":[true,null,2.5],"b":1}'


def test_duplicate_record_rejected(tmp_path):
    class Dup(Module):
        def __init__(self):
            super().__init__()
            self.register_parameter("w", T.Tensor(np.zeros(1, dtype=np.float32)))

    m = Dup()
    st = OptimState(max_iter=5)
    st.momentum["w"] = np.zeros(1, dtype=np.float32)
    p = tmp_path / "ok.ckpt"
    save_checkpoint(p, m, optim_state=st)   # optim:w does not collide with w
    _, arrays = load_checkpoint(p)
    assert set(arrays) == {"w", "optim:w"}
