from __future__ import annotations

import numpy as np
import pytest

from meshkit import container as ct


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ckpt = ct.Checkpoint(
        config={"width": 16, "mode": "mtl"},
        tensors={
            "enc.w1": rng.normal(size=(4, 4)).astype(np.float32),
            "head.bias": np.array([0.5], dtype=np.float32),
            "scalar": np.float32(2.0).reshape(()),
        },
        rng_state={"bit_generator": "PCG64", "state": {"state": 123, "inc": 5}},
        step=17,
        extra={"val_loss": 0.25},
    )
    path = str(tmp_path / "model.ckpt")
    ct.save_checkpoint(ckpt, path)
    loaded = ct.load_checkpoint(path)
    assert loaded.config == ckpt.config
    assert loaded.step == 17
    assert loaded.rng_state == ckpt.rng_state
    assert loaded.extra == {"val_loss": 0.25}
    assert set(loaded.tensors) == set(ckpt.tensors)
    for name, arr in ckpt.tensors.items():
        assert loaded.tensors[name].shape == np.asarray(arr).shape
        assert np.array_equal(loaded.tensors[name], np.asarray(arr, dtype=np.float32))


def test_checkpoint_bytes_deterministic(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
    p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    ct.save_checkpoint(ct.Checkpoint(config={"x": 1}, tensors=tensors), p1)
    ct.save_checkpoint(ct.Checkpoint(config={"x": 1}, tensors=tensors), p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"XXXX" + b"\x00" * 8)
    with pytest.raises(ct.ContainerError):
        ct.load_checkpoint(str(path))


def test_checkpoint_truncated(tmp_path):
    path = str(tmp_path / "model.ckpt")
    ct.save_checkpoint(
        ct.Checkpoint(config={}, tensors={"w": np.ones((8, 8), dtype=np.float32)}), path
    )
    data = open(path, "rb").read()
    open(path, "wb").write(data[:-16])
    with pytest.raises(ct.ContainerError):
        ct.load_checkpoint(path)
