import numpy as np
import pytest

from statutepred import checkpoint as ckpt
from statutepred import model

from tests.conftest import TINY


def test_round_trip_preserves_float32_values(tmp_path):
    params = model.init_params(TINY, seed=4)
    path = tmp_path / "model.ckpt"
    ckpt.save_checkpoint(path, params, TINY, seed=4, epoch=7)
    loaded = ckpt.load_checkpoint(path)
    assert loaded.config == TINY
    assert loaded.header["seed"] == 4
    assert loaded.header["epoch"] == 7
    for name in model.ModelParams.TENSOR_NAMES:
        original = getattr(params, name)
        restored = getattr(loaded.params, name)
        assert restored.shape == original.shape
        np.testing.assert_array_equal(restored, original.astype(np.float32).astype(np.float64))


def test_same_params_byte_identical_files(tmp_path):
    params = model.init_params(TINY, seed=4)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ckpt.save_checkpoint(a, params, TINY, seed=4)
    ckpt.save_checkpoint(b, params.copy(), TINY, seed=4)
    assert a.read_bytes() == b.read_bytes()


def test_header_records_tensor_names_and_optimizer(tmp_path):
    params = model.init_params(TINY, seed=1)
    path = tmp_path / "m.ckpt"
    ckpt.save_checkpoint(path, params, TINY, seed=1)
    header = ckpt.load_checkpoint(path).header
    assert [t["name"] for t in header["tensors"]] == list(model.ModelParams.TENSOR_NAMES)
    assert header["optimizer"]["name"] == "adam"
    assert header["optimizer"]["batch_loss"] == "sum"


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_checkpoint(path)


def test_rejects_truncated_file(tmp_path):
    params = model.init_params(TINY, seed=2)
    path = tmp_path / "m.ckpt"
    ckpt.save_checkpoint(path, params, TINY)
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(Exception):
        ckpt.load_checkpoint(path)


def test_loaded_params_predict_like_saved_float32(tmp_path):
    rng = np.random.default_rng(9)
    params = model.init_params(TINY, seed=5)
    X = rng.normal(size=(3, TINY.embed_dim))
    Y = rng.normal(size=(TINY.num_statutes, TINY.embed_dim))
    path = tmp_path / "m.ckpt"
    ckpt.save_checkpoint(path, params, TINY)
    loaded = ckpt.load_checkpoint(path).params
    rounded = model.ModelParams(
        **{n: getattr(params, n).astype(np.float32).astype(np.float64)
           for n in model.ModelParams.TENSOR_NAMES}
    )
    a = model.forward(loaded, TINY, X, Y)
    b = model.forward(rounded, TINY, X, Y)
    np.testing.assert_array_equal(a.probs, b.probs)
