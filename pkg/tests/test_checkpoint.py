import struct

import numpy as np
import pytest

from bnaf.checkpoint import MAGIC, decode, encode, load_checkpoint, read_header, save_checkpoint
from bnaf.errors import CheckpointError
from bnaf.trainer import TrainConfig, initial_checkpoint, train


@pytest.fixture(scope="module")
def trained():
    cfg = TrainConfig(k=2, layers=1, batch_size=16, max_iterations=15, eval_interval=5, held_out_size=50,
                      polyak=0.5)
    return train(cfg).checkpoint


def test_round_trip_is_exact(trained, tmp_path):
    path = tmp_path / "c.bnaf"
    save_checkpoint(path, trained)
    back = load_checkpoint(path)
    assert back.config == trained.config
    assert back.iteration == trained.iteration == 15
    assert back.rng_state == trained.rng_state
    assert back.loss_history == trained.loss_history
    assert back.schedule == trained.schedule
    assert back.adam.t == trained.adam.t
    for a, b in [(back.params, trained.params), (back.averaged, trained.averaged),
                 (back.adam.m, trained.adam.m), (back.adam.v, trained.adam.v)]:
        assert list(a) == list(b)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert encode(back) == encode(trained)


def test_header_is_readable(trained):
    data = encode(trained)
    assert data[:8] == MAGIC and data[8] == 1
    header, offset = read_header(data)
    assert header["config"]["k"] == 2
    shapes = {t["name"]: t["shape"] for t in header["tensors"]}
    assert shapes["param/flow0.layer0.W_hat"] == [4, 2]
    assert shapes["polyak/flow0.gate_raw"] == []
    assert len(data) - offset == 8 * sum(int(np.prod(s)) for s in shapes.values())


def test_infinite_best_round_trips():
    ckpt = initial_checkpoint(TrainConfig(k=2, layers=1))
    assert decode(encode(ckpt)).schedule.best == float("inf")


def _corrupt(data, how):
    if how == "magic":
        return b"NOTACKPT" + data[8:]
    if how == "version":
        return data[:8] + bytes([9]) + data[9:]
    if how == "length":
        return data[:9] + struct.pack("<Q", 10 ** 9) + data[17:]
    if how == "truncated":
        return data[:-8]
    if how == "trailing":
        return data + b"\0" * 8
    if how == "short":
        return data[:5]
    if how == "json":
        return data[:17] + b"[" + data[18:]
    raise AssertionError(how)


@pytest.mark.parametrize("how", ["magic", "version", "length", "truncated", "trailing", "short", "json"])
def test_corruption_is_detected(trained, how):
    with pytest.raises(CheckpointError):
        decode(_corrupt(encode(trained), how))


def test_architecture_mismatch_is_detected(trained):
    ckpt = initial_checkpoint(TrainConfig(k=2, layers=1))
    ckpt.config = TrainConfig(k=3, layers=1)
    with pytest.raises(CheckpointError, match="architecture"):
        decode(encode(ckpt))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.bnaf")
