"""Binary checkpoint files.

Layout::

    b"BNAFCKPT"            8-byte magic
    version                1 byte
    header length          uint64, little endian
    header                 UTF-8 JSON: config, counters, rng state, tensor manifest
    payload                little-endian float64 tensors in manifest order

The header is plain text so a checkpoint can be inspected with ``head -c``;
the payload is bit-exact.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError, ConfigError
from .flow import init_params, named_parameters
from .trainer import AdamState, Checkpoint, PlateauSchedule, TrainConfig

MAGIC = b"BNAFCKPT"
VERSION = 1
_GROUPS = ("param", "adam.m", "adam.v", "polyak")


def _tensor_groups(ckpt: Checkpoint):
    return {
        "param": ckpt.params,
        "adam.m": ckpt.adam.m,
        "adam.v": ckpt.adam.v,
        "polyak": ckpt.averaged,
    }


def _finite_or_none(x: float):
    return None if math.isinf(x) else x


def encode(ckpt: Checkpoint) -> bytes:
    manifest, payload = [], []
    for group, tensors in _tensor_groups(ckpt).items():
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            manifest.append({"name": f"{group}/{name}", "shape": list(arr.shape)})
            payload.append(np.ascontiguousarray(arr).tobytes())
    sched = ckpt.schedule
    header = {
        "format": "bnaf-checkpoint",
        # the output location is a property of the run, not of the model
        "config": {k: v for k, v in ckpt.config.to_dict().items() if k != "checkpoint_path"},
        "iteration": ckpt.iteration,
        "adam": {"t": ckpt.adam.t, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
        "schedule": {"lr": sched.lr, "decay": sched.decay, "patience": sched.patience,
                     "best": _finite_or_none(sched.best), "since": sched.since},
        "loss_history": list(ckpt.loss_history),
        "rng_state": ckpt.rng_state,
        "tensors": manifest,
    }
    text = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    return MAGIC + bytes([VERSION]) + struct.pack("<Q", len(text)) + text + b"".join(payload)


def save_checkpoint(path, ckpt: Checkpoint):
    """Write ``ckpt`` atomically (temp file + rename)."""
    data = encode(ckpt)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(data: bytes):
    if len(data) < len(MAGIC) + 9:
        raise CheckpointError("file too short to be a checkpoint")
    if data[:8] != MAGIC:
        raise CheckpointError(f"bad magic {data[:8]!r}, expected {MAGIC!r}")
    version = data[8]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (length,) = struct.unpack("<Q", data[9:17])
    if 17 + length > len(data):
        raise CheckpointError(f"header length {length} exceeds file size {len(data)}")
    try:
        header = json.loads(data[17:17 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != "bnaf-checkpoint":
        raise CheckpointError("header is not a bnaf checkpoint header")
    return header, 17 + length


def _check_architecture(config: TrainConfig, groups):
    expected = {k: v.shape for k, v in named_parameters(init_params(config.flow_config, np.random.default_rng(0))).items()}
    for group, tensors in groups.items():
        got = {k: v.shape for k, v in tensors.items()}
        if got != expected:
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            wrong = sorted(k for k in set(got) & set(expected) if got[k] != expected[k])
            raise CheckpointError(
                f"tensor group {group!r} does not match the configured architecture "
                f"(missing {missing}, unexpected {extra}, wrong shape {wrong})"
            )


def decode(data: bytes) -> Checkpoint:
    header, offset = read_header(data)
    groups = {g: {} for g in _GROUPS}
    try:
        for entry in header["tensors"]:
            group, name = entry["name"].split("/", 1)
            shape = tuple(int(n) for n in entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + 8 * count
            if end > len(data):
                raise CheckpointError(f"payload truncated while reading {entry['name']}")
            groups[group][name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
            offset = end
        if offset != len(data):
            raise CheckpointError(f"{len(data) - offset} trailing bytes after payload")
        config = TrainConfig.from_dict({k: v for k, v in header["config"].items()})
        _check_architecture(config, groups)
        a = header["adam"]
        adam = AdamState(groups["adam.m"], groups["adam.v"], int(a["t"]), a["beta1"], a["beta2"], a["eps"])
        s = header["schedule"]
        best = float("inf") if s["best"] is None else float(s["best"])
        schedule = PlateauSchedule(float(s["lr"]), float(s["decay"]), int(s["patience"]), best, int(s["since"]))
        return Checkpoint(
            config=config,
            iteration=int(header["iteration"]),
            params=groups["param"],
            adam=adam,
            averaged=groups["polyak"],
            rng_state=header["rng_state"],
            schedule=schedule,
            loss_history=[float(x) for x in header["loss_history"]],
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data)
