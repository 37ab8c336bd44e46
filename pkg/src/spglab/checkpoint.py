"""Checkpoint serialization.

Little-endian binary layout:

    magic "SPG1" | format version u32 | variant tag u8 | replicas u32 |
    hidden u32 | classes u32 |
    parameter count u32, then per parameter:
        name length u32, name bytes, rank u32, dims u64 each, raw doubles
    optimizer flag u8, then when present:
        kind string, step count u64, per-parameter moment arrays
    rng stream count u32, then per stream: label, seed u64, counter u64
    position flag u8, then when present:
        epoch u32, step-in-epoch u32, shuffle counter at epoch start u64
    config echo length u64 + utf-8 bytes

The variant tag distinguishes stripped (0) from chained checkpoints
(1 dropout variant, 2 depth variant). Save, load, save again is
byte-identical: parameter order is preserved, arrays round-trip as raw
bytes, and no timestamps are stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

MAGIC = b"SPG1"
FORMAT_VERSION = 1

VARIANT_TAG_BASE = 0
VARIANT_TAG_DROPOUT = 1
VARIANT_TAG_DEPTH = 2
VARIANT_TAGS = (VARIANT_TAG_BASE, VARIANT_TAG_DROPOUT, VARIANT_TAG_DEPTH)


class CheckpointError(ValueError):
    """Raised on malformed checkpoint files or version mismatches."""


@dataclass
class OptimizerSnapshot:
    """Optimizer kind, step count, and per-parameter moment arrays (empty
    for plain SGD)."""

    kind: str
    step: int
    slots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)


@dataclass
class TrainPosition:
    """Where inside a run the checkpoint was taken. The shuffle counter is
    the stream counter at the start of the current epoch, so resuming can
    re-draw the epoch's permutation and skip to step_in_epoch."""

    epoch: int
    step_in_epoch: int
    shuffle_counter_epoch_start: int


@dataclass
class CheckpointData:
    variant: int
    replicas: int
    hidden: int
    classes: int
    params: Dict[str, np.ndarray]
    optimizer: Optional[OptimizerSnapshot] = None
    rng_states: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    position: Optional[TrainPosition] = None
    config_text: str = ""


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def _write_f64_array(fh, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def _read_f64_array(fh) -> np.ndarray:
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise CheckpointError("checkpoint truncated inside an array")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_checkpoint(path: str, data: CheckpointData) -> None:
    if data.variant not in VARIANT_TAGS:
        raise CheckpointError(f"unknown variant tag {data.variant}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<BIII", data.variant, data.replicas,
                             data.hidden, data.classes))

        fh.write(struct.pack("<I", len(data.params)))
        for name, arr in data.params.items():
            _write_str(fh, name)
            _write_f64_array(fh, arr)

        fh.write(struct.pack("<B", 1 if data.optimizer is not None else 0))
        if data.optimizer is not None:
            opt = data.optimizer
            _write_str(fh, opt.kind)
            fh.write(struct.pack("<Q", opt.step))
            fh.write(struct.pack("<I", len(opt.slots)))
            for name, slot in opt.slots.items():
                _write_str(fh, name)
                fh.write(struct.pack("<I", len(slot)))
                for key in sorted(slot):
                    _write_str(fh, key)
                    _write_f64_array(fh, slot[key])

        fh.write(struct.pack("<I", len(data.rng_states)))
        for label in sorted(data.rng_states):
            seed, counter = data.rng_states[label]
            _write_str(fh, label)
            fh.write(struct.pack("<QQ", seed, counter))

        fh.write(struct.pack("<B", 1 if data.position is not None else 0))
        if data.position is not None:
            fh.write(struct.pack("<IIQ", data.position.epoch,
                                 data.position.step_in_epoch,
                                 data.position.shuffle_counter_epoch_start))

        raw = data.config_text.encode("utf-8")
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)


def load_checkpoint(path: str) -> CheckpointData:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"not a checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format version {version} "
                f"(this build reads version {FORMAT_VERSION})")
        variant, replicas, hidden, classes = struct.unpack("<BIII", fh.read(13))
        if variant not in VARIANT_TAGS:
            raise CheckpointError(f"unknown variant tag {variant}")

        (n_params,) = struct.unpack("<I", fh.read(4))
        params: Dict[str, np.ndarray] = {}
        for _ in range(n_params):
            name = _read_str(fh)
            params[name] = _read_f64_array(fh)

        (has_opt,) = struct.unpack("<B", fh.read(1))
        optimizer = None
        if has_opt:
            kind = _read_str(fh)
            (step,) = struct.unpack("<Q", fh.read(8))
            (n_slots,) = struct.unpack("<I", fh.read(4))
            slots: Dict[str, Dict[str, np.ndarray]] = {}
            for _ in range(n_slots):
                pname = _read_str(fh)
                (n_keys,) = struct.unpack("<I", fh.read(4))
                slot = {}
                for _ in range(n_keys):
                    key = _read_str(fh)
                    slot[key] = _read_f64_array(fh)
                slots[pname] = slot
            optimizer = OptimizerSnapshot(kind, step, slots)

        (n_streams,) = struct.unpack("<I", fh.read(4))
        rng_states: Dict[str, Tuple[int, int]] = {}
        for _ in range(n_streams):
            label = _read_str(fh)
            seed, counter = struct.unpack("<QQ", fh.read(16))
            rng_states[label] = (seed, counter)

        (has_pos,) = struct.unpack("<B", fh.read(1))
        position = None
        if has_pos:
            epoch, step_in_epoch, shuffle_counter = struct.unpack("<IIQ", fh.read(16))
            position = TrainPosition(epoch, step_in_epoch, shuffle_counter)

        (text_len,) = struct.unpack("<Q", fh.read(8))
        config_text = fh.read(text_len).decode("utf-8")

    return CheckpointData(variant, replicas, hidden, classes, params,
                          optimizer, rng_states, position, config_text)
