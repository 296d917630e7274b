"""Versioned binary model file.

Layout: magic ``CMNN``, u32 format version, u32 header length, UTF-8 JSON
header (hyperparameters, token list, target-token flags, parameter order and
shapes), then the flat parameter arrays as little-endian 32-bit floats in
header order. All integers little-endian.
"""
from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from ..errors import ModelFormatError
from .model import InflectorModel, TrainConfig
from .network import PARAM_ORDER
from .vocab import Vocabulary

MAGIC = b"CMNN"
FORMAT_VERSION = 1


def save_model(model: InflectorModel, fp: BinaryIO) -> None:
    header = {
        "hidden_size": model.config.hidden_size,
        "embed_size": model.config.embed_size,
        "max_len": model.config.max_len,
        "tokens": list(model.vocabulary.tokens),
        "target_tokens": sorted(model.vocabulary.target_tokens),
        "params": [
            {"name": name, "shape": list(model.params[name].shape)}
            for name in PARAM_ORDER
        ],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    fp.write(MAGIC)
    fp.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
    fp.write(blob)
    for name in PARAM_ORDER:
        fp.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def load_model(fp: BinaryIO) -> InflectorModel:
    magic = fp.read(4)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    version, header_len = struct.unpack("<II", fp.read(8))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    header = json.loads(fp.read(header_len).decode("utf-8"))
    vocab = Vocabulary(
        tokens=tuple(header["tokens"]),
        target_tokens=frozenset(header["target_tokens"]),
    )
    params: dict[str, np.ndarray] = {}
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = fp.read(4 * count)
        if len(raw) != 4 * count:
            raise ModelFormatError("truncated parameter data")
        params[spec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    config = TrainConfig(
        hidden_size=header["hidden_size"],
        embed_size=header["embed_size"],
        max_len=header["max_len"],
    )
    return InflectorModel(vocabulary=vocab, params=params, config=config)
