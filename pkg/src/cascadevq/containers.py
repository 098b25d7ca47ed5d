"""Deterministic binary containers for model checkpoints and corpora.

Layout: 4-byte magic, little-endian uint32 manifest length, a JSON manifest
serialized with sorted keys (kind, format version, constructor config, and
an ordered array table with shapes and dtypes), then the raw array payloads
concatenated in table order.  Identical inputs produce identical bytes, so
save -> load -> save round-trips byte-for-byte.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .corpus import Corpus
from .errors import ConfigError, ShapeError
from .prior import Prior, PriorConfig
from .refiner import Refiner
from .tokenizer import Vqvae, VqvaeConfig

MAGIC = b"CVQ1"
FORMAT_VERSION = 1
_DTYPES = {"<f4": np.float32, "<i8": np.int64}


def _write(path, kind: str, config: dict, arrays: list):
    table = []
    payload = b""
    for name, arr, dtype in arrays:
        arr = np.ascontiguousarray(arr)
        table.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        payload += arr.astype(dtype).tobytes()
    manifest = json.dumps(
        {"kind": kind, "version": FORMAT_VERSION, "config": config,
         "arrays": table},
        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(manifest)).tobytes())
        fh.write(manifest)
        fh.write(payload)


def _read(path, expect_kind: str):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path} is not a checkpoint container")
        n = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        manifest = json.loads(fh.read(n))
        blob = fh.read()
    if manifest.get("kind") != expect_kind:
        raise ConfigError(f"{path} holds a {manifest.get('kind')!r} "
                          f"container, expected {expect_kind!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported container version "
                          f"{manifest.get('version')}")
    arrays = {}
    offset = 0
    for entry in manifest["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        arrays[entry["name"]] = np.frombuffer(
            blob[offset:offset + nbytes], dtype=dt).reshape(entry["shape"])
        offset += nbytes
    if offset != len(blob):
        raise ConfigError(f"{path} payload size mismatch")
    return manifest["config"], arrays


def _param_rows(params) -> list:
    return [(f"p{idx:04d}", p.data, "<f4") for idx, p in enumerate(params)]


def _load_params(params, arrays, path):
    for idx, p in enumerate(params):
        arr = arrays.get(f"p{idx:04d}")
        if arr is None or tuple(arr.shape) != p.data.shape:
            raise ShapeError(f"{path}: parameter {idx} missing or misshapen")
        p.data = arr.astype(np.float64)


def save_vqvae(path, model: Vqvae):
    _write(path, "vqvae", dataclasses.asdict(model.config),
           _param_rows(model.params()))


def load_vqvae(path) -> Vqvae:
    config, arrays = _read(path, "vqvae")
    config["base_lengths"] = tuple(config["base_lengths"])
    model = Vqvae(VqvaeConfig(**config))
    _load_params(model.params(), arrays, path)
    model.codebook.project()
    return model


def save_prior(path, model: Prior):
    _write(path, "prior", dataclasses.asdict(model.config),
           _param_rows(model.params()))


def load_prior(path) -> Prior:
    config, arrays = _read(path, "prior")
    model = Prior(PriorConfig(**config))
    _load_params(model.params(), arrays, path)
    return model


def save_refiner(path, model: Refiner):
    config = {"code_dim": model.code_dim, "num_scales": model.num_scales,
              "width": model.in_proj.data.shape[1],
              "n_heads": model.blocks[0].n_heads,
              "n_blocks": len(model.blocks)}
    _write(path, "refiner", config, _param_rows(model.params()))


def load_refiner(path) -> Refiner:
    config, arrays = _read(path, "refiner")
    model = Refiner(**config)
    _load_params(model.params(), arrays, path)
    return model


def save_corpus(path, corpus: Corpus):
    arrays = [("sequences", corpus.sequences, "<f4"),
              ("labels", corpus.labels, "<i8"),
              ("mean", corpus.mean, "<f4"),
              ("std", corpus.std, "<f4"),
              ("train_idx", corpus.train_idx, "<i8"),
              ("val_idx", corpus.val_idx, "<i8"),
              ("gait_freqs", corpus.gait_freqs, "<f4")]
    _write(path, "corpus", {"seed": corpus.seed}, arrays)


def load_corpus(path) -> Corpus:
    config, arrays = _read(path, "corpus")
    return Corpus(arrays["sequences"].astype(np.float64),
                  arrays["labels"].copy(),
                  arrays["mean"].astype(np.float64),
                  arrays["std"].astype(np.float64),
                  arrays["train_idx"].copy(),
                  arrays["val_idx"].copy(),
                  seed=config["seed"],
                  gait_freqs=arrays["gait_freqs"].astype(np.float64))
