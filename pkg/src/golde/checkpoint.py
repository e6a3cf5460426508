"""Binary checkpoints with a one-line JSON header.

Layout::

    GOLDE-CHECKPOINT 1\\n
    <JSON header on one line>\\n
    <payload: raw little-endian IEEE-754 arrays, back to back>

The header records entity and relation counts, the manifold config,
precision, seed, step, the vocabulary and an ``arrays`` list giving the
name, shape and byte size of every array in payload order. The entity table
comes first, then for each relation id in turn its per-component arrays
(``U``, then ``p_raw`` or ``b`` and ``beta_raw``). Loading reverses the
layout exactly, so a save/load round trip is bit exact.
"""
from __future__ import annotations

import json
import os

import numpy as np
import torch

from .errors import CheckpointError
from .model import GoldE, ProductManifoldConfig, relation_param_names

MAGIC = b"GOLDE-CHECKPOINT 1\n"
NP_DTYPES = {"f64": "<f8", "f32": "<f4"}
TORCH_PRECISION = {torch.float64: "f64", torch.float32: "f32"}


def _layout(model: GoldE):
    yield "entity", None, model.params["entity"]
    names = relation_param_names(model.config)
    for r in range(model.n_relations):
        for name in names:
            yield name, r, model.params[name][r]


def save_checkpoint(path, model: GoldE, vocab=None, seed=None, step=None, extra=None):
    precision = TORCH_PRECISION[model.dtype]
    npd = np.dtype(NP_DTYPES[precision])
    arrays, chunks = [], []
    for name, r, t in _layout(model):
        a = np.asarray(t.detach().cpu().numpy(), dtype=npd, order="C")
        arrays.append({"name": name, "relation": r, "shape": list(a.shape), "bytes": a.nbytes})
        chunks.append(a.tobytes())
    header = {
        "entities": model.n_entities,
        "relations": model.n_relations,
        "config": model.config.to_dict(),
        "precision": precision,
        "seed": seed,
        "step": step,
        "arrays": arrays,
    }
    if vocab is not None:
        header["vocab"] = {"entities": list(vocab.entities), "relations": list(vocab.relations)}
    if extra:
        header["extra"] = extra
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


def read_header(path) -> dict:
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_header(f, path):
    if f.readline() != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic line)")
    try:
        header = json.loads(f.readline().decode("utf-8"))
        header["config"] = ProductManifoldConfig.from_dict(header["config"])
        _ = header["entities"], header["relations"], header["arrays"], NP_DTYPES[header["precision"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    return header


def load_checkpoint(path):
    """Return ``(model, header)``; the header keeps vocab, seed and step."""
    if not os.path.exists(path):
        raise CheckpointError(f"{path}: no such checkpoint")
    with open(path, "rb") as f:
        header = _read_header(f, path)
        payload = f.read()
    config = header["config"]
    npd = np.dtype(NP_DTYPES[header["precision"]])
    expected = sum(a["bytes"] for a in header["arrays"])
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, header declares {expected}")
    n_rel = header["relations"]
    per_rel: dict[str, list] = {name: [None] * n_rel for name in relation_param_names(config)}
    params = {}
    offset = 0
    try:
        for entry in header["arrays"]:
            a = np.frombuffer(payload, dtype=npd, count=entry["bytes"] // npd.itemsize, offset=offset)
            a = a.reshape(entry["shape"])
            offset += entry["bytes"]
            t = torch.from_numpy(a.copy())
            if entry["relation"] is None:
                params[entry["name"]] = t
            else:
                per_rel[entry["name"]][entry["relation"]] = t
        for name, items in per_rel.items():
            if any(x is None for x in items):
                raise CheckpointError(f"{path}: missing {name} for some relations")
            params[name] = torch.stack(items)
        model = GoldE(config, params)
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: inconsistent arrays ({exc})") from None
    if model.n_entities != header["entities"]:
        raise CheckpointError(f"{path}: entity count does not match header")
    return model, header
