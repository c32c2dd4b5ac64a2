"""Checkpoint directory format: a JSON manifest plus raw float32 arrays.

Layout:

    manifest            JSON: dims, method, counters, hyperparameters,
                        standardization stats, and the array index
    arrays/<state-key>  raw little-endian float32, row-major, one file per
                        model state entry
    arrays/opt/<key>    optimizer momentum buffers, same encoding

Integer bookkeeping buffers (batch-norm step counters) are not stored; they
do not influence forward or backward passes at a fixed momentum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .errors import CheckpointError
from .models import ModelDims, PretrainModel

MANIFEST_NAME = "manifest"
ARRAY_DIR = "arrays"
OPT_DIR = "opt"
FORMAT_TAG = "csissl-checkpoint"
ARRAY_DTYPE = np.dtype("<f4")


@dataclass
class CheckpointBundle:
    """A loaded checkpoint: rebuilt model plus raw training state."""

    manifest: dict[str, Any]
    model: PretrainModel
    opt_buffers: dict[str, np.ndarray]

    @property
    def method(self) -> str:
        return self.manifest["method"]

    @property
    def dims(self) -> ModelDims:
        return _dims_from_manifest(self.manifest)


def _dims_to_manifest(dims: ModelDims) -> dict[str, Any]:
    return {
        "links": dims.links,
        "subcarriers": dims.subcarriers,
        "frames_per_window": dims.frames_per_window,
        "embed_dim": dims.embed_dim,
        "context_dim": dims.context_dim,
        "n_future": dims.n_future,
        "projector_dim": dims.projector_dim,
        "conv_channels": list(dims.conv_channels),
    }


def _dims_from_manifest(manifest: dict[str, Any]) -> ModelDims:
    d = manifest["dims"]
    return ModelDims(
        links=int(d["links"]),
        subcarriers=int(d["subcarriers"]),
        frames_per_window=int(d["frames_per_window"]),
        embed_dim=int(d["embed_dim"]),
        context_dim=int(d["context_dim"]),
        n_future=int(d["n_future"]),
        projector_dim=int(d["projector_dim"]),
        conv_channels=tuple(int(c) for c in d["conv_channels"]),
    )


def save_checkpoint(
    path: str | Path,
    model: PretrainModel,
    method: str,
    counters: dict[str, int],
    hyper: dict[str, Any],
    standardize: dict[str, Any],
    opt_buffers: dict[str, torch.Tensor] | None = None,
) -> Path:
    """Write the model (and optional optimizer buffers) under `path`."""
    path = Path(path)
    array_root = path / ARRAY_DIR
    array_root.mkdir(parents=True, exist_ok=True)
    model_keys = []
    for key, tensor in model.state_dict().items():
        if not tensor.dtype.is_floating_point:
            continue
        data = tensor.detach().cpu().numpy().astype(ARRAY_DTYPE, copy=False)
        (array_root / key).write_bytes(data.tobytes())
        model_keys.append(key)
    opt_keys = []
    if opt_buffers:
        (array_root / OPT_DIR).mkdir(exist_ok=True)
        for key, tensor in opt_buffers.items():
            data = tensor.detach().cpu().numpy().astype(ARRAY_DTYPE, copy=False)
            (array_root / OPT_DIR / key).write_bytes(data.tobytes())
            opt_keys.append(key)
    manifest = {
        "format": FORMAT_TAG,
        "version": 1,
        "method": method,
        "dims": _dims_to_manifest(model.dims),
        "counters": dict(counters),
        "hyper": dict(hyper),
        "standardize": dict(standardize),
        "arrays": {"model": sorted(model_keys), "optimizer": sorted(opt_keys)},
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True), "utf-8")
    return path


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    """Rebuild the model from a checkpoint directory, validating shapes."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint manifest: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise CheckpointError(f"not a checkpoint manifest: format={manifest.get('format')!r}")
    try:
        dims = _dims_from_manifest(manifest)
        model_keys = manifest["arrays"]["model"]
        opt_keys = manifest["arrays"]["optimizer"]
        method = manifest["method"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"incomplete checkpoint manifest: {exc}") from exc

    model = PretrainModel(dims)
    state = model.state_dict()
    float_keys = {k for k, v in state.items() if v.dtype.is_floating_point}
    if set(model_keys) != float_keys:
        missing = sorted(float_keys - set(model_keys))
        extra = sorted(set(model_keys) - float_keys)
        raise CheckpointError(
            f"checkpoint arrays do not match the declared architecture "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for key in model_keys:
        target = state[key]
        file_path = path / ARRAY_DIR / key
        if not file_path.is_file():
            raise CheckpointError(f"missing checkpoint array {key!r}")
        raw = file_path.read_bytes()
        expected = target.numel() * ARRAY_DTYPE.itemsize
        if len(raw) != expected:
            raise CheckpointError(
                f"array {key!r} holds {len(raw)} bytes, expected {expected}"
            )
        arr = np.frombuffer(raw, dtype=ARRAY_DTYPE).reshape(tuple(target.shape))
        with torch.no_grad():
            target.copy_(torch.from_numpy(arr.copy()))
    opt_buffers = {}
    for key in opt_keys:
        file_path = path / ARRAY_DIR / OPT_DIR / key
        if not file_path.is_file():
            raise CheckpointError(f"missing optimizer array {key!r}")
        opt_buffers[key] = np.frombuffer(file_path.read_bytes(), dtype=ARRAY_DTYPE).copy()
    return CheckpointBundle(manifest=manifest, model=model, opt_buffers=opt_buffers)
