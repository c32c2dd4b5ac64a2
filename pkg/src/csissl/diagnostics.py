"""Collapse spectrum, embedding export, and the augmentation-pair grid."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np
import torch

from .augment import parse_spec
from .data import CsiDataset
from .errors import ConfigError, DatasetError
from .evaluate import EvalConfig, _as_bundle, _sample_windows, embed_dataset, linear_eval
from .train import TrainConfig, Trainer

SPECTRUM_HEADER = "index,singular_value"
EMBEDDINGS_FORMAT = "csissl-embeddings"
EMBEDDINGS_MANIFEST = "manifest"
GRID_HEADER = "first,second,accuracy"


def collapse_spectrum(embeddings: np.ndarray) -> np.ndarray:
    """Descending singular values of the second-moment matrix Z.T Z / B.

    Dimensional collapse shows up as vanishing tail values: rank-1
    embeddings leave exactly one nonzero entry, healthy features keep the
    whole spectrum away from zero.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected a [batch, dim] matrix, got shape {z.shape}")
    if z.shape[0] < 2:
        raise DatasetError(f"need at least 2 embeddings for a spectrum, got {z.shape[0]}")
    moment = z.T @ z / z.shape[0]
    return np.linalg.svd(moment, compute_uv=False)


def spectrum_lines(values: np.ndarray) -> list[str]:
    lines = [SPECTRUM_HEADER]
    lines.extend(f"{i},{v:.10g}" for i, v in enumerate(values))
    return lines


def diagnose_collapse(
    checkpoint,
    dataset: CsiDataset,
    out: str | Path | None = None,
    max_windows: int = 4096,
) -> np.ndarray:
    """Spectrum of the branch-A window embeddings over a validation batch.

    Writes plot-ready index,value rows to `out` when given; plot the value
    column on a log scale to read off collapsed directions.
    """
    bundle = _as_bundle(checkpoint)
    windows = _sample_windows(bundle, dataset)
    flat = windows.reshape(-1, *windows.shape[2:])[:max_windows]
    if flat.shape[0] < 2:
        raise DatasetError(f"need at least 2 windows to diagnose, got {flat.shape[0]}")
    encoder = bundle.model.branch_a.encoder
    was_training = encoder.training
    encoder.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, flat.shape[0], 256):
            chunks.append(encoder(flat[start : start + 256]).numpy())
    encoder.train(was_training)
    values = collapse_spectrum(np.concatenate(chunks))
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(spectrum_lines(values)) + "\n", encoding="utf-8")
    return values


def export_embeddings(checkpoint, dataset: CsiDataset, out: str | Path) -> Path:
    """Write [N, D*L] frozen embeddings plus labels for projection tools.

    Same container convention as datasets: a json manifest next to raw
    little-endian arrays. Unlabelled samples carry label -1.
    """
    features, labels = embed_dataset(checkpoint, dataset)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "embeddings").write_bytes(features.astype("<f4", copy=False).tobytes())
    (out / "labels").write_bytes(labels.astype("<i4").tobytes())
    manifest = {
        "format": EMBEDDINGS_FORMAT,
        "version": 1,
        "rows": int(features.shape[0]),
        "dim": int(features.shape[1]),
        "dtype": "<f4",
        "label_dtype": "<i4",
        "files": {"embeddings": "embeddings", "labels": "labels"},
    }
    (out / EMBEDDINGS_MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return out


def load_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    manifest_path = path / EMBEDDINGS_MANIFEST
    if not manifest_path.is_file():
        raise DatasetError(f"no embeddings manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    if manifest.get("format") != EMBEDDINGS_FORMAT:
        raise DatasetError(f"not an embeddings container: format {manifest.get('format')!r}")
    rows, dim = int(manifest["rows"]), int(manifest["dim"])
    feat_bytes = (path / manifest["files"]["embeddings"]).read_bytes()
    expected = rows * dim * 4
    if len(feat_bytes) != expected:
        raise DatasetError(f"embeddings hold {len(feat_bytes)} bytes, expected {expected}")
    features = np.frombuffer(feat_bytes, dtype="<f4").reshape(rows, dim)
    label_bytes = (path / manifest["files"]["labels"]).read_bytes()
    if len(label_bytes) != rows * 4:
        raise DatasetError(f"labels hold {len(label_bytes)} bytes, expected {rows * 4}")
    labels = np.frombuffer(label_bytes, dtype="<i4").astype(np.int64)
    return features.copy(), labels


@dataclass(frozen=True)
class AugGridCell:
    first: str
    second: str
    accuracy: float


@dataclass(frozen=True)
class AugGrid:
    """Linear-probe accuracy per augmentation pair; diagonal = singles."""

    names: tuple[str, ...]
    cells: tuple[AugGridCell, ...]

    def accuracy(self, first: str, second: str) -> float:
        for cell in self.cells:
            if {cell.first, cell.second} == {first, second}:
                return cell.accuracy
        raise KeyError(f"no grid cell for ({first}, {second})")

    def matrix(self) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.names)}
        out = np.full((len(self.names), len(self.names)), np.nan)
        for cell in self.cells:
            i, j = index[cell.first], index[cell.second]
            out[i, j] = out[j, i] = cell.accuracy
        return out

    def to_csv_lines(self) -> list[str]:
        lines = [GRID_HEADER]
        lines.extend(f"{c.first},{c.second},{c.accuracy:.6f}" for c in self.cells)
        return lines

    def summary(self) -> str:
        best = max(self.cells, key=lambda c: c.accuracy)
        label = best.first if best.first == best.second else f"{best.first}+{best.second}"
        return f"best cell {label}: {best.accuracy:.4f} over {len(self.cells)} cells"


def _cell_spec(first: str, second: str) -> str:
    return first if first == second else f"{first},{second}"


def _run_cell(args) -> tuple[str, str, float]:
    first, second, train_config, dataset, eval_config, shots, eval_seed = args
    config = replace(train_config, augmentations=_cell_spec(first, second))
    trainer = Trainer(config, dataset)
    while trainer.epoch < config.epochs:
        trainer.train_epoch()
    acc = linear_eval(trainer.bundle(), dataset, eval_config, shots, eval_seed)
    return first, second, acc


def sweep_aug(
    dataset: CsiDataset,
    names: list[str],
    train_config: TrainConfig,
    eval_config: EvalConfig | None = None,
    shots: int = 6,
    eval_seed: int = 0,
    jobs: int = 1,
) -> AugGrid:
    """Pretrain and probe every single and pairwise augmentation choice.

    n names give n*(n+1)/2 cells, each trained from the same seed so cells
    differ only in the augmentation. `jobs` > 1 fans cells out to worker
    processes; cells are independent.
    """
    if not names:
        raise ConfigError("sweep_aug needs at least one augmentation name")
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate augmentation names in {names}")
    for name in names:
        parse_spec(name)
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    eval_config = eval_config or EvalConfig()
    tasks = [
        (names[i], names[j], train_config, dataset, eval_config, shots, eval_seed)
        for i, j in combinations_with_replacement(range(len(names)), 2)
    ]
    if jobs == 1:
        results = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    cells = tuple(AugGridCell(first=f, second=s, accuracy=a) for f, s, a in results)
    return AugGrid(names=tuple(names), cells=cells)
