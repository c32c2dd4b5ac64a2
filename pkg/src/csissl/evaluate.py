"""Downstream evaluation: linear probe, semi-supervised fine-tune, transfer.

All protocols draw `shots` labelled samples per class for training and test
on every remaining labelled sample. The probe consumes the concatenated
branch-A window embeddings of a sample; linear mode never touches encoder
parameters, semi mode fine-tunes them at a reduced learning rate.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointBundle, load_checkpoint
from .data import CsiDataset, few_shot_split, segment
from .errors import ConfigError, DatasetError
from .models import LinearClassifier, init_parameters
from .train import LrSchedule, lr_at

MODE_LINEAR = "linear"
MODE_SEMI = "semi"
MODES = (MODE_LINEAR, MODE_SEMI)

# Purpose tags for derived random streams (disjoint from the train module's).
_CLS_INIT = 11
_SHUFFLE = 12


@dataclass(frozen=True)
class EvalConfig:
    """Protocol settings; epochs defaults to 100 (linear) or 20 (semi).

    `shots` and `seeds` are the default sweep grid; single runs take an
    explicit shots/seed argument instead.
    """

    mode: str = MODE_LINEAR
    batch_size: int = 512
    epochs: int | None = None
    classifier_lr: float = 1e-2
    encoder_lr: float = 5e-3
    shots: tuple[int, ...] = (2, 4, 6, 8, 10, 12)
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown eval mode {self.mode!r}; expected one of {MODES}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.classifier_lr <= 0:
            raise ConfigError(f"classifier_lr must be > 0, got {self.classifier_lr}")
        if self.encoder_lr < 0:
            raise ConfigError(f"encoder_lr must be >= 0, got {self.encoder_lr}")
        object.__setattr__(self, "shots", tuple(int(s) for s in self.shots))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.shots or any(s < 1 for s in self.shots):
            raise ConfigError(f"shots must be a non-empty list of positive counts, got {self.shots}")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise ConfigError(f"seeds must be a non-empty list of non-negative ints, got {self.seeds}")

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 100 if self.mode == MODE_LINEAR else 20


def _as_bundle(checkpoint: str | Path | CheckpointBundle) -> CheckpointBundle:
    if isinstance(checkpoint, CheckpointBundle):
        return checkpoint
    return load_checkpoint(checkpoint)


def _norm_stats(bundle: CheckpointBundle) -> tuple[float, float]:
    info = bundle.manifest.get("standardize", {})
    if info.get("enabled", False):
        return float(info["mean"]), float(info["std"])
    return 0.0, 1.0


def _check_dataset_compatible(bundle: CheckpointBundle, dataset: CsiDataset) -> int:
    dims = bundle.dims
    m = dataset.manifest
    if (m.links, m.subcarriers) != (dims.links, dims.subcarriers):
        raise ConfigError(
            f"dataset windows are {m.links} x {m.subcarriers} x *, encoder expects "
            f"{dims.links} x {dims.subcarriers} x {dims.frames_per_window}; the link and "
            f"subcarrier dimensions must align for transfer"
        )
    length = m.frames // dims.frames_per_window
    if length < 1:
        raise ConfigError(
            f"dataset frames ({m.frames}) cannot fill one {dims.frames_per_window}-frame window"
        )
    return length


def _sample_windows(bundle: CheckpointBundle, dataset: CsiDataset) -> torch.Tensor:
    """All samples segmented and standardized: [N, L, links, subcarriers, N_f]."""
    length = _check_dataset_compatible(bundle, dataset)
    fpw = bundle.dims.frames_per_window
    mean, std = _norm_stats(bundle)
    stacked = np.stack([segment(s, fpw).windows[:length] for s in dataset.samples])
    x = torch.from_numpy(stacked)
    if (mean, std) != (0.0, 1.0):
        x = (x - mean) / std
    return x


def embed_dataset(
    checkpoint: str | Path | CheckpointBundle, dataset: CsiDataset
) -> tuple[np.ndarray, np.ndarray]:
    """Frozen branch-A embeddings concatenated over windows: [N, D*L] plus labels."""
    bundle = _as_bundle(checkpoint)
    x = _sample_windows(bundle, dataset)
    encoder = bundle.model.branch_a.encoder
    was_training = encoder.training
    encoder.eval()
    n, length = x.shape[0], x.shape[1]
    feats = []
    with torch.no_grad():
        for start in range(0, n, 64):
            chunk = x[start : start + 64]
            b = chunk.shape[0]
            z = encoder(chunk.reshape(b * length, *chunk.shape[2:]))
            feats.append(z.reshape(b, -1).numpy())
    encoder.train(was_training)
    labels = dataset.labels
    return np.concatenate(feats).astype(np.float32), labels.astype(np.int64)


def _split_for_eval(
    dataset: CsiDataset, shots: int, seed: int
) -> tuple[CsiDataset, CsiDataset]:
    train, held = few_shot_split(dataset, shots, seed)
    held_counts = np.bincount(held.labels, minlength=dataset.manifest.class_count)
    empty = np.where(held_counts == 0)[0]
    if empty.size:
        raise DatasetError(
            f"class {int(empty[0])} has no held-out samples left after taking {shots} shots"
        )
    return train, held


def _classifier_for(features_dim: int, n_classes: int, seed: int) -> LinearClassifier:
    clf = LinearClassifier(features_dim, n_classes)
    init_seed = int(np.random.SeedSequence((seed, _CLS_INIT)).generate_state(1)[0])
    init_parameters(clf, torch.Generator().manual_seed(init_seed))
    return clf


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence((seed, _SHUFFLE, epoch)))
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _top1(logits: torch.Tensor, labels: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == labels).float().mean().item())


def probe_features(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    n_classes: int,
    config: EvalConfig,
    seed: int = 0,
) -> float:
    """Train the probe classifier on fixed feature vectors; report top-1.

    This is the feature-level core of linear_eval, usable directly on
    precomputed (or synthetic) embeddings.
    """
    torch.set_num_threads(1)
    x_train = torch.from_numpy(np.asarray(train_x, dtype=np.float32))
    y_train = torch.from_numpy(np.asarray(train_y, dtype=np.int64))
    x_test = torch.from_numpy(np.asarray(test_x, dtype=np.float32))
    y_test = torch.from_numpy(np.asarray(test_y, dtype=np.int64))
    clf = _classifier_for(x_train.shape[1], n_classes, seed)
    epochs = config.resolved_epochs
    if epochs > 0:
        batches_per_epoch = max(1, -(-len(x_train) // config.batch_size))
        sched = LrSchedule(config.classifier_lr, 0, epochs * batches_per_epoch)
        opt = torch.optim.Adam(clf.parameters(), lr=config.classifier_lr)
        loss_fn = torch.nn.CrossEntropyLoss()
        step = 0
        for epoch in range(epochs):
            for idx in _epoch_batches(len(x_train), config.batch_size, seed, epoch):
                for group in opt.param_groups:
                    group["lr"] = lr_at(step + 1, sched)
                opt.zero_grad()
                loss = loss_fn(clf(x_train[idx]), y_train[idx])
                loss.backward()
                opt.step()
                step += 1
    clf.eval()
    with torch.no_grad():
        return _top1(clf(x_test), y_test)


def linear_eval(
    checkpoint: str | Path | CheckpointBundle,
    dataset: CsiDataset,
    config: EvalConfig = EvalConfig(),
    shots: int = 6,
    seed: int = 0,
) -> float:
    """Few-shot probe on frozen embeddings; encoder parameters untouched."""
    bundle = _as_bundle(checkpoint)
    train, held = _split_for_eval(dataset, shots, seed)
    train_x, train_y = embed_dataset(bundle, train)
    test_x, test_y = embed_dataset(bundle, held)
    return probe_features(
        train_x, train_y, test_x, test_y, dataset.manifest.class_count, config, seed
    )


def semi_supervised_eval(
    checkpoint: str | Path | CheckpointBundle,
    dataset: CsiDataset,
    config: EvalConfig = EvalConfig(mode=MODE_SEMI),
    shots: int = 6,
    seed: int = 0,
) -> float:
    """Joint fine-tune of branch-A encoder (reduced lr) and probe classifier.

    When a CheckpointBundle is passed, its model is fine-tuned in place;
    pass a path to keep the on-disk checkpoint untouched. With
    encoder_lr == 0 the encoder stays frozen (and in inference mode), which
    reduces this protocol to linear evaluation.
    """
    torch.set_num_threads(1)
    bundle = _as_bundle(checkpoint)
    train, held = _split_for_eval(dataset, shots, seed)
    x_train = _sample_windows(bundle, train)
    y_train = torch.from_numpy(train.labels.astype(np.int64))
    encoder = bundle.model.branch_a.encoder
    length = x_train.shape[1]
    clf = _classifier_for(bundle.dims.embed_dim * length, dataset.manifest.class_count, seed)
    epochs = config.resolved_epochs
    train_encoder = config.encoder_lr > 0
    if epochs > 0:
        encoder.train(train_encoder)
        batches_per_epoch = max(1, -(-len(x_train) // config.batch_size))
        total = epochs * batches_per_epoch
        sched_enc = LrSchedule(max(config.encoder_lr, 1e-30), 0, total)
        sched_clf = LrSchedule(config.classifier_lr, 0, total)
        groups = [
            {"params": list(encoder.parameters()), "lr": config.encoder_lr},
            {"params": list(clf.parameters()), "lr": config.classifier_lr},
        ]
        opt = torch.optim.Adam(groups, lr=config.classifier_lr)
        loss_fn = torch.nn.CrossEntropyLoss()
        step = 0
        for epoch in range(epochs):
            for idx in _epoch_batches(len(x_train), config.batch_size, seed, epoch):
                opt.param_groups[0]["lr"] = lr_at(step + 1, sched_enc) if train_encoder else 0.0
                opt.param_groups[1]["lr"] = lr_at(step + 1, sched_clf)
                opt.zero_grad()
                chunk = x_train[idx]
                b = chunk.shape[0]
                z = encoder(chunk.reshape(b * length, *chunk.shape[2:]))
                loss = loss_fn(clf(z.reshape(b, -1)), y_train[idx])
                loss.backward()
                if not train_encoder:
                    for p in encoder.parameters():
                        p.grad = None
                opt.step()
                step += 1
    encoder.eval()
    clf.eval()
    test_x, test_y = embed_dataset(bundle, held)
    with torch.no_grad():
        logits = clf(torch.from_numpy(test_x))
    return _top1(logits, torch.from_numpy(test_y))


def evaluate(
    checkpoint: str | Path | CheckpointBundle,
    dataset: CsiDataset,
    config: EvalConfig,
    shots: int = 6,
    seed: int = 0,
) -> float:
    if config.mode == MODE_LINEAR:
        return linear_eval(checkpoint, dataset, config, shots, seed)
    return semi_supervised_eval(checkpoint, dataset, config, shots, seed)


def transfer_eval(
    checkpoint: str | Path | CheckpointBundle,
    target_dataset: CsiDataset,
    shots: int,
    config: EvalConfig = EvalConfig(),
    seed: int = 0,
) -> float:
    """Frozen-encoder probe on a different dataset with a fresh classifier.

    The target may have a different recording length (the window count is
    recomputed); its link and subcarrier dimensions must match the encoder.
    On the source dataset this is linear_eval, bit for bit.
    """
    bundle = _as_bundle(checkpoint)
    _check_dataset_compatible(bundle, target_dataset)
    return linear_eval(bundle, target_dataset, config, shots, seed)


@dataclass(frozen=True)
class SweepResult:
    method: str
    mode: str
    cells: tuple[tuple[int, int, float], ...]  # (shots, seed, accuracy)
    shot_means: tuple[tuple[int, float], ...]
    row_average: float

    def to_csv_lines(self) -> list[str]:
        lines = ["method,mode,shots,seed,accuracy"]
        for shots, seed, acc in self.cells:
            lines.append(f"{self.method},{self.mode},{shots},{seed},{acc:.6f}")
        return lines

    def summary(self) -> str:
        cols = "  ".join(f"{s}: {m:.4f}" for s, m in self.shot_means)
        return f"{self.method} {self.mode} | {cols} | avg {self.row_average:.4f}"


def shots_sweep(
    checkpoint: str | Path | CheckpointBundle,
    dataset: CsiDataset,
    shots_list: list[int] | None = None,
    seeds: list[int] | None = None,
    config: EvalConfig = EvalConfig(),
) -> SweepResult:
    """Run the configured protocol per (shots, seed) cell and aggregate."""
    shots_list = list(config.shots) if shots_list is None else list(shots_list)
    seeds = list(config.seeds) if seeds is None else list(seeds)
    if not shots_list or not seeds:
        raise ConfigError("shots_sweep needs at least one shots value and one seed")
    bundle = _as_bundle(checkpoint)
    cells = []
    shot_means = []
    for shots in shots_list:
        accs = []
        for seed in seeds:
            if config.mode == MODE_SEMI:
                # Fine-tuning must not leak across cells; work on a copy.
                cell_bundle = copy.deepcopy(bundle)
            else:
                cell_bundle = bundle
            acc = evaluate(cell_bundle, dataset, config, shots, seed)
            cells.append((shots, seed, acc))
            accs.append(acc)
        shot_means.append((shots, float(np.mean(accs))))
    row_average = float(np.mean([m for _, m in shot_means]))
    return SweepResult(
        method=bundle.method,
        mode=config.mode,
        cells=tuple(cells),
        shot_means=tuple(shot_means),
        row_average=row_average,
    )
