"""CSI sample containers, window segmentation, and the on-disk dataset format.

A dataset is a directory holding a UTF-8 JSON ``manifest`` plus raw
little-endian binary arrays, row-major:

    csi       float32  [N, links, subcarriers, frames]
    csi_pair  float32  [N, links, subcarriers, frames]   (optional)
    labels    int32    [N]

All in-memory arrays are float32 and frozen (read-only) after construction,
so samples are safe to share across parallel workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DatasetError, InsufficientDataError

MANIFEST_NAME = "manifest"
BYTE_ORDER = "little-endian"
CSI_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<i4")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CsiSample:
    """One CSI recording: amplitude tensor [links, subcarriers, frames].

    ``paired_amplitude`` holds the reciprocal-direction measurement of the
    same exchange when available; it must match ``amplitude``'s shape.
    """

    amplitude: np.ndarray
    paired_amplitude: np.ndarray | None = None
    label: int | None = None
    sample_id: str = ""

    def __post_init__(self) -> None:
        amp = _freeze(np.asarray(self.amplitude, dtype=np.float32))
        object.__setattr__(self, "amplitude", amp)
        if amp.ndim != 3:
            raise ValueError(f"amplitude must be [links, subcarriers, frames], got shape {amp.shape}")
        if not np.isfinite(amp).all():
            raise ValueError("amplitude contains non-finite values")
        if (amp < 0).any():
            raise ValueError("amplitude contains negative values")
        if self.paired_amplitude is not None:
            pair = _freeze(np.asarray(self.paired_amplitude, dtype=np.float32))
            object.__setattr__(self, "paired_amplitude", pair)
            if pair.shape != amp.shape:
                raise ValueError(
                    f"paired_amplitude shape {pair.shape} does not match amplitude shape {amp.shape}"
                )
            if not np.isfinite(pair).all() or (pair < 0).any():
                raise ValueError("paired_amplitude contains non-finite or negative values")
        if self.label is not None and self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.amplitude.shape

    @property
    def frames(self) -> int:
        return self.amplitude.shape[2]

    def has_pair(self) -> bool:
        return self.paired_amplitude is not None


@dataclass(frozen=True)
class WindowSequence:
    """A sample cut into contiguous non-overlapping windows [L, links, subcarriers, frames_per_window]."""

    windows: np.ndarray
    frames_per_window: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "windows", _freeze(np.asarray(self.windows, dtype=np.float32)))
        if self.windows.ndim != 4 or self.windows.shape[3] != self.frames_per_window:
            raise ValueError(f"windows must be [L, links, subcarriers, {self.frames_per_window}]")
        if self.windows.shape[0] < 1:
            raise ValueError("window sequence must contain at least one window")

    @property
    def count(self) -> int:
        return self.windows.shape[0]


def segment(sample: CsiSample | np.ndarray, frames_per_window: int) -> WindowSequence:
    """Cut a sample into floor(frames / frames_per_window) windows in time order.

    Trailing frames that do not fill a whole window are dropped. Window t
    covers frames [t * frames_per_window, (t + 1) * frames_per_window).
    """
    amp = sample.amplitude if isinstance(sample, CsiSample) else np.asarray(sample)
    if amp.ndim != 3:
        raise ValueError(f"expected a [links, subcarriers, frames] tensor, got shape {amp.shape}")
    n_t = amp.shape[2]
    if frames_per_window <= 0:
        raise ValueError(f"frames_per_window must be positive, got {frames_per_window}")
    if frames_per_window > n_t:
        raise ValueError(f"frames_per_window {frames_per_window} exceeds sample length {n_t}")
    count = n_t // frames_per_window
    trimmed = amp[:, :, : count * frames_per_window]
    # [A, S, L, F] -> [L, A, S, F]
    windows = trimmed.reshape(amp.shape[0], amp.shape[1], count, frames_per_window)
    windows = np.moveaxis(windows, 2, 0).copy()
    return WindowSequence(windows=windows, frames_per_window=frames_per_window)


def window_count(frames: int, frames_per_window: int) -> int:
    if frames_per_window <= 0 or frames_per_window > frames:
        raise ValueError(f"invalid frames_per_window {frames_per_window} for {frames} frames")
    return frames // frames_per_window


def amplitude_from_complex(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    """Elementwise sqrt(re**2 + im**2)."""
    re = np.asarray(re)
    im = np.asarray(im)
    if re.shape != im.shape:
        raise ValueError(f"shape mismatch: {re.shape} vs {im.shape}")
    return np.hypot(re, im)


@dataclass(frozen=True)
class DatasetManifest:
    """Declares the shapes, types, and file names of a dataset directory."""

    class_count: int
    sample_count: int
    links: int
    subcarriers: int
    frames: int
    has_pairs: bool
    byte_order: str = BYTE_ORDER
    element_type: str = "float32"
    label_type: str = "int32"
    csi_file: str = "csi"
    pair_file: str = "csi_pair"
    labels_file: str = "labels"

    def __post_init__(self) -> None:
        if self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")
        if min(self.links, self.subcarriers, self.frames) < 1:
            raise ValueError("all tensor dimensions must be >= 1")

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        return (self.links, self.subcarriers, self.frames)

    def to_json(self) -> str:
        return json.dumps(
            {
                "class_count": self.class_count,
                "sample_count": self.sample_count,
                "shape": {"links": self.links, "subcarriers": self.subcarriers, "frames": self.frames},
                "has_pairs": self.has_pairs,
                "byte_order": self.byte_order,
                "element_type": self.element_type,
                "label_type": self.label_type,
                "files": {"csi": self.csi_file, "csi_pair": self.pair_file, "labels": self.labels_file},
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            raw = json.loads(text)
            shape = raw["shape"]
            files = raw.get("files", {})
            return cls(
                class_count=int(raw["class_count"]),
                sample_count=int(raw["sample_count"]),
                links=int(shape["links"]),
                subcarriers=int(shape["subcarriers"]),
                frames=int(shape["frames"]),
                has_pairs=bool(raw["has_pairs"]),
                byte_order=str(raw.get("byte_order", BYTE_ORDER)),
                element_type=str(raw.get("element_type", "float32")),
                label_type=str(raw.get("label_type", "int32")),
                csi_file=str(files.get("csi", "csi")),
                pair_file=str(files.get("csi_pair", "csi_pair")),
                labels_file=str(files.get("labels", "labels")),
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DatasetError(f"malformed manifest: {exc}") from exc


@dataclass(frozen=True)
class CsiDataset:
    """A manifest plus its materialized samples, in stored order."""

    manifest: DatasetManifest
    samples: tuple[CsiSample, ...]

    def __post_init__(self) -> None:
        if len(self.samples) != self.manifest.sample_count:
            raise DatasetError(
                f"manifest declares {self.manifest.sample_count} samples, got {len(self.samples)}"
            )
        for s in self.samples:
            if s.shape != self.manifest.sample_shape:
                raise DatasetError(
                    f"sample {s.sample_id!r} has shape {s.shape}, manifest declares {self.manifest.sample_shape}"
                )
            if self.manifest.has_pairs and not s.has_pair():
                raise DatasetError(f"manifest declares pairs but sample {s.sample_id!r} has none")
            if s.label is not None and s.label >= self.manifest.class_count:
                raise DatasetError(
                    f"sample {s.sample_id!r} label {s.label} >= class_count {self.manifest.class_count}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[CsiSample]:
        return iter(self.samples)

    def __getitem__(self, idx: int) -> CsiSample:
        return self.samples[idx]

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if s.label is None else s.label for s in self.samples], dtype=np.int64)

    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s.sample_id for s in self.samples)


def _read_raw(path: Path, dtype: np.dtype, shape: tuple[int, ...]) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing array file: {path}")
    expected = int(np.prod(shape)) * dtype.itemsize
    data = path.read_bytes()
    if len(data) != expected:
        raise DatasetError(
            f"array file {path.name} holds {len(data)} bytes, expected {expected} for shape {shape}"
        )
    return np.frombuffer(data, dtype=dtype).reshape(shape)


def load_dataset(root: str | Path) -> CsiDataset:
    """Read a dataset directory, validating every array against the manifest."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"no manifest found at {manifest_path}")
    manifest = DatasetManifest.from_json(manifest_path.read_text(encoding="utf-8"))
    if manifest.byte_order != BYTE_ORDER:
        raise DatasetError(f"unsupported byte order {manifest.byte_order!r}; expected {BYTE_ORDER!r}")
    if manifest.element_type != "float32" or manifest.label_type != "int32":
        raise DatasetError(
            f"unsupported element types ({manifest.element_type}, {manifest.label_type})"
        )

    n = manifest.sample_count
    full_shape = (n,) + manifest.sample_shape
    csi = _read_raw(root / manifest.csi_file, CSI_DTYPE, full_shape)
    labels = _read_raw(root / manifest.labels_file, LABEL_DTYPE, (n,))
    pairs = None
    if manifest.has_pairs:
        pairs = _read_raw(root / manifest.pair_file, CSI_DTYPE, full_shape)

    samples = []
    for i in range(n):
        label = int(labels[i])
        samples.append(
            CsiSample(
                amplitude=csi[i],
                paired_amplitude=None if pairs is None else pairs[i],
                label=None if label < 0 else label,
                sample_id=f"sample-{i:05d}",
            )
        )
    try:
        return CsiDataset(manifest=manifest, samples=tuple(samples))
    except DatasetError:
        raise
    except ValueError as exc:
        raise DatasetError(f"invalid sample data in {root}: {exc}") from exc


def write_dataset(dataset: CsiDataset, root: str | Path) -> Path:
    """Write a dataset directory in the canonical container layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    m = dataset.manifest
    csi = np.stack([s.amplitude for s in dataset.samples]).astype(CSI_DTYPE)
    (root / m.csi_file).write_bytes(csi.tobytes())
    labels = np.array(
        [-1 if s.label is None else s.label for s in dataset.samples], dtype=LABEL_DTYPE
    )
    (root / m.labels_file).write_bytes(labels.tobytes())
    if m.has_pairs:
        pair = np.stack([s.paired_amplitude for s in dataset.samples]).astype(CSI_DTYPE)
        (root / m.pair_file).write_bytes(pair.tobytes())
    (root / MANIFEST_NAME).write_text(m.to_json(), encoding="utf-8")
    return root


def few_shot_subset(dataset: CsiDataset, shots: int, seed: int) -> CsiDataset:
    """Select exactly `shots` labelled samples per class by a seeded uniform draw.

    Classes are visited in ascending index order; within a class, samples are
    drawn without replacement. Deterministic for a fixed seed.
    """
    if shots < 1:
        raise ValueError(f"shots must be positive, got {shots}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {c: [] for c in range(dataset.manifest.class_count)}
    for i, s in enumerate(dataset.samples):
        if s.label is not None:
            by_class[s.label].append(i)
    chosen: list[int] = []
    for c in range(dataset.manifest.class_count):
        idx = by_class[c]
        if len(idx) < shots:
            raise InsufficientDataError(
                f"class {c} has {len(idx)} labelled samples, need {shots}"
            )
        pick = rng.choice(len(idx), size=shots, replace=False)
        chosen.extend(idx[p] for p in pick)
    samples = tuple(dataset.samples[i] for i in chosen)
    manifest = replace(dataset.manifest, sample_count=len(samples))
    return CsiDataset(manifest=manifest, samples=samples)


def few_shot_split(dataset: CsiDataset, shots: int, seed: int) -> tuple[CsiDataset, CsiDataset]:
    """Few-shot train subset plus the disjoint held-out remainder of labelled samples."""
    train = few_shot_subset(dataset, shots, seed)
    train_ids = set(train.sample_ids())
    rest = tuple(
        s for s in dataset.samples if s.label is not None and s.sample_id not in train_ids
    )
    manifest = replace(dataset.manifest, sample_count=len(rest))
    return train, CsiDataset(manifest=manifest, samples=rest)


def subset_by_indices(dataset: CsiDataset, indices: Sequence[int]) -> CsiDataset:
    samples = tuple(dataset.samples[i] for i in indices)
    manifest = replace(dataset.manifest, sample_count=len(samples))
    return CsiDataset(manifest=manifest, samples=samples)
