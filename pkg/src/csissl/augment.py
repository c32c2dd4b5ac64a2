"""Stochastic augmentations producing two distorted views per sample.

A view pipeline is an ordered op list plus a dual-view flag. Ops act in two
phases: sample-phase ops (gaussian_noise, subcarrier_mask, whole-sample
time_flip) transform the full [links, subcarriers, frames] tensor, then the
tensor is segmented, then window-phase ops (time_mask, per-window time_flip)
transform individual windows. Within each phase the configured order is
preserved. Branch A and branch B draw from independent random streams
derived from one seed, so a view pair is a pure function of
(sample, spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CsiSample, WindowSequence, segment
from .errors import ConfigError

GAUSSIAN_NOISE = "gaussian_noise"
TIME_FLIP = "time_flip"
TIME_MASK = "time_mask"
SUBCARRIER_MASK = "subcarrier_mask"
DUAL_VIEW = "dual_view"
OP_NAMES = (GAUSSIAN_NOISE, TIME_FLIP, TIME_MASK, SUBCARRIER_MASK)

DEFAULT_NOISE_SIGMA = 0.1
DEFAULT_TIME_MASK_FRACTION = 0.2
DEFAULT_SUBCARRIER_COUNT = 5


@dataclass(frozen=True)
class AugmentationOp:
    """One named op with its parameter and per-sample application probability."""

    name: str
    prob: float = 1.0
    sigma: float = DEFAULT_NOISE_SIGMA
    fraction: float = DEFAULT_TIME_MASK_FRACTION
    count: int = DEFAULT_SUBCARRIER_COUNT
    per_window: bool = False

    def __post_init__(self) -> None:
        if self.name not in OP_NAMES:
            raise ConfigError(f"unknown augmentation {self.name!r}; expected one of {OP_NAMES}")
        if not 0.0 <= self.prob <= 1.0:
            raise ConfigError(f"{self.name}: probability {self.prob} outside [0, 1]")
        if self.name == GAUSSIAN_NOISE and self.sigma < 0:
            raise ConfigError(f"gaussian_noise: sigma {self.sigma} must be >= 0")
        if self.name == TIME_MASK and not 0.0 <= self.fraction < 1.0:
            raise ConfigError(f"time_mask: fraction {self.fraction} outside [0, 1)")
        if self.name == SUBCARRIER_MASK and self.count < 0:
            raise ConfigError(f"subcarrier_mask: count {self.count} must be >= 0")

    def is_window_phase(self) -> bool:
        return self.name == TIME_MASK or (self.name == TIME_FLIP and self.per_window)


@dataclass(frozen=True)
class AugmentationSpec:
    ops: tuple[AugmentationOp, ...] = ()
    dual_view: bool = False

    def describe(self) -> str:
        parts = [DUAL_VIEW] if self.dual_view else []
        for op in self.ops:
            if op.name == GAUSSIAN_NOISE:
                args = f"sigma={op.sigma:g}"
            elif op.name == TIME_MASK:
                args = f"fraction={op.fraction:g}"
            elif op.name == SUBCARRIER_MASK:
                args = f"count={op.count}"
            else:
                args = f"per_window=true" if op.per_window else ""
            if op.prob != 1.0:
                args = f"{args}, p={op.prob:g}" if args else f"p={op.prob:g}"
            parts.append(f"{op.name}({args})" if args else op.name)
        return ", ".join(parts) if parts else "none"


def capc_default_spec() -> AugmentationSpec:
    """Default pretraining views: dual view plus gaussian noise."""
    return AugmentationSpec(
        ops=(AugmentationOp(name=GAUSSIAN_NOISE, sigma=DEFAULT_NOISE_SIGMA),), dual_view=True
    )


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"cannot parse {raw!r} as a boolean")


def parse_spec(text: str) -> AugmentationSpec:
    """Parse the canonical string form, e.g. 'dual_view, gaussian_noise(0.1)'.

    Each entry is a name with optional parenthesized arguments; a bare
    positional argument binds to the op's primary parameter (sigma,
    fraction, or count), and p=<float> sets the application probability.
    'none' denotes the empty spec.
    """
    text = text.strip()
    if not text or text.lower() == "none":
        return AugmentationSpec()
    ops: list[AugmentationOp] = []
    dual = False
    depth = 0
    entries, buf = [], []
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        if ch == "," and depth == 0:
            entries.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    entries.append("".join(buf))
    for entry in entries:
        entry = entry.strip()
        if not entry:
            raise ConfigError(f"empty augmentation entry in {text!r}")
        name, args = entry, ""
        if "(" in entry:
            if not entry.endswith(")"):
                raise ConfigError(f"unbalanced parentheses in {entry!r}")
            name, args = entry[: entry.index("(")], entry[entry.index("(") + 1 : -1]
        name = name.strip()
        if name == DUAL_VIEW:
            dual = True if not args else _parse_bool(args)
            continue
        if name not in OP_NAMES:
            raise ConfigError(f"unknown augmentation {name!r}; expected one of {OP_NAMES}")
        kwargs: dict[str, object] = {"name": name}
        for arg in filter(None, (a.strip() for a in args.split(","))):
            if "=" in arg:
                key, _, value = arg.partition("=")
                key = key.strip()
                value = value.strip()
            else:
                key, value = {"gaussian_noise": "sigma", "time_mask": "fraction",
                              "subcarrier_mask": "count"}.get(name, ""), arg
                if not key:
                    raise ConfigError(f"{name} takes no positional argument ({arg!r})")
            try:
                if key in ("p", "prob"):
                    kwargs["prob"] = float(value)
                elif key == "sigma" and name == GAUSSIAN_NOISE:
                    kwargs["sigma"] = float(value)
                elif key == "fraction" and name == TIME_MASK:
                    kwargs["fraction"] = float(value)
                elif key == "count" and name == SUBCARRIER_MASK:
                    kwargs["count"] = int(value)
                elif key == "per_window" and name == TIME_FLIP:
                    kwargs["per_window"] = _parse_bool(value)
                else:
                    raise ConfigError(f"{name} does not accept argument {key!r}")
            except ValueError as exc:
                raise ConfigError(f"{name}: bad value for {key!r}: {value!r}") from exc
        ops.append(AugmentationOp(**kwargs))
    return AugmentationSpec(ops=tuple(ops), dual_view=dual)


def gaussian_noise(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """x plus i.i.d. zero-mean Gaussian noise with the given std."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = np.asarray(x)
    if sigma == 0:
        return x.copy()
    return x + (sigma * rng.standard_normal(x.shape)).astype(x.dtype, copy=False)


def time_flip(x: np.ndarray) -> np.ndarray:
    """Reverse frame order along the trailing (time) axis."""
    return np.ascontiguousarray(np.flip(np.asarray(x), axis=-1))


def time_mask(windows: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Zero one contiguous run of round(fraction * F) frames per window.

    Offsets are uniform and independent per window. `windows` is
    [L, links, subcarriers, F].
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    windows = np.asarray(windows)
    if windows.ndim != 4:
        raise ValueError(f"expected [L, links, subcarriers, frames], got shape {windows.shape}")
    out = windows.copy()
    frames = windows.shape[3]
    length = int(np.rint(fraction * frames))
    if length == 0:
        return out
    for w in range(windows.shape[0]):
        start = int(rng.integers(0, frames - length + 1))
        out[w, :, :, start : start + length] = 0
    return out


def subcarrier_mask(x: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Zero `count` distinct uniformly drawn subcarriers across all links and frames."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected [links, subcarriers, frames], got shape {x.shape}")
    subcarriers = x.shape[1]
    if not 0 <= count < subcarriers:
        raise ValueError(f"count must be in [0, {subcarriers}), got {count}")
    out = x.copy()
    if count == 0:
        return out
    idx = rng.choice(subcarriers, size=count, replace=False)
    out[:, idx, :] = 0
    return out


def dual_view_assign(
    sample: CsiSample, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Randomly route the two link directions to the two branches, 50/50."""
    if not sample.has_pair():
        raise ConfigError(
            f"sample {sample.sample_id!r} has no paired direction; "
            "disable dual_view to pretrain on single-direction data"
        )
    if rng.uniform() < 0.5:
        return sample.amplitude, sample.paired_amplitude
    return sample.paired_amplitude, sample.amplitude


def _apply_branch(
    x: np.ndarray,
    spec: AugmentationSpec,
    frames_per_window: int,
    rng: np.random.Generator,
) -> WindowSequence:
    x = np.array(x, dtype=np.float32)
    for op in spec.ops:
        if op.is_window_phase():
            continue
        if rng.uniform() >= op.prob:
            continue
        if op.name == GAUSSIAN_NOISE:
            x = gaussian_noise(x, op.sigma, rng)
        elif op.name == TIME_FLIP:
            x = time_flip(x)
        elif op.name == SUBCARRIER_MASK:
            x = subcarrier_mask(x, op.count, rng)
    windows = segment(x, frames_per_window).windows
    for op in spec.ops:
        if not op.is_window_phase():
            continue
        if rng.uniform() >= op.prob:
            continue
        if op.name == TIME_MASK:
            windows = time_mask(windows, op.fraction, rng)
        elif op.name == TIME_FLIP:
            windows = time_flip(windows)
    return WindowSequence(windows=windows, frames_per_window=frames_per_window)


def make_views(
    sample: CsiSample,
    spec: AugmentationSpec,
    frames_per_window: int,
    rng: np.random.SeedSequence | int,
) -> tuple[WindowSequence, WindowSequence]:
    """Produce the two augmented window sequences for one sample.

    The seed is split into (assignment, branch A, branch B) streams, so the
    pair is deterministic for a fixed seed while the branches stay
    independent.
    """
    ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    assign_ss, a_ss, b_ss = ss.spawn(3)
    if spec.dual_view:
        src_a, src_b = dual_view_assign(sample, np.random.default_rng(assign_ss))
    else:
        src_a = src_b = sample.amplitude
    view_a = _apply_branch(src_a, spec, frames_per_window, np.random.default_rng(a_ss))
    view_b = _apply_branch(src_b, spec, frames_per_window, np.random.default_rng(b_ss))
    return view_a, view_b


def pretraining_inputs(
    samples: tuple[CsiSample, ...] | list[CsiSample], dual_view: bool
) -> tuple[CsiSample, ...]:
    """The effective pretraining sample list for a dual-view setting.

    With dual_view on, paired samples pass through unchanged. With it off,
    each paired sample splits into two independent single-direction samples,
    doubling the usable data.
    """
    if dual_view:
        return tuple(samples)
    out: list[CsiSample] = []
    for s in samples:
        if s.has_pair():
            out.append(
                CsiSample(amplitude=s.amplitude, label=s.label, sample_id=f"{s.sample_id}#up")
            )
            out.append(
                CsiSample(
                    amplitude=s.paired_amplitude, label=s.label, sample_id=f"{s.sample_id}#down"
                )
            )
        else:
            out.append(s)
    return tuple(out)
