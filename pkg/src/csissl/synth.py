"""Synthetic paired-link CSI generator.

Each labelled sample is built in two stages. A free-space multipath channel
H [links, subcarriers, frames] is drawn once per sample from its activity
class; the two link directions then each push H through their own
electronics chain (per-subcarrier complex gain, slow multiplicative gain
drift, additive complex white noise). The two directions therefore share
the class-bearing free-space structure while differing in hardware
distortion, which is exactly the asymmetry the dual-view pretraining
objective exploits.

All randomness is derived from explicit seeds; generation is a pure
function of (config, seed) and is bit-reproducible sample by sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CsiDataset, CsiSample, DatasetManifest, write_dataset
from .errors import ConfigError

# Fixed roots for library-constant class/profile parameter draws.
_CLASS_ENTROPY = 0x0C51C1A5
_PROFILE_ENTROPY = 0x0C51BEEF


@dataclass(frozen=True)
class DeviceProfile:
    """One direction's electronics chain.

    gain_magnitude / gain_phase: per-subcarrier complex gain, polar form.
    drift_std: per-frame std of a log-domain gain random walk (slow wander).
    noise_std: per-component std of additive complex Gaussian noise.
    """

    gain_magnitude: np.ndarray
    gain_phase: np.ndarray
    drift_std: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        mag = np.asarray(self.gain_magnitude, dtype=np.float64)
        phase = np.asarray(self.gain_phase, dtype=np.float64)
        object.__setattr__(self, "gain_magnitude", mag)
        object.__setattr__(self, "gain_phase", phase)
        if mag.ndim != 1 or phase.shape != mag.shape:
            raise ValueError("gain_magnitude and gain_phase must be 1-D with equal length")
        if not np.isfinite(mag).all() or (mag <= 0).any():
            raise ValueError("gain magnitudes must be finite and positive")
        if not np.isfinite(phase).all():
            raise ValueError("gain phases must be finite")
        if self.drift_std < 0 or self.noise_std < 0:
            raise ValueError("drift_std and noise_std must be >= 0")

    @property
    def subcarriers(self) -> int:
        return self.gain_magnitude.shape[0]

    def complex_gain(self) -> np.ndarray:
        return self.gain_magnitude * np.exp(1j * self.gain_phase)

    @classmethod
    def identity(cls, subcarriers: int) -> "DeviceProfile":
        """Unit gain, zero drift, zero noise: a bit-exact passthrough."""
        return cls(
            gain_magnitude=np.ones(subcarriers),
            gain_phase=np.zeros(subcarriers),
            drift_std=0.0,
            noise_std=0.0,
        )

    @classmethod
    def random(
        cls,
        subcarriers: int,
        seed: int,
        ripple: float = 0.35,
        drift_std: float = 0.012,
        noise_std: float = 0.40,
    ) -> "DeviceProfile":
        """Log-normal magnitude ripple across subcarriers, uniform phases."""
        rng = np.random.default_rng(np.random.SeedSequence((_PROFILE_ENTROPY, seed)))
        mag = np.exp(ripple * rng.standard_normal(subcarriers))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=subcarriers)
        return cls(gain_magnitude=mag, gain_phase=phase, drift_std=drift_std, noise_std=noise_std)


@dataclass(frozen=True)
class ActivityClass:
    """Multipath parameters of one activity class.

    Per path p: amplitude, a per-subcarrier phase slope (the delay's
    frequency-domain footprint), a base phase, and a per-link phase shift.
    The class's temporal signature is a sinusoidal gain modulation at
    mod_freq cycles per frame with relative depth mod_depth; amp_jitter and
    phase_jitter control the per-draw path randomness.
    """

    index: int
    path_gains: np.ndarray
    phase_slopes: np.ndarray
    base_phases: np.ndarray
    link_shifts: np.ndarray
    mod_freq: float
    mod_depth: float = 0.45
    amp_jitter: float = 0.20
    phase_jitter: float = 0.50

    def __post_init__(self) -> None:
        for name in ("path_gains", "phase_slopes", "base_phases", "link_shifts"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        p = self.path_gains.shape[0]
        if p < 1:
            raise ValueError("at least one path is required")
        for name in ("phase_slopes", "base_phases", "link_shifts"):
            if getattr(self, name).shape != (p,):
                raise ValueError(f"{name} must have one entry per path")
        if (self.path_gains < 0).any():
            raise ValueError("path amplitudes must be >= 0")
        if self.index < 0:
            raise ValueError("class index must be >= 0")

    @property
    def paths(self) -> int:
        return self.path_gains.shape[0]


def default_classes(count: int = 8, paths: int = 3) -> tuple[ActivityClass, ...]:
    """Deterministic library-constant class set.

    Modulation frequencies are spread linearly so classes are separable
    through temporal dynamics; multipath geometry per class comes from a
    fixed-entropy stream, so the returned parameters never change between
    calls or processes.
    """
    classes = []
    for c in range(count):
        rng = np.random.default_rng(np.random.SeedSequence((_CLASS_ENTROPY, c)))
        gains = np.geomspace(1.0, 0.35, paths) * (1.0 + 0.1 * rng.uniform(-1, 1, paths))
        classes.append(
            ActivityClass(
                index=c,
                path_gains=gains,
                phase_slopes=rng.uniform(0.2, 2.8, paths),
                base_phases=rng.uniform(0.0, 2.0 * np.pi, paths),
                link_shifts=rng.uniform(0.0, np.pi / 2, paths),
                mod_freq=0.012 + 0.011 * c,
            )
        )
    return tuple(classes)


@dataclass(frozen=True)
class SynthConfig:
    links: int = 3
    subcarriers: int = 30
    frames: int = 200
    classes: tuple[ActivityClass, ...] = field(default_factory=default_classes)
    samples_per_class: int = 50
    profile_ab: DeviceProfile | None = None
    profile_ba: DeviceProfile | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.links, self.subcarriers, self.frames) < 1:
            raise ConfigError("links, subcarriers, and frames must all be >= 1")
        if not self.classes:
            raise ConfigError("class list is empty")
        if self.samples_per_class < 0:
            raise ConfigError("samples_per_class must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.profile_ab is None:
            object.__setattr__(self, "profile_ab", DeviceProfile.random(self.subcarriers, seed=1))
        if self.profile_ba is None:
            object.__setattr__(self, "profile_ba", DeviceProfile.random(self.subcarriers, seed=2))
        for name in ("profile_ab", "profile_ba"):
            prof = getattr(self, name)
            if prof.subcarriers != self.subcarriers:
                raise ConfigError(
                    f"{name} covers {prof.subcarriers} subcarriers, config declares {self.subcarriers}"
                )

    @property
    def class_count(self) -> int:
        return len(self.classes)

    @property
    def sample_count(self) -> int:
        return self.class_count * self.samples_per_class


def strong_distortion_profiles(subcarriers: int) -> tuple[DeviceProfile, DeviceProfile]:
    """Harsher electronics than the defaults, used to stress hardware
    invariance of learned features.

    The extra harshness sits in the per-sample terms (5x gain-drift, higher
    noise floor) rather than the static ripple: per-sample electronics are
    what cross-view training can learn to discard, while a bigger static
    pattern would only grow the fixed offset between the two directions.
    """
    ab = DeviceProfile.random(subcarriers, seed=11, ripple=0.35, drift_std=0.060, noise_std=0.45)
    ba = DeviceProfile.random(subcarriers, seed=12, ripple=0.35, drift_std=0.060, noise_std=0.45)
    return ab, ba


def gen_free_space(
    activity: ActivityClass, dims: tuple[int, int, int], rng: np.random.Generator
) -> np.ndarray:
    """Draw one free-space channel realization, complex128 [links, subcarriers, frames].

    Sum over paths of
        gain_p * exp(i(slope_p * s + base_p + shift_p * a + jitter)) * (1 + depth * sin(2*pi*f*t + phi_p))
    with per-draw randomness confined to path amplitude/phase jitter and
    the modulation phase phi_p. Draw order is fixed, so equal-state
    generators give bit-identical tensors.
    """
    links, subcarriers, frames = dims
    if min(links, subcarriers, frames) < 1:
        raise ValueError(f"invalid dims {dims}")
    p = activity.paths
    amp_eps = rng.standard_normal(p)
    phase_eps = rng.standard_normal(p)
    mod_phase = rng.uniform(0.0, 2.0 * np.pi, size=p)

    a_idx = np.arange(links, dtype=np.float64)
    s_idx = np.arange(subcarriers, dtype=np.float64)
    t_idx = np.arange(frames, dtype=np.float64)

    out = np.zeros((links, subcarriers, frames), dtype=np.complex128)
    for k in range(p):
        gain = max(activity.path_gains[k] * (1.0 + activity.amp_jitter * amp_eps[k]), 0.0)
        phase = (
            activity.phase_slopes[k] * s_idx[None, :]
            + activity.base_phases[k]
            + activity.link_shifts[k] * a_idx[:, None]
            + activity.phase_jitter * phase_eps[k]
        )
        mod = 1.0 + activity.mod_depth * np.sin(
            2.0 * np.pi * activity.mod_freq * t_idx + mod_phase[k]
        )
        out += gain * np.exp(1j * phase)[:, :, None] * mod[None, None, :]
    return out


def apply_electronics(
    free_space: np.ndarray, profile: DeviceProfile, rng: np.random.Generator
) -> np.ndarray:
    """Push a channel tensor through one electronics chain.

    Per-subcarrier complex gain, then a per-link log-domain gain random
    walk over frames, then additive complex Gaussian noise. All random
    draws happen unconditionally (scaled by their std), so the stream
    position never depends on profile values.
    """
    fs = np.asarray(free_space, dtype=np.complex128)
    if fs.ndim != 3:
        raise ValueError(f"expected [links, subcarriers, frames], got shape {fs.shape}")
    links, subcarriers, frames = fs.shape
    if profile.subcarriers != subcarriers:
        raise ValueError(
            f"profile covers {profile.subcarriers} subcarriers, tensor has {subcarriers}"
        )
    drift_eps = rng.standard_normal((links, frames))
    noise_re = rng.standard_normal(fs.shape)
    noise_im = rng.standard_normal(fs.shape)

    drift = np.exp(profile.drift_std * np.cumsum(drift_eps, axis=1))
    out = fs * profile.complex_gain()[None, :, None] * drift[:, None, :]
    out = out + profile.noise_std * (noise_re + 1j * noise_im)
    return out


def gen_paired_sample(
    activity: ActivityClass, config: SynthConfig, seed: np.random.SeedSequence
) -> CsiSample:
    """One labelled sample: shared free space, per-direction electronics.

    The seed sequence is split three ways (free space, direction A->B,
    direction B->A) so the two directions see independent noise.
    """
    fs_ss, ab_ss, ba_ss = seed.spawn(3)
    dims = (config.links, config.subcarriers, config.frames)
    h = gen_free_space(activity, dims, np.random.default_rng(fs_ss))
    up = apply_electronics(h, config.profile_ab, np.random.default_rng(ab_ss))
    down = apply_electronics(h, config.profile_ba, np.random.default_rng(ba_ss))
    return CsiSample(
        amplitude=np.abs(up).astype(np.float32),
        paired_amplitude=np.abs(down).astype(np.float32),
        label=activity.index,
    )


def build_dataset(config: SynthConfig) -> CsiDataset:
    """Generate all samples in class-major order, entirely in memory.

    Sample i gets the child seed (config.seed, i), so any subset can be
    regenerated independently and parallel generation is bit-identical to
    serial.
    """
    if config.samples_per_class == 0:
        raise ConfigError("samples_per_class is 0; refusing to build an empty dataset")
    samples = []
    index = 0
    for activity in config.classes:
        for _ in range(config.samples_per_class):
            ss = np.random.SeedSequence((config.seed, index))
            sample = gen_paired_sample(activity, config, ss)
            samples.append(
                CsiSample(
                    amplitude=sample.amplitude,
                    paired_amplitude=sample.paired_amplitude,
                    label=sample.label,
                    sample_id=f"sample-{index:05d}",
                )
            )
            index += 1
    manifest = DatasetManifest(
        class_count=config.class_count,
        sample_count=len(samples),
        links=config.links,
        subcarriers=config.subcarriers,
        frames=config.frames,
        has_pairs=True,
    )
    return CsiDataset(manifest=manifest, samples=tuple(samples))


def gen_dataset(config: SynthConfig, out_dir: str | Path) -> Path:
    """Build per `config` and write the canonical dataset directory."""
    return write_dataset(build_dataset(config), out_dir)
