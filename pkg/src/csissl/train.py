"""Pretraining loop, layer-adaptive optimizer, and warmup/cosine schedule.

Every random draw in training derives from (seed, purpose, counters) via
numpy seed sequences rather than from mutable generator state. Shuffles
depend on (seed, epoch), per-sample augmentations on (seed, epoch, sample
index), and the shared future-prediction timestep on (seed, epoch, step).
Checkpoints therefore only need to store counters to resume bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch

from .augment import (
    AugmentationSpec,
    capc_default_spec,
    make_views,
    parse_spec,
    pretraining_inputs,
)
from .checkpoint import (
    FORMAT_TAG,
    CheckpointBundle,
    _dims_to_manifest,
    load_checkpoint,
    save_checkpoint,
)
from .data import CsiDataset, segment, window_count
from .errors import ConfigError, TrainingDivergedError
from .losses import bt_cross_correlation, bt_loss, cpc_loss, hybrid_loss
from .models import (
    METHOD_BT_ONLY,
    METHOD_CAPC,
    METHOD_CPC_ONLY,
    METHODS,
    ModelDims,
    build_pretrain_model,
    trainable_parameters,
)

# Purpose tags distinguishing the derived random streams.
_SHUFFLE = 1
_AUGMENT = 2
_TIMESTEP = 3

DEFAULT_MIN_TIMESTEP = 2


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to base_lr, then cosine decay to zero at total_steps."""

    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} outside [0, {self.total_steps}]"
            )
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")


def lr_at(step: int, schedule: LrSchedule) -> float:
    """Learning rate at a step in [0, total_steps]."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    step = min(step, schedule.total_steps)
    if schedule.warmup_steps > 0 and step <= schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    span = max(schedule.total_steps - schedule.warmup_steps, 1)
    progress = (step - schedule.warmup_steps) / span
    return 0.5 * schedule.base_lr * (1.0 + math.cos(math.pi * progress))


class Lars(torch.optim.Optimizer):
    """Layer-wise adaptive rate scaling with momentum.

    Parameter groups carry an `adapt` flag: adaptive groups use the trust
    ratio ||w|| / (||g|| + wd * ||w|| + eps) and weight decay; non-adaptive
    groups (biases, normalization scales) take a plain momentum step. A
    parameter with zero norm falls back to trust ratio 1 so it can leave
    the origin.
    """

    def __init__(
        self,
        params,
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        eps: float = 1e-9,
        adapt: bool = True,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        if not 0 <= momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        defaults = dict(lr=lr, momentum=momentum, weight_decay=weight_decay, eps=eps, adapt=adapt)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure: Callable[[], float] | None = None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            momentum = group["momentum"]
            wd = group["weight_decay"]
            eps = group["eps"]
            lr = group["lr"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                if not torch.isfinite(grad).all():
                    raise TrainingDivergedError(
                        f"non-finite gradient in a parameter of shape {tuple(p.shape)} "
                        f"(adaptive={group['adapt']}, lr={lr:g})"
                    )
                if group["adapt"]:
                    update = grad + wd * p
                    w_norm = torch.linalg.vector_norm(p)
                    g_norm = torch.linalg.vector_norm(grad)
                    if w_norm.item() == 0.0:
                        trust = 1.0
                    else:
                        trust = (w_norm / (g_norm + wd * w_norm + eps)).item()
                    update = trust * update
                else:
                    update = grad
                state = self.state[p]
                buf = state.get("momentum_buffer")
                if buf is None:
                    buf = torch.zeros_like(p)
                    state["momentum_buffer"] = buf
                buf.mul_(momentum).add_(update)
                p.add_(buf, alpha=-lr)
        return loss


def lars_step(
    param: torch.Tensor,
    grad: torch.Tensor,
    lr: float,
    weight_decay: float,
    momentum: float = 0.9,
    eps: float = 1e-9,
) -> torch.Tensor:
    """One adaptive update on a detached tensor; returns the new value."""
    p = param.detach().clone().requires_grad_(True)
    p.grad = grad.detach().clone()
    opt = Lars([p], lr=lr, momentum=momentum, weight_decay=weight_decay, eps=eps)
    opt.step()
    return p.detach()


def sample_timestep(
    length: int,
    n_future: int,
    rng: np.random.Generator,
    t_min: int = DEFAULT_MIN_TIMESTEP,
) -> int:
    """Uniform prediction anchor t in [t_min, length - n_future].

    The context summarizes windows 1..t and the loss predicts windows
    t+1..t+n_future, so t may not exceed length - n_future. The floor keeps
    at least t_min windows in the context.
    """
    if t_min < 1:
        raise ConfigError(f"t_min must be >= 1, got {t_min}")
    upper = length - n_future
    if upper < t_min:
        raise ConfigError(
            f"{length} windows cannot host {n_future} future offsets with a context "
            f"of at least {t_min} windows; reduce n_future or frames_per_window"
        )
    return int(rng.integers(t_min, upper + 1))


@dataclass(frozen=True)
class TrainConfig:
    """Pretraining hyperparameters; defaults are the reference settings."""

    method: str = METHOD_CAPC
    epochs: int = 300
    batch_size: int = 128
    lr_weights: float = 0.2
    lr_bias_bn: float = 0.0048
    warmup_epochs: int = 10
    weight_decay: float = 1.5e-6
    momentum: float = 0.9
    lam: float = 0.002
    beta: float = 50.0
    eps: float = 1e-9
    n_future: int | None = None
    frames_per_window: int = 10
    embed_dim: int = 128
    context_dim: int = 128
    projector_dim: int = 128
    conv_channels: tuple[int, int] = (32, 64)
    min_timestep: int = DEFAULT_MIN_TIMESTEP
    augmentations: str | AugmentationSpec | None = None
    standardize: bool = False
    deterministic: bool = True
    checkpoint_every: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        for name in ("lr_weights", "lr_bias_bn", "lam", "beta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("weight_decay", "eps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(
                f"warmup_epochs {self.warmup_epochs} outside [0, {self.epochs}]"
            )
        if self.n_future is not None and self.n_future < 1:
            raise ConfigError(f"n_future must be >= 1, got {self.n_future}")
        if self.min_timestep < 1:
            raise ConfigError(f"min_timestep must be >= 1, got {self.min_timestep}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if isinstance(self.augmentations, str):
            object.__setattr__(self, "augmentations", parse_spec(self.augmentations))
        if self.method == METHOD_CPC_ONLY and self.augmentations is not None:
            if self.augmentations != AugmentationSpec():
                raise ConfigError(
                    "cpc-only trains a single unaugmented branch; remove the augmentations"
                )

    @property
    def resolved_n_future(self) -> int:
        if self.n_future is not None:
            return self.n_future
        return {METHOD_CAPC: 9, METHOD_CPC_ONLY: 2, METHOD_BT_ONLY: 1}[self.method]

    @property
    def resolved_augmentations(self) -> AugmentationSpec:
        if self.augmentations is not None:
            return self.augmentations
        if self.method == METHOD_CAPC:
            return capc_default_spec()
        if self.method == METHOD_BT_ONLY:
            return AugmentationSpec(ops=capc_default_spec().ops, dual_view=False)
        return AugmentationSpec()

    def model_dims(self, links: int, subcarriers: int) -> ModelDims:
        return ModelDims(
            links=links,
            subcarriers=subcarriers,
            frames_per_window=self.frames_per_window,
            embed_dim=self.embed_dim,
            context_dim=self.context_dim,
            n_future=self.resolved_n_future,
            projector_dim=self.projector_dim,
            conv_channels=self.conv_channels,
        )

    def snapshot(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_weights": self.lr_weights,
            "lr_bias_bn": self.lr_bias_bn,
            "warmup_epochs": self.warmup_epochs,
            "weight_decay": self.weight_decay,
            "momentum": self.momentum,
            "lam": self.lam,
            "beta": self.beta,
            "eps": self.eps,
            "n_future": self.resolved_n_future,
            "frames_per_window": self.frames_per_window,
            "min_timestep": self.min_timestep,
            "augmentations": self.resolved_augmentations.describe(),
            "standardize": self.standardize,
            "seed": self.seed,
        }


@dataclass
class StepMetrics:
    step: int
    lr: float
    bt: float
    cpc_a: float
    cpc_b: float
    total: float

    def line(self) -> str:
        return (
            f"{self.step},{self.lr:.10g},{self.bt:.10g},"
            f"{self.cpc_a:.10g},{self.cpc_b:.10g},{self.total:.10g}"
        )


METRICS_HEADER = "step,lr,bt,cpc_a,cpc_b,total"


@dataclass
class TrainResult:
    checkpoint_dir: Path | None
    metrics_path: Path | None
    history: list[StepMetrics]
    epoch_means: list[float]
    bundle: CheckpointBundle


class Trainer:
    """Runs the pretraining loop for one config on one dataset.

    The schedule is evaluated at 1-based step indices, so the very first
    update already carries base_lr / warmup_steps.
    """

    def __init__(self, config: TrainConfig, dataset: CsiDataset):
        self.config = config
        if config.deterministic:
            torch.set_num_threads(1)
        spec = config.resolved_augmentations
        if spec.dual_view and not dataset.manifest.has_pairs:
            raise ConfigError(
                "dual_view augmentation needs paired samples; this dataset has none "
                "(disable dual_view to proceed)"
            )
        self.spec = spec
        self.inputs = pretraining_inputs(dataset.samples, spec.dual_view)
        if len(self.inputs) < 2:
            raise ConfigError(f"need at least 2 pretraining samples, got {len(self.inputs)}")
        m = dataset.manifest
        self.windows_per_sample = window_count(m.frames, config.frames_per_window)
        if config.method in (METHOD_CAPC, METHOD_CPC_ONLY):
            # Fails fast when the horizon cannot fit; same check as sampling.
            sample_timestep(
                self.windows_per_sample,
                config.resolved_n_future,
                np.random.default_rng(0),
                config.min_timestep,
            )
        self.dims = config.model_dims(m.links, m.subcarriers)
        self.model = build_pretrain_model(self.dims, seed=config.seed)
        self.norm_mean, self.norm_std = self._standardize_stats(dataset)
        self._build_optimizer()
        self.epoch = 0
        self.step_in_epoch = 0
        self.global_step = 0
        self.history: list[StepMetrics] = []
        n = len(self.inputs)
        self.batch_size = min(config.batch_size, n)
        self.steps_per_epoch = max(n // self.batch_size, 1)
        total = config.epochs * self.steps_per_epoch
        warmup = config.warmup_epochs * self.steps_per_epoch
        self.sched_weights = LrSchedule(config.lr_weights, warmup, max(total, 1))
        self.sched_bias = LrSchedule(config.lr_bias_bn, warmup, max(total, 1))

    def _standardize_stats(self, dataset: CsiDataset) -> tuple[float, float]:
        if not self.config.standardize:
            return 0.0, 1.0
        arrays = [s.amplitude for s in dataset.samples]
        arrays += [s.paired_amplitude for s in dataset.samples if s.has_pair()]
        stacked = np.concatenate([a.reshape(-1) for a in arrays])
        mean = float(stacked.mean(dtype=np.float64))
        std = float(stacked.std(dtype=np.float64))
        if std == 0.0:
            raise ConfigError("cannot standardize a constant dataset")
        return mean, std

    def _build_optimizer(self) -> None:
        params = trainable_parameters(self.model, self.config.method)
        weights = [p for p in params if p.ndim >= 2]
        bias_bn = [p for p in params if p.ndim < 2]
        groups = [
            dict(
                params=weights,
                lr=self.config.lr_weights,
                weight_decay=self.config.weight_decay,
                adapt=True,
            ),
            dict(params=bias_bn, lr=self.config.lr_bias_bn, weight_decay=0.0, adapt=False),
        ]
        self.optimizer = Lars(
            groups,
            lr=self.config.lr_weights,
            momentum=self.config.momentum,
            eps=self.config.eps,
        )
        self._param_names = {}
        for name, p in self.model.named_parameters():
            self._param_names[id(p)] = name

    # ------------------------------------------------------------- batches

    def _epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence((self.config.seed, _SHUFFLE, epoch)))
        return rng.permutation(len(self.inputs))

    def _standardized(self, windows: np.ndarray) -> torch.Tensor:
        x = torch.from_numpy(windows)
        if self.config.standardize:
            x = (x - self.norm_mean) / self.norm_std
        return x

    def _augmented_views(
        self, idx: int, epoch: int, keep: int
    ) -> tuple[np.ndarray, np.ndarray]:
        ss = np.random.SeedSequence((self.config.seed, _AUGMENT, epoch, int(idx)))
        va, vb = make_views(self.inputs[idx], self.spec, self.config.frames_per_window, ss)
        return va.windows[:keep], vb.windows[:keep]

    # ---------------------------------------------------------------- step

    def _encode_sequence(self, branch, x: torch.Tensor) -> torch.Tensor:
        b, length = x.shape[0], x.shape[1]
        z = branch.encoder(x.reshape(b * length, *x.shape[2:]))
        return z.reshape(b, length, -1)

    def _step_losses(self, indices: np.ndarray, epoch: int, step: int) -> dict[str, torch.Tensor]:
        cfg = self.config
        method = cfg.method
        model = self.model
        if method == METHOD_BT_ONLY:
            views = [self._augmented_views(i, epoch, self.windows_per_sample) for i in indices]
            xa = self._standardized(np.stack([v[0] for v in views]))
            xb = self._standardized(np.stack([v[1] for v in views]))
            za = self._encode_sequence(model.branch_a, xa).flatten(0, 1)
            zb = self._encode_sequence(model.branch_b, xb).flatten(0, 1)
            pa = model.branch_a.projector(za)
            pb = model.branch_b.projector(zb)
            bt = bt_loss(bt_cross_correlation(pa, pb, cfg.eps), cfg.lam)
            zero = bt.detach().new_zeros(())
            return {"bt": bt, "cpc_a": zero, "cpc_b": zero, "total": bt}

        n_future = cfg.resolved_n_future
        rng_t = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, _TIMESTEP, epoch, step))
        )
        t = sample_timestep(self.windows_per_sample, n_future, rng_t, cfg.min_timestep)
        keep = t + n_future

        if method == METHOD_CPC_ONLY:
            windows = np.stack(
                [
                    segment(self.inputs[i], cfg.frames_per_window).windows[:keep]
                    for i in indices
                ]
            )
            x = self._standardized(windows)
            z = self._encode_sequence(model.branch_a, x)
            c = model.branch_a.context(z[:, :t])
            cpc = cpc_loss(z[:, t:].transpose(0, 1), c, model.heads)
            zero = cpc.detach().new_zeros(())
            return {"bt": zero, "cpc_a": cpc, "cpc_b": zero, "total": cpc}

        views = [self._augmented_views(i, epoch, keep) for i in indices]
        xa = self._standardized(np.stack([v[0] for v in views]))
        xb = self._standardized(np.stack([v[1] for v in views]))
        za = self._encode_sequence(model.branch_a, xa)
        zb = self._encode_sequence(model.branch_b, xb)
        ca = model.branch_a.context(za[:, :t])
        cb = model.branch_b.context(zb[:, :t])
        cpc_a = cpc_loss(za[:, t:].transpose(0, 1), ca, model.heads)
        cpc_b = cpc_loss(zb[:, t:].transpose(0, 1), cb, model.heads)
        bt = bt_loss(bt_cross_correlation(ca, cb, cfg.eps), cfg.lam)
        total = hybrid_loss(bt, cpc_a, cpc_b, cfg.beta)
        return {"bt": bt, "cpc_a": cpc_a, "cpc_b": cpc_b, "total": total}

    def train_step(self) -> StepMetrics:
        order = self._epoch_order(self.epoch)
        start = self.step_in_epoch * self.batch_size
        indices = order[start : start + self.batch_size]
        self.model.train()
        losses = self._step_losses(indices, self.epoch, self.step_in_epoch)
        if not torch.isfinite(losses["total"]):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {self.epoch} step {self.step_in_epoch}: "
                f"{losses['total'].item()!r}"
            )
        lr_w = lr_at(self.global_step + 1, self.sched_weights)
        lr_b = lr_at(self.global_step + 1, self.sched_bias)
        self.optimizer.param_groups[0]["lr"] = lr_w
        self.optimizer.param_groups[1]["lr"] = lr_b
        self.optimizer.zero_grad()
        losses["total"].backward()
        self.optimizer.step()
        metrics = StepMetrics(
            step=self.global_step,
            lr=lr_w,
            bt=float(losses["bt"].item()),
            cpc_a=float(losses["cpc_a"].item()),
            cpc_b=float(losses["cpc_b"].item()),
            total=float(losses["total"].item()),
        )
        self.history.append(metrics)
        self.step_in_epoch += 1
        self.global_step += 1
        if self.step_in_epoch >= self.steps_per_epoch:
            self.epoch += 1
            self.step_in_epoch = 0
        return metrics

    def train_epoch(self) -> list[StepMetrics]:
        start_epoch = self.epoch
        out = []
        while self.epoch == start_epoch:
            out.append(self.train_step())
        return out

    # --------------------------------------------------------- persistence

    def _opt_buffers(self) -> dict[str, torch.Tensor]:
        buffers = {}
        for group in self.optimizer.param_groups:
            for p in group["params"]:
                buf = self.optimizer.state.get(p, {}).get("momentum_buffer")
                if buf is not None:
                    buffers[self._param_names[id(p)]] = buf
        return buffers

    def _manifest(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "version": 1,
            "method": self.config.method,
            "dims": _dims_to_manifest(self.dims),
            "counters": {
                "epoch": self.epoch,
                "step_in_epoch": self.step_in_epoch,
                "global_step": self.global_step,
            },
            "hyper": self.config.snapshot(),
            "standardize": {
                "enabled": self.config.standardize,
                "mean": self.norm_mean,
                "std": self.norm_std,
            },
        }

    def bundle(self) -> CheckpointBundle:
        """The current training state as an in-memory checkpoint.

        The model is shared, not copied; saving or evaluating through the
        bundle observes any further training on this trainer.
        """
        manifest = self._manifest()
        buffers = {
            name: buf.detach().numpy().reshape(-1).astype("<f4")
            for name, buf in self._opt_buffers().items()
        }
        return CheckpointBundle(manifest=manifest, model=self.model, opt_buffers=buffers)

    def save(self, path: str | Path) -> Path:
        manifest = self._manifest()
        return save_checkpoint(
            path,
            self.model,
            self.config.method,
            manifest["counters"],
            manifest["hyper"],
            manifest["standardize"],
            self._opt_buffers(),
        )

    def restore(self, bundle: CheckpointBundle) -> None:
        """Resume from a bundle saved by a trainer with the same config."""
        if bundle.method != self.config.method:
            raise ConfigError(
                f"checkpoint was trained with method {bundle.method!r}, "
                f"config says {self.config.method!r}"
            )
        if bundle.dims != self.dims:
            raise ConfigError("checkpoint dims do not match the configured model")
        own_state = self.model.state_dict()
        with torch.no_grad():
            for key, tensor in bundle.model.state_dict().items():
                if tensor.dtype.is_floating_point:
                    own_state[key].copy_(tensor)
        name_to_param = {
            self._param_names[id(p)]: p
            for group in self.optimizer.param_groups
            for p in group["params"]
        }
        for name, flat in bundle.opt_buffers.items():
            p = name_to_param.get(name)
            if p is None:
                raise ConfigError(f"optimizer buffer {name!r} matches no trainable parameter")
            buf = torch.from_numpy(flat.reshape(tuple(p.shape)).copy())
            self.optimizer.state[p] = {"momentum_buffer": buf}
        counters = bundle.manifest["counters"]
        self.epoch = int(counters["epoch"])
        self.step_in_epoch = int(counters["step_in_epoch"])
        self.global_step = int(counters["global_step"])
        std_info = bundle.manifest.get("standardize", {})
        if bool(std_info.get("enabled", False)) != self.config.standardize:
            raise ConfigError("checkpoint standardization flag does not match the config")
        if self.config.standardize:
            self.norm_mean = float(std_info["mean"])
            self.norm_std = float(std_info["std"])


def pretrain(
    config: TrainConfig,
    dataset: CsiDataset,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the full pretraining schedule, logging metrics per step.

    With an output directory, writes `metrics.csv`, a `checkpoint-final`,
    and periodic `checkpoint-epoch-NNN` snapshots.
    """
    trainer = Trainer(config, dataset)
    if resume_from is not None:
        trainer.restore(load_checkpoint(resume_from))
    out_path = Path(out_dir) if out_dir is not None else None
    metrics_path = None
    lines = [METRICS_HEADER]
    epoch_means: list[float] = []
    checkpoint_dir = None
    while trainer.epoch < config.epochs:
        epoch_idx = trainer.epoch
        metrics = trainer.train_epoch()
        lines.extend(m.line() for m in metrics)
        epoch_means.append(float(np.mean([m.total for m in metrics])))
        if out_path is not None and (epoch_idx + 1) % config.checkpoint_every == 0:
            trainer.save(out_path / f"checkpoint-epoch-{epoch_idx + 1:03d}")
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        checkpoint_dir = trainer.save(out_path / "checkpoint-final")
        metrics_path = out_path / "metrics.csv"
        metrics_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return TrainResult(
        checkpoint_dir=checkpoint_dir,
        metrics_path=metrics_path,
        history=trainer.history,
        epoch_means=epoch_means,
        bundle=trainer.bundle(),
    )
