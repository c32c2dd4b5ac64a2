"""Encoders, context models, prediction heads, projector, and probe classifier.

Two independent branches (A, B) share an architecture but never parameter
storage; the future-prediction heads are the only cross-branch shared
weights. All initialization is driven by an explicit torch.Generator so a
seed fully determines the starting point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

METHOD_CAPC = "capc"
METHOD_CPC_ONLY = "cpc-only"
METHOD_BT_ONLY = "bt-only"
METHODS = (METHOD_CAPC, METHOD_CPC_ONLY, METHOD_BT_ONLY)


@dataclass(frozen=True)
class ModelDims:
    """Architecture dimensions shared by both branches."""

    links: int
    subcarriers: int
    frames_per_window: int
    embed_dim: int = 128
    context_dim: int = 128
    n_future: int = 9
    projector_dim: int = 128
    conv_channels: tuple[int, int] = (32, 64)

    def __post_init__(self) -> None:
        if min(self.links, self.embed_dim, self.context_dim, self.projector_dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.n_future < 1:
            raise ValueError(f"n_future must be >= 1, got {self.n_future}")
        # Two halving pools must leave at least one spatial cell.
        if self.subcarriers < 4 or self.frames_per_window < 4:
            raise ValueError(
                f"subcarriers and frames_per_window must be >= 4 for two pooling stages, "
                f"got {self.subcarriers} x {self.frames_per_window}"
            )

    @property
    def window_shape(self) -> tuple[int, int, int]:
        return (self.links, self.subcarriers, self.frames_per_window)

    @property
    def flat_conv_dim(self) -> int:
        s = self.subcarriers // 2 // 2
        f = self.frames_per_window // 2 // 2
        return self.conv_channels[1] * s * f


class WindowEncoder(nn.Module):
    """Maps one CSI window [B, links, subcarriers, frames] to R^D.

    Two conv blocks over the subcarrier x frame plane with the link axis as
    input channels, then a flatten and an affine map to the embedding.
    """

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        c1, c2 = dims.conv_channels
        self.blocks = nn.Sequential(
            nn.Conv2d(dims.links, c1, kernel_size=3, padding=1),
            nn.BatchNorm2d(c1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(c1, c2, kernel_size=3, padding=1),
            nn.BatchNorm2d(c2),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.head = nn.Linear(dims.flat_conv_dim, dims.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.dims.window_shape:
            raise ValueError(
                f"expected [B, {self.dims.links}, {self.dims.subcarriers}, "
                f"{self.dims.frames_per_window}], got {tuple(x.shape)}"
            )
        return self.head(self.blocks(x).flatten(1))


class ContextModel(nn.Module):
    """GRU summarizer: consumes z_1..z_t and returns the final hidden state."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.gru = nn.GRU(dims.embed_dim, dims.context_dim, batch_first=True)

    def forward(self, z_seq: torch.Tensor) -> torch.Tensor:
        if z_seq.ndim != 3:
            raise ValueError(f"expected [B, t, D], got shape {tuple(z_seq.shape)}")
        if z_seq.shape[1] < 1:
            raise ValueError("context needs at least one step")
        _, h_n = self.gru(z_seq)
        return h_n[0]


class PredictionHeads(nn.Module):
    """T affine maps R^H -> R^D; head k predicts the window at offset +k."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.n_future = dims.n_future
        self.heads = nn.ModuleList(
            nn.Linear(dims.context_dim, dims.embed_dim) for _ in range(dims.n_future)
        )

    def forward(self, c_t: torch.Tensor, k: int) -> torch.Tensor:
        if not 1 <= k <= self.n_future:
            raise ValueError(f"offset k={k} outside [1, {self.n_future}]")
        return self.heads[k - 1](c_t)


class Projector(nn.Module):
    """Three affine layers with ReLU between, R^D -> R^h."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        h = dims.projector_dim
        self.layers = nn.Sequential(
            nn.Linear(dims.embed_dim, h), nn.ReLU(), nn.Linear(h, h), nn.ReLU(), nn.Linear(h, h)
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.layers(z)


class LinearClassifier(nn.Module):
    """Probe head: hidden affine layer at half the input width, then logits."""

    def __init__(self, input_dim: int, n_classes: int):
        super().__init__()
        if input_dim < 2 or n_classes < 2:
            raise ValueError(f"bad classifier dims ({input_dim}, {n_classes})")
        self.input_dim = input_dim
        self.net = nn.Sequential(
            nn.Linear(input_dim, input_dim // 2), nn.ReLU(), nn.Linear(input_dim // 2, n_classes)
        )

    def forward(self, z_concat: torch.Tensor) -> torch.Tensor:
        if z_concat.ndim != 2 or z_concat.shape[1] != self.input_dim:
            raise ValueError(
                f"expected [B, {self.input_dim}], got {tuple(z_concat.shape)}"
            )
        return self.net(z_concat)


class Branch(nn.Module):
    """One branch's encoder, context model, and projector."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.encoder = WindowEncoder(dims)
        self.context = ContextModel(dims)
        self.projector = Projector(dims)


class PretrainModel(nn.Module):
    """Both branches plus the shared prediction heads."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.branch_a = Branch(dims)
        self.branch_b = Branch(dims)
        self.heads = PredictionHeads(dims)


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Fan-in-scaled uniform init for all weights, driven by one generator.

    Iteration follows module definition order, so a fixed generator state
    yields a bit-identical parameter set.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            m.weight.data.uniform_(-bound, bound, generator=generator)
            if m.bias is not None:
                m.bias.data.uniform_(-bound, bound, generator=generator)
        elif isinstance(m, nn.GRU):
            bound = 1.0 / math.sqrt(m.hidden_size)
            for p in m.parameters(recurse=False):
                p.data.uniform_(-bound, bound, generator=generator)
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
            m.reset_running_stats()


def build_pretrain_model(dims: ModelDims, seed: int) -> PretrainModel:
    gen = torch.Generator().manual_seed(seed)
    model = PretrainModel(dims)
    init_parameters(model, gen)
    return model


def trainable_modules(model: PretrainModel, method: str) -> list[nn.Module]:
    """The modules a pretraining method actually optimizes.

    capc: both encoders and context models plus the shared heads (cross-view
    consistency acts on context embeddings directly). bt-only: both encoders
    and projectors. cpc-only: branch A's encoder, context model, and heads.
    """
    if method == METHOD_CAPC:
        return [
            model.branch_a.encoder,
            model.branch_a.context,
            model.branch_b.encoder,
            model.branch_b.context,
            model.heads,
        ]
    if method == METHOD_BT_ONLY:
        return [
            model.branch_a.encoder,
            model.branch_a.projector,
            model.branch_b.encoder,
            model.branch_b.projector,
        ]
    if method == METHOD_CPC_ONLY:
        return [model.branch_a.encoder, model.branch_a.context, model.heads]
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def trainable_parameters(model: PretrainModel, method: str) -> list[nn.Parameter]:
    params: list[nn.Parameter] = []
    seen: set[int] = set()
    for mod in trainable_modules(model, method):
        for p in mod.parameters():
            if id(p) not in seen:
                seen.add(id(p))
                params.append(p)
    return params
