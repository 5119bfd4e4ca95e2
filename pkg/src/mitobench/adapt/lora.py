"""Low-rank adapters over frozen linear layers.

Forward rule: h = W x + gamma * B (A x_dropped), with A seeded random,
B zero at creation, and dropout applied to the adapter branch input
only while training. The frozen base path is never dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn.functional as F
from torch import nn

from mitobench.errors import ValidationError


class LoraTarget(Enum):
    Q_PROJ = "Q_PROJ"
    K_PROJ = "K_PROJ"
    V_PROJ = "V_PROJ"
    O_PROJ = "O_PROJ"
    MLP_FC1 = "MLP_FC1"
    MLP_FC2 = "MLP_FC2"


ALL_TARGETS = (
    LoraTarget.Q_PROJ,
    LoraTarget.K_PROJ,
    LoraTarget.V_PROJ,
    LoraTarget.O_PROJ,
    LoraTarget.MLP_FC1,
    LoraTarget.MLP_FC2,
)

# Target -> (submodule holding it, attribute name) within a transformer block.
_TARGET_ATTRS = {
    LoraTarget.Q_PROJ: ("attn", "q_proj"),
    LoraTarget.K_PROJ: ("attn", "k_proj"),
    LoraTarget.V_PROJ: ("attn", "v_proj"),
    LoraTarget.O_PROJ: ("attn", "o_proj"),
    LoraTarget.MLP_FC1: ("mlp", "fc1"),
    LoraTarget.MLP_FC2: ("mlp", "fc2"),
}


@dataclass(frozen=True)
class LoraConfig:
    """Adapter hyperparameters.

    The scale applied to the low-rank branch is ``alpha / rank`` (so the
    published rank-16/scale-16 setting yields an effective scale of 1.0);
    set ``gamma`` to override it with a literal value.
    """

    rank: int = 16
    alpha: float = 16.0
    dropout_p: float = 0.1
    targets: tuple[LoraTarget, ...] = field(default=ALL_TARGETS)
    seed: int = 0
    gamma: float | None = None

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError(f"rank: must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ValidationError(f"alpha: must be > 0, got {self.alpha}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError(f"dropout_p: must be in [0, 1), got {self.dropout_p}")
        if not self.targets:
            raise ValidationError("targets: must be nonempty")
        object.__setattr__(self, "targets", tuple(LoraTarget(t) for t in self.targets))

    @property
    def scale(self) -> float:
        return self.gamma if self.gamma is not None else self.alpha / self.rank


class LoraLayer(nn.Module):
    """A frozen linear layer with a trainable low-rank correction."""

    def __init__(
        self,
        base: nn.Linear,
        rank: int,
        gamma: float,
        dropout_p: float = 0.0,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        m_t, n_t = base.out_features, base.in_features
        if rank > min(m_t, n_t):
            raise ValidationError(
                f"rank: {rank} exceeds min weight dimension {min(m_t, n_t)} "
                f"for a {m_t}x{n_t} target"
            )
        base.weight.requires_grad_(False)
        if base.bias is not None:
            base.bias.requires_grad_(False)
        self.base = base
        self.gamma = float(gamma)
        self.dropout_p = float(dropout_p)
        bound = 1.0 / math.sqrt(n_t)
        a = torch.empty(rank, n_t, dtype=base.weight.dtype)
        a.uniform_(-bound, bound, generator=generator)
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(m_t, rank, dtype=base.weight.dtype))

    @property
    def base_ref(self) -> torch.Tensor:
        return self.base.weight

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    def delta(self) -> torch.Tensor:
        """gamma * B A, the effective weight correction."""
        return self.gamma * (self.B @ self.A)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.A.shape[1]:
            raise ValidationError(
                f"input dim {x.shape[-1]} != adapter in-dim {self.A.shape[1]}"
            )
        h = F.linear(x, self.base.weight, self.base.bias)
        if self.training and self.dropout_p > 0.0:
            x = F.dropout(x, self.dropout_p, training=True)
        return h + self.gamma * F.linear(F.linear(x, self.A), self.B)

    def merged_weight(self) -> torch.Tensor:
        return self.base.weight + self.delta()


def lora_forward(layer: LoraLayer, x: torch.Tensor) -> torch.Tensor:
    return layer(x)


def iter_target_layers(backbone: nn.Module, targets):
    """Yield (path, parent module, attribute, linear) per targeted weight."""
    blocks = getattr(backbone, "blocks", None)
    if blocks is None:
        from mitobench.errors import UnsupportedModeError

        name = getattr(getattr(backbone, "spec", None), "name", type(backbone).__name__)
        raise UnsupportedModeError(
            f"backbone {name!r} has no transformer blocks; LoRA targets are absent"
        )
    for i, block in enumerate(blocks):
        for target in targets:
            owner_name, attr = _TARGET_ATTRS[LoraTarget(target)]
            owner = getattr(block, owner_name)
            yield f"blocks.{i}.{owner_name}.{attr}", owner, attr, getattr(owner, attr)


def attach_adapters(backbone: nn.Module, config: LoraConfig) -> dict[str, LoraLayer]:
    """Wrap every targeted weight in every block; returns path -> layer."""
    generator = torch.Generator().manual_seed(config.seed)
    adapters: dict[str, LoraLayer] = {}
    for path, owner, attr, linear in list(iter_target_layers(backbone, config.targets)):
        if not isinstance(linear, nn.Linear):
            raise ValidationError(f"{path}: target already wrapped or not a linear layer")
        layer = LoraLayer(
            linear,
            rank=config.rank,
            gamma=config.scale,
            dropout_p=config.dropout_p,
            generator=generator,
        )
        setattr(owner, attr, layer)
        adapters[path] = layer
    return adapters


def merge_adapters(backbone: nn.Module, adapters: dict[str, LoraLayer]) -> None:
    """Fold every adapter into its base weight and restore plain linears."""
    for path, layer in adapters.items():
        owner_path, attr = path.rsplit(".", 1)
        owner = backbone.get_submodule(owner_path)
        with torch.no_grad():
            layer.base.weight.add_(layer.delta())
        setattr(owner, attr, layer.base)


def lora_trainable_count(depth: int, width: int, mlp_dim: int, rank: int, targets) -> int:
    """Closed-form count of adapter parameters (head excluded)."""
    dims = {
        LoraTarget.Q_PROJ: (width, width),
        LoraTarget.K_PROJ: (width, width),
        LoraTarget.V_PROJ: (width, width),
        LoraTarget.O_PROJ: (width, width),
        LoraTarget.MLP_FC1: (width, mlp_dim),
        LoraTarget.MLP_FC2: (mlp_dim, width),
    }
    per_block = sum(rank * (d_in + d_out) for d_in, d_out in (dims[LoraTarget(t)] for t in targets))
    return depth * per_block
