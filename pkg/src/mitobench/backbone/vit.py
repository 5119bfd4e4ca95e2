"""Executable backbones: a plain ViT encoder and a pooled conv baseline.

Attention keeps separate q/k/v/o projection layers and the MLP keeps
separate fc1/fc2 so adapter injection can address each weight by name
(``blocks.{i}.attn.q_proj`` etc.).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from mitobench.backbone.spec import BackboneSpec, EmbeddingRule
from mitobench.errors import UnsupportedModeError, ValidationError


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim**-0.5
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.o_proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q = self.q_proj(x).view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(b, t, self.heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.o_proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class VisionTransformerBackbone(nn.Module):
    """ViT encoder producing [class, patch...] token sequences.

    Register tokens, when configured, participate in attention but are
    dropped from the output sequence and therefore never enter the
    patch mean.
    """

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        if spec.family != "vit":
            raise ValidationError(f"spec {spec.name!r} is not a vit-family spec")
        self.spec = spec
        side = math.isqrt(spec.patch_grid)
        self.patch_size = spec.input_size // side
        self.patch_embed = nn.Conv2d(
            3, spec.width, kernel_size=self.patch_size, stride=self.patch_size
        )
        self.cls_token = nn.Parameter(torch.zeros(1, 1, spec.width))
        if spec.reg_tokens:
            self.reg_token = nn.Parameter(torch.zeros(1, spec.reg_tokens, spec.width))
        else:
            self.reg_token = None
        n_tokens = 1 + spec.reg_tokens + spec.patch_grid
        self.pos_embed = nn.Parameter(torch.zeros(1, n_tokens, spec.width))
        self.blocks = nn.ModuleList(
            Block(spec.width, spec.heads, spec.mlp_dim) for _ in range(spec.depth)
        )
        self.norm = nn.LayerNorm(spec.width)

    def _check_input(self, images: torch.Tensor) -> None:
        size = self.spec.input_size
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (size, size):
            raise ValidationError(
                f"expected image batch of shape B x 3 x {size} x {size}, "
                f"got {tuple(images.shape)}"
            )

    def forward_tokens(self, images: torch.Tensor) -> torch.Tensor:
        """Run the encoder; returns B x (1 + patch_grid) x width tokens,
        class token first."""
        self._check_input(images)
        b = images.shape[0]
        x = self.patch_embed(images).flatten(2).transpose(1, 2)
        parts = [self.cls_token.expand(b, -1, -1)]
        if self.reg_token is not None:
            parts.append(self.reg_token.expand(b, -1, -1))
        parts.append(x)
        x = torch.cat(parts, dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        if self.spec.reg_tokens:
            x = torch.cat([x[:, :1], x[:, 1 + self.spec.reg_tokens :]], dim=1)
        if not torch.isfinite(x).all():
            raise ValidationError(
                f"backbone {self.spec.name!r} produced non-finite tokens "
                "(corrupt weights or input)"
            )
        return x

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """B x feature_dim embeddings under the spec's embedding rule."""
        return apply_embedding_rule(self.forward_tokens(images), self.spec.embedding_rule)

    forward = embed


class ConvBackbone(nn.Module):
    """Strided conv stages + global average pool. The pooled vector plays
    the class-token role; no token tensor is exposed."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        if spec.family != "conv":
            raise ValidationError(f"spec {spec.name!r} is not a conv-family spec")
        self.spec = spec
        layers: list[nn.Module] = []
        channels = 3
        for stage in range(spec.depth):
            out = min(spec.width, 16 * 2**stage) if stage < spec.depth - 1 else spec.width
            layers += [nn.Conv2d(channels, out, kernel_size=3, stride=2, padding=1), nn.GELU()]
            channels = out
        self.stages = nn.Sequential(*layers)

    def _check_input(self, images: torch.Tensor) -> None:
        size = self.spec.input_size
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (size, size):
            raise ValidationError(
                f"expected image batch of shape B x 3 x {size} x {size}, "
                f"got {tuple(images.shape)}"
            )

    def forward_tokens(self, images: torch.Tensor) -> torch.Tensor:
        raise UnsupportedModeError(
            f"conv backbone {self.spec.name!r} exposes no token tensor"
        )

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        self._check_input(images)
        x = self.stages(images).mean(dim=(2, 3))
        if not torch.isfinite(x).all():
            raise ValidationError(
                f"backbone {self.spec.name!r} produced non-finite features"
            )
        return x

    forward = embed


def apply_embedding_rule(tokens: torch.Tensor, rule: EmbeddingRule) -> torch.Tensor:
    """Reduce a B x (1+P) x d token tensor (class token first) to B x n."""
    if tokens.ndim != 3 or tokens.shape[1] < 1:
        raise ValidationError(f"expected B x (1+P) x d tokens, got {tuple(tokens.shape)}")
    cls = tokens[:, 0]
    if rule is EmbeddingRule.CLASS_TOKEN:
        return cls
    if tokens.shape[1] < 2:
        raise ValidationError("CLASS_PLUS_MEAN_PATCH needs at least one patch token")
    return torch.cat([cls, tokens[:, 1:].mean(dim=1)], dim=-1)


def build_backbone(spec: BackboneSpec) -> nn.Module:
    """Construct the uninitialized module for ``spec`` (weights unloaded)."""
    if spec.family == "vit":
        return VisionTransformerBackbone(spec)
    return ConvBackbone(spec)


def freeze(module: nn.Module) -> nn.Module:
    """Flag all parameters frozen and switch to deterministic inference mode."""
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module
