"""Backbone registry: immutable descriptions of feature extractors.

A registry entry is metadata only. Pretrained weights for the published
pathology models are external artifacts the user supplies through
``weights_source``; toy entries carry a ``seed:<n>`` source and are
materialized with random weights for desk-scale runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from mitobench.errors import RegistryError, ValidationError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class EmbeddingRule(Enum):
    """How a fixed-length embedding is built from the token sequence."""

    CLASS_TOKEN = "CLASS_TOKEN"
    CLASS_PLUS_MEAN_PATCH = "CLASS_PLUS_MEAN_PATCH"


@dataclass(frozen=True)
class BackboneSpec:
    """Geometry and embedding contract of one feature extractor.

    ``feature_dim`` is the width of the embedding produced by
    ``embedding_rule``: equal to ``width`` for CLASS_TOKEN, ``2 * width``
    for CLASS_PLUS_MEAN_PATCH. ``patch_grid`` is the number of spatial
    patch tokens (0 for conv backbones, which expose no token tensor).
    """

    name: str
    depth: int
    width: int
    heads: int
    mlp_dim: int
    patch_grid: int
    feature_dim: int
    embedding_rule: EmbeddingRule
    input_size: int = 224
    norm_mean: tuple[float, float, float] = IMAGENET_MEAN
    norm_std: tuple[float, float, float] = IMAGENET_STD
    weights_source: str = ""
    family: str = "vit"
    reg_tokens: int = 0
    name_map: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.name:
            raise ValidationError("name: must be nonempty")
        if self.family not in ("vit", "conv"):
            raise ValidationError(f"family: unknown family {self.family!r}")
        if self.depth < 1:
            raise ValidationError(f"depth: must be >= 1, got {self.depth}")
        if self.width < 1:
            raise ValidationError(f"width: must be >= 1, got {self.width}")
        if self.heads < 1:
            raise ValidationError(f"heads: must be >= 1, got {self.heads}")
        if self.width % self.heads != 0:
            raise ValidationError(
                f"width: {self.width} not divisible by heads={self.heads}"
            )
        expected = expected_feature_dim(self.width, self.embedding_rule)
        if self.feature_dim != expected:
            raise ValidationError(
                f"feature_dim: {self.feature_dim} inconsistent with "
                f"embedding_rule={self.embedding_rule.value} and width="
                f"{self.width} (expected {expected})"
            )
        for fname, channels in (("norm_mean", self.norm_mean), ("norm_std", self.norm_std)):
            if len(channels) != 3:
                raise ValidationError(f"{fname}: must have exactly 3 channels")
        if any(s <= 0 for s in self.norm_std):
            raise ValidationError("norm_std: every channel std must be > 0")
        if self.reg_tokens < 0:
            raise ValidationError("reg_tokens: must be >= 0")
        if self.family == "vit":
            if self.patch_grid < 1:
                raise ValidationError(
                    f"patch_grid: must be >= 1 for vit family, got {self.patch_grid}"
                )
            side = math.isqrt(self.patch_grid)
            if side * side != self.patch_grid:
                raise ValidationError(
                    f"patch_grid: {self.patch_grid} is not a perfect square"
                )
            if self.input_size % side != 0:
                raise ValidationError(
                    f"input_size: {self.input_size} not divisible by patch-grid "
                    f"side {side}"
                )
        elif self.embedding_rule is not EmbeddingRule.CLASS_TOKEN:
            raise ValidationError(
                "embedding_rule: conv backbones use CLASS_TOKEN (pooled feature)"
            )


def expected_feature_dim(width: int, rule: EmbeddingRule) -> int:
    return width if rule is EmbeddingRule.CLASS_TOKEN else 2 * width


class BackboneRegistry:
    """Name -> BackboneSpec map. Entries are immutable once registered."""

    def __init__(self):
        self._specs: dict[str, BackboneSpec] = {}

    def register(self, spec: BackboneSpec) -> BackboneSpec:
        spec.validate()
        if spec.name in self._specs:
            raise RegistryError(f"name: backbone {spec.name!r} already registered")
        self._specs[spec.name] = spec
        return spec

    def get(self, name: str) -> BackboneSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise RegistryError(
                f"unknown backbone {name!r}; known: {sorted(self._specs)}"
            ) from None

    def names(self) -> list[str]:
        return sorted(self._specs)

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def __iter__(self):
        return iter(self._specs.values())


def register_backbone(spec: BackboneSpec, registry: BackboneRegistry) -> BackboneSpec:
    """Register ``spec`` and return it as the retrieval handle."""
    return registry.register(spec)


def _vit(name, depth, width, heads, patch_grid, rule, *, mlp_ratio=4, **kw):
    return BackboneSpec(
        name=name,
        depth=depth,
        width=width,
        heads=heads,
        mlp_dim=width * mlp_ratio,
        patch_grid=patch_grid,
        feature_dim=expected_feature_dim(width, rule),
        embedding_rule=rule,
        **kw,
    )


def default_registry() -> BackboneRegistry:
    """Registry with the six published pathology models, the ImageNet
    baselines, and the toy family used for desk-scale runs.

    Published entries are metadata; set ``weights_source`` (and the
    normalization statistics published with the checkpoint) before use.
    """
    reg = BackboneRegistry()
    ct, cm = EmbeddingRule.CLASS_TOKEN, EmbeddingRule.CLASS_PLUS_MEAN_PATCH

    # Pathology foundation models (ViT-B/L/H/G geometries).
    reg.register(_vit("phikon", 12, 768, 12, 196, ct))
    reg.register(_vit("uni", 24, 1024, 16, 196, ct))
    reg.register(_vit("virchow", 32, 1280, 16, 256, cm))
    reg.register(_vit("virchow2", 32, 1280, 16, 256, cm))
    reg.register(_vit("h-optimus-0", 40, 1536, 24, 256, ct))
    reg.register(_vit("prov-gigapath", 40, 1536, 24, 196, ct))

    # ImageNet-pretrained baselines (conv entry exposes pooled features only).
    reg.register(_vit("vit-h-imagenet", 32, 1280, 16, 256, ct))
    reg.register(
        BackboneSpec(
            name="resnet50-imagenet",
            depth=4,
            width=2048,
            heads=1,
            mlp_dim=0,
            patch_grid=0,
            feature_dim=2048,
            embedding_rule=ct,
            family="conv",
        )
    )

    # Toy family: seeded random weights, first-class for tests and demos.
    reg.register(_vit("toy-vit", 2, 32, 4, 16, ct, mlp_ratio=2, weights_source="seed:17"))
    reg.register(
        _vit("toy-vit-mean", 2, 32, 4, 16, cm, mlp_ratio=2, weights_source="seed:17")
    )
    reg.register(
        _vit(
            "toy-vit-32",
            2,
            32,
            4,
            4,
            ct,
            mlp_ratio=2,
            input_size=32,
            weights_source="seed:17",
        )
    )
    reg.register(
        _vit(
            "toy-vit-wide",
            4,
            64,
            4,
            16,
            ct,
            mlp_ratio=2,
            weights_source="seed:23",
        )
    )
    reg.register(
        BackboneSpec(
            name="toy-conv",
            depth=3,
            width=32,
            heads=1,
            mlp_dim=0,
            patch_grid=0,
            feature_dim=32,
            embedding_rule=ct,
            input_size=32,
            family="conv",
            weights_source="seed:29",
        )
    )
    return reg
