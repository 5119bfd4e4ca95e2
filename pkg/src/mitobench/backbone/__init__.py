from mitobench.backbone.spec import (
    BackboneRegistry,
    BackboneSpec,
    EmbeddingRule,
    default_registry,
    expected_feature_dim,
    register_backbone,
)
from mitobench.backbone.vit import (
    ConvBackbone,
    VisionTransformerBackbone,
    apply_embedding_rule,
    build_backbone,
    freeze,
)
from mitobench.backbone.weights import (
    init_parameters,
    load_archive,
    load_weights,
    save_archive,
    save_weights,
    state_checksum,
    state_tensors,
)

__all__ = [
    "BackboneRegistry",
    "BackboneSpec",
    "EmbeddingRule",
    "ConvBackbone",
    "VisionTransformerBackbone",
    "apply_embedding_rule",
    "build_backbone",
    "default_registry",
    "expected_feature_dim",
    "freeze",
    "init_parameters",
    "load_archive",
    "load_weights",
    "register_backbone",
    "save_archive",
    "save_weights",
    "state_checksum",
    "state_tensors",
]
