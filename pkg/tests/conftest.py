import numpy as np
import pytest
import torch

from mitobench.backbone.spec import BackboneSpec, EmbeddingRule, expected_feature_dim
from mitobench.backbone.weights import init_parameters, load_weights
from mitobench.backbone.vit import build_backbone, freeze
from mitobench.ingest.patches import PatchSpec
from mitobench.synthetic import intensity_dataset


def toy_spec(
    name="toy",
    depth=2,
    width=32,
    heads=4,
    mlp_dim=64,
    patch_grid=4,
    input_size=32,
    rule=EmbeddingRule.CLASS_TOKEN,
    **kw,
) -> BackboneSpec:
    kw.setdefault("weights_source", "seed:11")
    return BackboneSpec(
        name=name,
        depth=depth,
        width=width,
        heads=heads,
        mlp_dim=mlp_dim,
        patch_grid=patch_grid,
        input_size=input_size,
        feature_dim=expected_feature_dim(width, rule),
        embedding_rule=rule,
        **kw,
    )


def toy_backbone(seed=11, **kw):
    return freeze(init_parameters(build_backbone(toy_spec(**kw)), seed))


@pytest.fixture
def small_backbone():
    return toy_backbone()


@pytest.fixture
def tiny_dataset():
    """6-case intensity dataset with 48px images (for 32px patches)."""
    manifest, store = intensity_dataset(
        n_cases=6, images_per_case=2, annotations_per_image=2, image_size=48, seed=1
    )
    return manifest, store


@pytest.fixture
def tiny_patch_spec():
    return PatchSpec(size=32)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield


def rng(seed=0) -> np.random.Generator:
    return np.random.default_rng(seed)
