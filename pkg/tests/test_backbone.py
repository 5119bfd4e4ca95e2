import numpy as np
import pytest
import torch

from conftest import toy_backbone, toy_spec
from mitobench.backbone.spec import (
    BackboneRegistry,
    BackboneSpec,
    EmbeddingRule,
    default_registry,
    expected_feature_dim,
    register_backbone,
)
from mitobench.backbone.vit import ConvBackbone, apply_embedding_rule, build_backbone
from mitobench.backbone.weights import init_parameters
from mitobench.errors import RegistryError, UnsupportedModeError, ValidationError
from mitobench.ingest.patches import PatchSpec, normalize


class TestSpecValidation:
    def test_class_plus_mean_doubles_width(self):
        spec = BackboneSpec(
            name="v",
            depth=32,
            width=1280,
            heads=16,
            mlp_dim=5120,
            patch_grid=256,
            feature_dim=2560,
            embedding_rule=EmbeddingRule.CLASS_PLUS_MEAN_PATCH,
        )
        assert spec.feature_dim == 2560

    def test_class_token_keeps_width(self):
        spec = BackboneSpec(
            name="p",
            depth=12,
            width=768,
            heads=12,
            mlp_dim=3072,
            patch_grid=196,
            feature_dim=768,
            embedding_rule=EmbeddingRule.CLASS_TOKEN,
        )
        assert spec.feature_dim == 768

    def test_inconsistent_feature_dim_rejected(self):
        with pytest.raises(ValidationError, match="feature_dim"):
            BackboneSpec(
                name="bad",
                depth=2,
                width=32,
                heads=4,
                mlp_dim=64,
                patch_grid=4,
                feature_dim=32,
                embedding_rule=EmbeddingRule.CLASS_PLUS_MEAN_PATCH,
            )

    def test_width_not_divisible_by_heads_rejected(self):
        with pytest.raises(ValidationError, match="width"):
            toy_spec(width=30, heads=4, rule=EmbeddingRule.CLASS_TOKEN)

    def test_norm_stats_validated(self):
        with pytest.raises(ValidationError, match="norm_std"):
            toy_spec(norm_std=(0.0, 0.2, 0.2))
        with pytest.raises(ValidationError, match="norm_mean"):
            toy_spec(norm_mean=(0.5, 0.5))

    def test_non_square_patch_grid_rejected(self):
        with pytest.raises(ValidationError, match="patch_grid"):
            toy_spec(patch_grid=5)


class TestRegistry:
    def test_duplicate_name_rejected(self):
        reg = BackboneRegistry()
        register_backbone(toy_spec(name="a"), reg)
        with pytest.raises(RegistryError, match="already registered"):
            register_backbone(toy_spec(name="a"), reg)

    def test_unknown_name(self):
        reg = BackboneRegistry()
        with pytest.raises(RegistryError, match="unknown"):
            reg.get("missing")

    def test_default_registry_published_dims(self):
        reg = default_registry()
        assert reg.get("phikon").feature_dim == 768
        assert reg.get("uni").feature_dim == 1024
        assert reg.get("virchow").feature_dim == 2560
        assert reg.get("virchow2").feature_dim == 2560
        assert reg.get("h-optimus-0").feature_dim == 1536
        assert reg.get("prov-gigapath").feature_dim == 1536
        assert reg.get("virchow").embedding_rule is EmbeddingRule.CLASS_PLUS_MEAN_PATCH
        assert reg.get("virchow").patch_grid == 256
        assert reg.get("phikon").embedding_rule is EmbeddingRule.CLASS_TOKEN

    def test_every_entry_consistent(self):
        for spec in default_registry():
            assert spec.feature_dim == expected_feature_dim(spec.width, spec.embedding_rule)


class TestForward:
    def test_token_shape(self, small_backbone):
        x = torch.randn(3, 3, 32, 32)
        tokens = small_backbone.forward_tokens(x)
        assert tuple(tokens.shape) == (3, 5, 32)  # 1 + P=4 tokens

    def test_zero_image_finite(self, small_backbone):
        tokens = small_backbone.forward_tokens(torch.zeros(2, 3, 32, 32))
        assert torch.isfinite(tokens).all()

    def test_duplicated_inputs_identical_rows(self, small_backbone):
        x = torch.randn(1, 3, 32, 32)
        batch = torch.cat([x, x], dim=0)
        emb = small_backbone.embed(batch)
        assert torch.equal(emb[0], emb[1])

    def test_embed_pure_function(self, small_backbone):
        x = torch.randn(4, 3, 32, 32)
        assert torch.equal(small_backbone.embed(x), small_backbone.embed(x))

    def test_shape_mismatch_rejected(self, small_backbone):
        with pytest.raises(ValidationError, match="expected image batch"):
            small_backbone.embed(torch.randn(2, 3, 16, 16))

    def test_normalized_pixel_range_stays_finite(self, small_backbone):
        spec = PatchSpec(size=32)
        raw = np.random.default_rng(0).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        x = torch.from_numpy(normalize(raw, spec).astype(np.float32)).unsqueeze(0)
        assert torch.isfinite(small_backbone.forward_tokens(x)).all()


class TestEmbeddingRule:
    def test_constant_tokens_concatenation(self):
        # class token forced to c0, patches to c1 -> row = [c0 || c1]
        c0 = torch.full((1, 1, 4), 2.5)
        c1 = torch.full((1, 3, 4), -1.5)
        tokens = torch.cat([c0, c1], dim=1)
        out = apply_embedding_rule(tokens, EmbeddingRule.CLASS_PLUS_MEAN_PATCH)
        assert torch.equal(out, torch.cat([c0[:, 0], c1[:, 0]], dim=-1))

    def test_class_token_selection(self):
        c0 = torch.full((1, 1, 4), 2.5)
        c1 = torch.full((1, 3, 4), -1.5)
        tokens = torch.cat([c0, c1], dim=1)
        out = apply_embedding_rule(tokens, EmbeddingRule.CLASS_TOKEN)
        assert torch.equal(out, c0[:, 0])

    def test_mean_rule_prefix_equals_class_rule(self):
        ct = toy_backbone(name="ct", patch_grid=16, rule=EmbeddingRule.CLASS_TOKEN)
        cm = toy_backbone(name="cm", patch_grid=16, rule=EmbeddingRule.CLASS_PLUS_MEAN_PATCH)
        x = torch.randn(2, 3, 32, 32)
        full = cm.embed(x)
        assert full.shape[-1] == 64
        assert torch.equal(full[:, :32], ct.embed(x))

    def test_feature_dim_matches_spec(self, small_backbone):
        x = torch.randn(2, 3, 32, 32)
        assert small_backbone.embed(x).shape[-1] == small_backbone.spec.feature_dim


class TestRegisterTokens:
    def test_registers_excluded_from_output(self):
        backbone = toy_backbone(name="reg", reg_tokens=3)
        x = torch.randn(2, 3, 32, 32)
        tokens = backbone.forward_tokens(x)
        assert tuple(tokens.shape) == (2, 5, 32)  # registers dropped

    def test_register_values_do_not_enter_patch_mean(self):
        backbone = toy_backbone(name="reg2", reg_tokens=2, rule=EmbeddingRule.CLASS_PLUS_MEAN_PATCH)
        x = torch.randn(1, 3, 32, 32)
        tokens = backbone.forward_tokens(x)
        emb = backbone.embed(x)
        assert torch.equal(emb[:, 32:], tokens[:, 1:].mean(dim=1))


class TestConvBackbone:
    def make(self):
        spec = BackboneSpec(
            name="conv",
            depth=3,
            width=32,
            heads=1,
            mlp_dim=0,
            patch_grid=0,
            feature_dim=32,
            embedding_rule=EmbeddingRule.CLASS_TOKEN,
            input_size=32,
            family="conv",
        )
        return init_parameters(build_backbone(spec), 5)

    def test_pooled_embedding(self):
        backbone = self.make()
        x = torch.randn(4, 3, 32, 32)
        assert backbone.embed(x).shape == (4, 32)

    def test_no_token_tensor(self):
        with pytest.raises(UnsupportedModeError, match="no token tensor"):
            self.make().forward_tokens(torch.randn(1, 3, 32, 32))
