import numpy as np
import pytest
import torch

from conftest import toy_spec
from mitobench.backbone.vit import build_backbone
from mitobench.backbone.weights import (
    init_parameters,
    load_archive,
    load_weights,
    save_archive,
    save_weights,
    state_checksum,
)
from mitobench.errors import IntegrityError, ValidationError


class TestArchive:
    def test_round_trip_bit_exact(self, tmp_path):
        tensors = {
            "a": np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32),
            "b": np.arange(6, dtype=np.float32).reshape(2, 3),
        }
        path = tmp_path / "t.mbt"
        save_archive(path, tensors, meta={"note": "x"})
        loaded, meta = load_archive(path)
        assert meta == {"note": "x"}
        for name, arr in tensors.items():
            assert np.array_equal(loaded[name], arr)
            assert loaded[name].dtype == np.float32

    def test_checksum_tamper_detected(self, tmp_path):
        path = tmp_path / "t.mbt"
        save_archive(path, {"w": np.ones((4, 4), dtype=np.float32)})
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(IntegrityError, match="checksum"):
            load_archive(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.mbt"
        path.write_bytes(b"NOTANARCHIVE")
        with pytest.raises(IntegrityError, match="magic"):
            load_archive(path)


class TestLoadWeights:
    def test_model_round_trip_bit_exact(self, tmp_path):
        spec = toy_spec()
        model = init_parameters(build_backbone(spec), 13)
        path = tmp_path / "w.mbt"
        save_weights(model, path)
        loaded = load_weights(spec, path)
        assert state_checksum(loaded) == state_checksum(model)

    def test_seeded_load_deterministic(self):
        spec = toy_spec()
        first = load_weights(spec, "seed:42")
        second = load_weights(spec, "seed:42")
        assert state_checksum(first) == state_checksum(second)
        third = load_weights(spec, "seed:43")
        assert state_checksum(third) != state_checksum(first)

    def test_loaded_model_frozen_inference_mode(self):
        model = load_weights(toy_spec(), "seed:1")
        assert not model.training
        assert all(not p.requires_grad for p in model.parameters())

    def test_missing_block_named(self, tmp_path):
        deep = init_parameters(build_backbone(toy_spec(name="deep", depth=3)), 1)
        path = tmp_path / "deep.mbt"
        save_weights(deep, path)
        shallow_spec = toy_spec(name="shallow", depth=2)
        with pytest.raises(ValidationError, match="blocks.2"):
            load_weights(shallow_spec, path)

        shallow = init_parameters(build_backbone(shallow_spec), 1)
        path2 = tmp_path / "shallow.mbt"
        save_weights(shallow, path2)
        with pytest.raises(ValidationError, match="blocks.2"):
            load_weights(toy_spec(name="deep2", depth=3), path2)

    def test_shape_mismatch_named(self, tmp_path):
        model = init_parameters(build_backbone(toy_spec()), 1)
        tensors = {
            name: p.detach().numpy() for name, p in model.state_dict().items()
        }
        tensors["norm.weight"] = np.zeros(64, dtype=np.float32)
        path = tmp_path / "bad.mbt"
        save_archive(path, tensors)
        with pytest.raises(ValidationError, match="shape mismatch for 'norm.weight'"):
            load_weights(toy_spec(), path)

    def test_name_map_adapter(self, tmp_path):
        model = init_parameters(build_backbone(toy_spec()), 3)
        tensors = {
            "foreign/" + name: p.detach().numpy() for name, p in model.state_dict().items()
        }
        path = tmp_path / "foreign.mbt"
        save_archive(path, tensors)
        name_map = {"foreign/" + name: name for name in model.state_dict()}
        spec = toy_spec(name="mapped", name_map=name_map)
        loaded = load_weights(spec, path)
        assert state_checksum(loaded) == state_checksum(model)

    def test_empty_source_rejected(self):
        spec = toy_spec(weights_source="")
        with pytest.raises(ValidationError, match="weights_source"):
            load_weights(spec)

    def test_checkpoint_restores_bit_exact(self, tmp_path):
        spec = toy_spec()
        model = load_weights(spec, "seed:2")
        path = tmp_path / "w.mbt"
        save_weights(model, path)
        reloaded = load_weights(spec, path)
        x = torch.randn(2, 3, 32, 32)
        assert torch.equal(model.embed(x), reloaded.embed(x))
