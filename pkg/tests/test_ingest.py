import json

import numpy as np
import pytest

from mitobench.errors import ValidationError
from mitobench.ingest.augment import AugmentPolicy, augment
from mitobench.ingest.images import ArrayImageStore, FileImageStore
from mitobench.ingest.manifest import (
    AnnotationRecord,
    Label,
    import_manifest,
    load_manifest,
    save_manifest,
)
from mitobench.ingest.patches import (
    PatchSpec,
    denormalize,
    extract_patch,
    normalize,
    patch_window,
    sample_random_patch,
)
from mitobench.synthetic import intensity_dataset


def coco_source(n_images, per_image_mf, per_image_hn, width=4000, height=4000):
    """COCO-style dict with exact per-label counts, valid coordinates."""
    images, annotations = [], []
    ann_id = 0
    rng = np.random.default_rng(0)
    for i in range(n_images):
        images.append({"id": i, "file_name": f"img{i:04d}.tiff", "width": width, "height": height})
        for cat, count in ((1, per_image_mf(i)), (2, per_image_hn(i))):
            for _ in range(count):
                x = int(rng.integers(60, width - 60))
                y = int(rng.integers(60, height - 60))
                annotations.append(
                    {"id": ann_id, "image_id": i, "category_id": cat, "bbox": [x - 25, y - 25, 50, 50]}
                )
                ann_id += 1
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "mitotic figure"}, {"id": 2, "name": "hard negative"}],
    }


MAPPING = {
    "format": "coco",
    "category_map": {"1": "MITOTIC_FIGURE", "2": "HARD_NEGATIVE"},
}


def split_counts(total, n):
    base, extra = divmod(total, n)
    return lambda i: base + (1 if i < extra else 0)


class TestImport:
    def test_midog_scale_counts(self):
        source = coco_source(354, split_counts(11051, 354), split_counts(9501, 354))
        manifest, report = import_manifest(source, MAPPING, name="midog2022")
        assert report.label_counts == {"MITOTIC_FIGURE": 11051, "HARD_NEGATIVE": 9501}
        assert len({r.image_ref for r in manifest.records}) == 354
        assert report.total == 20552

    def test_ccmct_scale_counts(self):
        source = coco_source(32, split_counts(44880, 32), split_counts(27965, 32))
        manifest, report = import_manifest(source, MAPPING, name="ccmct")
        assert report.label_counts == {"MITOTIC_FIGURE": 44880, "HARD_NEGATIVE": 27965}
        assert len(manifest.cases()) == 32

    def test_empty_source(self):
        manifest, report = import_manifest(
            {"images": [], "annotations": [], "categories": []}, MAPPING
        )
        assert report.total == 0
        assert manifest.records == []

    def test_unmapped_category_rejected(self):
        source = coco_source(1, lambda i: 1, lambda i: 0)
        source["annotations"][0]["category_id"] = 9
        with pytest.raises(ValidationError, match="unmapped category"):
            import_manifest(source, MAPPING)

    def test_duplicate_annotation_id_rejected(self):
        source = coco_source(1, lambda i: 2, lambda i: 0)
        source["annotations"][1]["id"] = source["annotations"][0]["id"]
        with pytest.raises(ValidationError, match="duplicate"):
            import_manifest(source, MAPPING)

    def test_out_of_bounds_quarantined(self):
        source = coco_source(1, lambda i: 2, lambda i: 1)
        source["annotations"][0]["bbox"] = [5000, 5000, 50, 50]
        manifest, report = import_manifest(source, MAPPING)
        assert len(report.quarantined) == 1
        assert report.total == 2

    def test_domain_and_case_fields(self):
        source = coco_source(2, lambda i: 1, lambda i: 1)
        for img in source["images"]:
            img["case"] = f"case{img['id']}"
            img["tumor"] = "B"
        mapping = dict(MAPPING, case_field="case", domain_field="tumor")
        manifest, _ = import_manifest(source, mapping)
        assert manifest.domains() == ["B"]
        assert manifest.cases() == ["case0", "case1"]

    def test_table_import(self, tmp_path):
        csv_path = tmp_path / "rows.csv"
        csv_path.write_text(
            "id,slide,tumor,file,cx,cy,cls,w,h\n"
            "a1,s1,A,s1.png,100,200,mf,1000,1000\n"
            "a2,s1,A,s1.png,300,400,neg,1000,1000\n"
        )
        mapping = {
            "format": "table",
            "columns": {
                "annotation_id": "id",
                "case_id": "slide",
                "domain": "tumor",
                "image_ref": "file",
                "x": "cx",
                "y": "cy",
                "label": "cls",
                "width": "w",
                "height": "h",
            },
            "label_map": {"mf": "MITOTIC_FIGURE", "neg": "HARD_NEGATIVE"},
        }
        manifest, report = import_manifest(csv_path, mapping)
        assert report.total == 2
        assert manifest.records[0].label is Label.MITOTIC_FIGURE
        assert manifest.image_dims["s1.png"] == (1000, 1000)

    def test_manifest_round_trip(self, tmp_path):
        source = coco_source(3, lambda i: 2, lambda i: 2)
        manifest, _ = import_manifest(source, MAPPING, name="rt")
        path = tmp_path / "m.jsonl"
        save_manifest(manifest, path)
        again = load_manifest(path)
        assert [r.to_json() for r in again.records] == [r.to_json() for r in manifest.records]
        assert again.name == "rt"
        assert again.image_dims == manifest.image_dims
        # every line is a record object with exactly the record fields
        for line in path.read_text().splitlines():
            obj = json.loads(line)
            assert set(obj) == {
                "annotation_id", "case_id", "domain", "image_ref", "x", "y",
                "label", "schema_version",
            }


def record(x, y, ref="img", label=Label.MITOTIC_FIGURE, ann="a0"):
    return AnnotationRecord(
        annotation_id=ann, case_id="c0", domain="A", image_ref=ref, x=x, y=y, label=label
    )


class TestExtractPatch:
    def test_centered_window(self):
        assert patch_window(5000, 5000, 224, 10000, 10000) == (4888, 4888)

    def test_shifted_window(self):
        x0, y0 = patch_window(50, 5000, 224, 10000, 10000)
        assert (x0, y0) == (0, 4888)
        # annotation offset inside the window
        assert (50 - x0, 5000 - y0) == (50, 112)

    def test_too_small_image(self):
        with pytest.raises(ValidationError, match="smaller than patch"):
            patch_window(100, 100, 224, 200, 200)

    def test_window_contains_center_property(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            size = 224
            w = int(rng.integers(size, 2000))
            h = int(rng.integers(size, 2000))
            x = int(rng.integers(0, w))
            y = int(rng.integers(0, h))
            x0, y0 = patch_window(x, y, size, w, h)
            assert 0 <= x0 and x0 + size <= w
            assert 0 <= y0 and y0 + size <= h
            assert x0 <= x < x0 + size
            assert y0 <= y < y0 + size

    def test_pixels_match_source(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(300, 280, 3), dtype=np.uint8)
        store = ArrayImageStore({"img": img})
        spec = PatchSpec(size=224)
        patch = extract_patch(store, record(10, 150), spec)
        assert patch.shape == (224, 224, 3)
        assert np.array_equal(patch, img[38:262, 0:224])


class TestRandomPatch:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.img = rng.integers(0, 256, size=(400, 400, 3), dtype=np.uint8)
        self.store = ArrayImageStore({"img": self.img})
        self.spec = PatchSpec(size=224)

    def test_no_annotations_first_try(self):
        pixels, rec = sample_random_patch(
            self.store, "img", [], self.spec, np.random.default_rng(0)
        )
        assert pixels.shape == (224, 224, 3)
        assert not rec.relaxed

    def test_saturated_image_relaxes(self):
        img = np.zeros((224, 224, 3), dtype=np.uint8)
        store = ArrayImageStore({"one": img})
        mf = [record(112, 112, ref="one")]
        pixels, rec = sample_random_patch(store, "one", mf, self.spec, np.random.default_rng(0))
        assert rec.relaxed
        assert pixels.shape == (224, 224, 3)

    def test_seeded_determinism(self):
        p1, r1 = sample_random_patch(self.store, "img", [], self.spec, np.random.default_rng(5))
        p2, r2 = sample_random_patch(self.store, "img", [], self.spec, np.random.default_rng(5))
        assert np.array_equal(p1, p2)
        assert r1 == r2

    def test_exclusion_distance_respected(self):
        mf = [record(200, 200)]
        for seed in range(20):
            _, rec = sample_random_patch(
                self.store, "img", mf, self.spec, np.random.default_rng(seed)
            )
            if not rec.relaxed:
                dist = np.hypot(rec.x - 200, rec.y - 200)
                assert dist >= 25


class TestNormalize:
    def test_unit_transform(self):
        spec = PatchSpec(size=2, norm_mean=(0, 0, 0), norm_std=(1, 1, 1))
        patch = np.full((2, 2, 3), 255, dtype=np.uint8)
        out = normalize(patch, spec)
        assert out.shape == (3, 2, 2)
        assert np.allclose(out, 1.0)

    def test_centering(self):
        spec = PatchSpec(size=2, norm_mean=(0.5, 0.5, 0.5), norm_std=(0.5, 0.5, 0.5))
        patch = np.full((2, 2, 3), 127.5)
        assert np.allclose(normalize(patch, spec), 0.0)

    def test_round_trip(self):
        spec = PatchSpec(size=8)
        patch = np.random.default_rng(0).integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        back = denormalize(normalize(patch, spec), spec)
        assert np.abs(back - patch).max() <= 1e-6


class TestAugment:
    def setup_method(self):
        self.patch = np.random.default_rng(2).integers(0, 256, size=(64, 64, 3), dtype=np.uint8)

    def test_identity_policy_bit_exact(self):
        out = augment(self.patch, np.random.default_rng(0), AugmentPolicy.identity())
        assert np.array_equal(out, self.patch)
        assert out.dtype == np.uint8

    def test_hflip_involution(self):
        policy = AugmentPolicy(p_hflip=1.0, p_vflip=0.0, p_rotate=0.0, p_jitter=0.0, p_blur=0.0)
        once = augment(self.patch, np.random.default_rng(0), policy)
        twice = augment(once, np.random.default_rng(0), policy)
        assert np.array_equal(twice, self.patch)

    def test_seeded_determinism(self):
        policy = AugmentPolicy()
        a = augment(self.patch, np.random.default_rng(9), policy)
        b = augment(self.patch, np.random.default_rng(9), policy)
        assert np.array_equal(a, b)

    def test_shape_and_range_preserved(self):
        policy = AugmentPolicy(p_jitter=1.0, p_blur=1.0, brightness=0.5, contrast=0.5)
        out = augment(self.patch, np.random.default_rng(4), policy)
        assert out.shape == self.patch.shape
        assert out.dtype == np.uint8

    def test_rotation_changes_layout(self):
        policy = AugmentPolicy(p_hflip=0.0, p_vflip=0.0, p_rotate=1.0, p_jitter=0.0, p_blur=0.0)
        outs = {augment(self.patch, np.random.default_rng(s), policy).tobytes() for s in range(8)}
        assert len(outs) > 1


class TestStores:
    def test_file_store_matches_array_store(self, tmp_path):
        from PIL import Image

        manifest, store = intensity_dataset(n_cases=2, image_size=64, seed=0)
        root = tmp_path / "imgs"
        root.mkdir()
        for ref in store.refs():
            Image.fromarray(store.read_region(ref, 0, 0, 64, 64)).save(root / ref)
        file_store = FileImageStore(root)
        ref = store.refs()[0]
        assert file_store.dimensions(ref) == store.dimensions(ref)
        assert np.array_equal(
            file_store.read_region(ref, 4, 8, 32, 16), store.read_region(ref, 4, 8, 32, 16)
        )

    def test_env_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MITOBENCH_IMAGE_ROOT", str(tmp_path))
        store = FileImageStore()
        assert store.root == tmp_path

    def test_missing_root_rejected(self, monkeypatch):
        monkeypatch.delenv("MITOBENCH_IMAGE_ROOT", raising=False)
        with pytest.raises(ValidationError, match="MITOBENCH_IMAGE_ROOT"):
            FileImageStore()

    def test_window_bounds_checked(self):
        store = ArrayImageStore({"a": np.zeros((50, 50, 3), dtype=np.uint8)})
        with pytest.raises(ValidationError, match="outside image"):
            store.read_region("a", 40, 40, 20, 20)
