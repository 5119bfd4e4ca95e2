"""Synthetic datasets for desk-scale runs.

``intensity_dataset`` builds images whose patch label is a threshold on
mean channel intensity (bright images carry mitotic-figure annotations,
dark images hard negatives), which a working training loop must learn.
``random_manifest`` builds annotation manifests without pixels for
split-plan properties. ``write_demo_source`` materializes a small
COCO-style source tree on disk for the CLI walkthrough.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from mitobench.ingest.images import ArrayImageStore
from mitobench.ingest.manifest import AnnotationRecord, DatasetManifest, Label


def intensity_dataset(
    n_cases: int = 6,
    images_per_case: int = 2,
    annotations_per_image: int = 2,
    image_size: int = 256,
    domains=("A",),
    seed: int = 0,
    bright: float = 170.0,
    dark: float = 80.0,
    noise: float = 18.0,
    name: str = "synthetic-intensity",
) -> tuple[DatasetManifest, ArrayImageStore]:
    rng = np.random.default_rng(seed)
    store = ArrayImageStore()
    records = []
    dims = {}
    for case_idx in range(n_cases):
        case_id = f"case{case_idx:03d}"
        domain = domains[case_idx % len(domains)]
        for img_idx in range(images_per_case):
            ref = f"{case_id}_img{img_idx}.png"
            is_bright = (case_idx * images_per_case + img_idx) % 2 == 0
            base = bright if is_bright else dark
            pixels = np.clip(
                rng.normal(base, noise, size=(image_size, image_size, 3)), 0, 255
            ).astype(np.uint8)
            store.add(ref, pixels)
            dims[ref] = (image_size, image_size)
            label = Label.MITOTIC_FIGURE if is_bright else Label.HARD_NEGATIVE
            for ann_idx in range(annotations_per_image):
                records.append(
                    AnnotationRecord(
                        annotation_id=f"{case_id}_i{img_idx}_a{ann_idx}",
                        case_id=case_id,
                        domain=domain,
                        image_ref=ref,
                        x=int(rng.integers(0, image_size)),
                        y=int(rng.integers(0, image_size)),
                        label=label,
                    )
                )
    manifest = DatasetManifest(name=name, records=records, image_dims=dims)
    manifest.validate()
    return manifest, store


def random_manifest(
    n_cases: int = 10,
    n_annotations: int = 400,
    domains=("A", "B"),
    image_size: int = 1024,
    positive_ratio: float = 0.6,
    seed: int = 0,
    name: str = "synthetic-random",
) -> DatasetManifest:
    """Pixel-free manifest with random case sizes and label mix."""
    rng = np.random.default_rng(seed)
    cases = [f"case{i:03d}" for i in range(n_cases)]
    case_domain = {c: domains[i % len(domains)] for i, c in enumerate(cases)}
    weights = rng.dirichlet(np.ones(n_cases))
    assignments = rng.choice(n_cases, size=n_annotations, p=weights)
    records = []
    dims = {}
    for i, case_idx in enumerate(assignments):
        case_id = cases[case_idx]
        ref = f"{case_id}.png"
        dims[ref] = (image_size, image_size)
        label = Label.MITOTIC_FIGURE if rng.random() < positive_ratio else Label.HARD_NEGATIVE
        records.append(
            AnnotationRecord(
                annotation_id=f"ann{i:06d}",
                case_id=case_id,
                domain=case_domain[case_id],
                image_ref=ref,
                x=int(rng.integers(0, image_size)),
                y=int(rng.integers(0, image_size)),
                label=label,
            )
        )
    manifest = DatasetManifest(name=name, records=records, image_dims=dims)
    manifest.validate()
    return manifest


def write_demo_source(
    out_dir: str | Path,
    n_cases: int = 6,
    images_per_case: int = 2,
    annotations_per_image: int = 3,
    image_size: int = 256,
    domains=("A", "B"),
    seed: int = 0,
) -> tuple[Path, Path]:
    """Write PNG images plus a COCO-style annotation file and a mapping
    config; returns (source_json, mapping_json) paths."""
    from PIL import Image

    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    manifest, store = intensity_dataset(
        n_cases=n_cases,
        images_per_case=images_per_case,
        annotations_per_image=annotations_per_image,
        image_size=image_size,
        domains=domains,
        seed=seed,
    )
    image_ids = {ref: i for i, ref in enumerate(store.refs())}
    images = []
    for ref, image_id in image_ids.items():
        arr = store.read_region(ref, 0, 0, image_size, image_size)
        Image.fromarray(arr).save(image_dir / ref)
        case_id = ref.rsplit("_img", 1)[0]
        rec = next(r for r in manifest.records if r.image_ref == ref)
        images.append(
            {
                "id": image_id,
                "file_name": ref,
                "width": image_size,
                "height": image_size,
                "case": case_id,
                "tumor_domain": rec.domain,
            }
        )
    annotations = [
        {
            "id": rec.annotation_id,
            "image_id": image_ids[rec.image_ref],
            "category_id": 1 if rec.label is Label.MITOTIC_FIGURE else 2,
            "bbox": [rec.x - 25, rec.y - 25, 50, 50],
        }
        for rec in manifest.records
    ]
    source = {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": 1, "name": "mitotic figure"},
            {"id": 2, "name": "hard negative"},
        ],
    }
    source_path = out_dir / "annotations.json"
    source_path.write_text(json.dumps(source, indent=2), encoding="utf-8")
    mapping = {
        "format": "coco",
        "category_map": {"1": "MITOTIC_FIGURE", "2": "HARD_NEGATIVE"},
        "case_field": "case",
        "domain_field": "tumor_domain",
        "name": "demo",
        "image_root": str(image_dir),
    }
    mapping_path = out_dir / "mapping.json"
    mapping_path.write_text(json.dumps(mapping, indent=2), encoding="utf-8")
    return source_path, mapping_path


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python -m mitobench.synthetic",
        description="Write a small synthetic COCO-style dataset for CLI demos.",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--cases", type=int, default=6)
    parser.add_argument("--images-per-case", type=int, default=2)
    parser.add_argument("--image-size", type=int, default=256)
    parser.add_argument("--domains", default="A,B")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    source, mapping = write_demo_source(
        args.out,
        n_cases=args.cases,
        images_per_case=args.images_per_case,
        image_size=args.image_size,
        domains=tuple(args.domains.split(",")),
        seed=args.seed,
    )
    print(f"source:  {source}")
    print(f"mapping: {mapping}")
    print(f"images:  {Path(args.out) / 'images'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
