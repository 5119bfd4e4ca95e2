"""Canonical annotation manifest and importers.

The canonical on-disk form is line-delimited UTF-8 JSON: one object per
record carrying exactly the AnnotationRecord fields plus schema_version.
Manifest-level metadata (name, image root, per-image dimensions) lives
in a ``<stem>.meta.json`` sidecar so record lines stay uniform.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from mitobench.errors import ValidationError

SCHEMA_VERSION = 1


class Label(Enum):
    MITOTIC_FIGURE = "MITOTIC_FIGURE"
    HARD_NEGATIVE = "HARD_NEGATIVE"


@dataclass(frozen=True)
class AnnotationRecord:
    """One labeled point anchored to a case, domain, and image location."""

    annotation_id: str
    case_id: str
    domain: str
    image_ref: str
    x: int
    y: int
    label: Label

    def __post_init__(self):
        if not self.annotation_id:
            raise ValidationError("annotation_id: must be nonempty")
        if not self.case_id:
            raise ValidationError(f"{self.annotation_id}: case_id must be nonempty")
        object.__setattr__(self, "label", Label(self.label))

    def to_json(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "case_id": self.case_id,
            "domain": self.domain,
            "image_ref": self.image_ref,
            "x": self.x,
            "y": self.y,
            "label": self.label.value,
            "schema_version": SCHEMA_VERSION,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotationRecord":
        return cls(
            annotation_id=str(obj["annotation_id"]),
            case_id=str(obj["case_id"]),
            domain=str(obj["domain"]),
            image_ref=str(obj["image_ref"]),
            x=int(obj["x"]),
            y=int(obj["y"]),
            label=Label(obj["label"]),
        )


@dataclass
class DatasetManifest:
    name: str
    records: list[AnnotationRecord] = field(default_factory=list)
    image_root: str = ""
    image_dims: dict[str, tuple[int, int]] = field(default_factory=dict)

    def validate(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.annotation_id in seen:
                raise ValidationError(f"duplicate annotation_id {rec.annotation_id!r}")
            seen.add(rec.annotation_id)
            dims = self.image_dims.get(rec.image_ref)
            if dims is not None:
                w, h = dims
                if not (0 <= rec.x < w and 0 <= rec.y < h):
                    raise ValidationError(
                        f"{rec.annotation_id}: center ({rec.x},{rec.y}) outside "
                        f"image {rec.image_ref} of size {w}x{h}"
                    )

    def cases(self) -> list[str]:
        return sorted({r.case_id for r in self.records})

    def domains(self) -> list[str]:
        return sorted({r.domain for r in self.records})

    def label_counts(self) -> dict[str, int]:
        return dict(Counter(r.label.value for r in self.records))

    def case_annotation_counts(self) -> dict[str, int]:
        counts: dict[str, int] = defaultdict(int)
        for r in self.records:
            counts[r.case_id] += 1
        return dict(counts)

    def records_for_cases(self, case_ids) -> list[AnnotationRecord]:
        wanted = set(case_ids)
        return [r for r in self.records if r.case_id in wanted]

    def records_for_domain(self, domain: str) -> list[AnnotationRecord]:
        return [r for r in self.records if r.domain == domain]

    def by_image(self) -> dict[str, list[AnnotationRecord]]:
        grouped: dict[str, list[AnnotationRecord]] = defaultdict(list)
        for r in self.records:
            grouped[r.image_ref].append(r)
        return dict(grouped)


@dataclass
class ImportReport:
    total: int = 0
    label_counts: dict[str, int] = field(default_factory=dict)
    domain_counts: dict[str, int] = field(default_factory=dict)
    case_counts: dict[str, int] = field(default_factory=dict)
    quarantined: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"imported {self.total} records"]
        for label, count in sorted(self.label_counts.items()):
            lines.append(f"  {label}: {count}")
        lines.append(f"  domains: {len(self.domain_counts)}, cases: {len(self.case_counts)}")
        if self.quarantined:
            lines.append(f"  quarantined: {len(self.quarantined)}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def _meta_path(path: Path) -> Path:
    return path.with_suffix("").with_suffix(".meta.json") if path.suffix else path.with_name(path.name + ".meta.json")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    manifest.validate()
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "name": manifest.name,
        "image_root": manifest.image_root,
        "image_dims": {ref: list(dims) for ref, dims in sorted(manifest.image_dims.items())},
    }
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(AnnotationRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad record line ({exc})") from None
    name, image_root, image_dims = path.stem, "", {}
    meta_path = _meta_path(path)
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        name = meta.get("name", name)
        image_root = meta.get("image_root", "")
        image_dims = {ref: tuple(dims) for ref, dims in meta.get("image_dims", {}).items()}
    manifest = DatasetManifest(name=name, records=records, image_root=image_root, image_dims=image_dims)
    manifest.validate()
    return manifest


def _load_mapping(mapping) -> dict:
    if isinstance(mapping, (str, Path)):
        return json.loads(Path(mapping).read_text(encoding="utf-8"))
    return dict(mapping)


def import_manifest(source, mapping, name: str | None = None) -> tuple[DatasetManifest, ImportReport]:
    """Convert a supported source into a canonical manifest.

    Supported layouts: COCO-style JSON (``format: "coco"``) and delimited
    tables (``format: "table"``). The mapping config declares the
    category-to-label map and where case/domain identifiers live.
    Out-of-bounds records are quarantined and listed in the report;
    unmapped categories and duplicate ids are errors.
    """
    mapping = _load_mapping(mapping)
    fmt = mapping.get("format", "coco")
    if fmt == "coco":
        manifest, report = _import_coco(source, mapping)
    elif fmt == "table":
        manifest, report = _import_table(source, mapping)
    else:
        raise ValidationError(f"unsupported source format {fmt!r}")
    if name:
        manifest.name = name
    manifest.validate()
    return manifest, report


def _finish(manifest: DatasetManifest, report: ImportReport) -> None:
    report.total = len(manifest.records)
    report.label_counts = manifest.label_counts()
    report.domain_counts = dict(Counter(r.domain for r in manifest.records))
    report.case_counts = manifest.case_annotation_counts()


def _import_coco(source, mapping: dict) -> tuple[DatasetManifest, ImportReport]:
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
        default_name = Path(source).stem
    else:
        doc, default_name = source, "imported"
    category_map = {str(k): v for k, v in mapping.get("category_map", {}).items()}
    case_field = mapping.get("case_field")
    domain_field = mapping.get("domain_field")
    default_domain = mapping.get("default_domain", "A")

    categories = {str(c["id"]): c.get("name", str(c["id"])) for c in doc.get("categories", [])}
    images = {img["id"]: img for img in doc.get("images", [])}

    report = ImportReport()
    seen: set[str] = set()
    records: list[AnnotationRecord] = []
    image_dims: dict[str, tuple[int, int]] = {}
    for img in images.values():
        ref = img.get("file_name", str(img["id"]))
        if "width" in img and "height" in img:
            image_dims[ref] = (int(img["width"]), int(img["height"]))

    for ann in doc.get("annotations", []):
        ann_id = str(ann["id"])
        if ann_id in seen:
            raise ValidationError(f"duplicate annotation_id {ann_id!r} in source")
        seen.add(ann_id)
        cat_key = str(ann["category_id"])
        label_name = category_map.get(cat_key) or category_map.get(categories.get(cat_key, ""))
        if label_name is None:
            raise ValidationError(
                f"annotation {ann_id}: unmapped category {cat_key!r} "
                f"({categories.get(cat_key, 'unknown')!r})"
            )
        img = images.get(ann["image_id"])
        if img is None:
            report.quarantined.append({"annotation_id": ann_id, "reason": "unknown image_id"})
            continue
        ref = img.get("file_name", str(img["id"]))
        if "bbox" in ann:
            bx, by, bw, bh = ann["bbox"]
            x, y = int(round(bx + bw / 2)), int(round(by + bh / 2))
        else:
            x, y = int(ann["x"]), int(ann["y"])
        dims = image_dims.get(ref)
        if dims is not None and not (0 <= x < dims[0] and 0 <= y < dims[1]):
            report.quarantined.append(
                {"annotation_id": ann_id, "reason": f"center ({x},{y}) outside {dims[0]}x{dims[1]}"}
            )
            continue
        case_id = str(img.get(case_field)) if case_field and case_field in img else Path(ref).stem
        domain = str(img.get(domain_field)) if domain_field and domain_field in img else default_domain
        records.append(
            AnnotationRecord(
                annotation_id=ann_id,
                case_id=case_id,
                domain=domain,
                image_ref=ref,
                x=x,
                y=y,
                label=Label(label_name),
            )
        )

    manifest = DatasetManifest(
        name=mapping.get("name", default_name),
        records=records,
        image_root=mapping.get("image_root", ""),
        image_dims=image_dims,
    )
    _finish(manifest, report)
    return manifest, report


def _import_table(source, mapping: dict) -> tuple[DatasetManifest, ImportReport]:
    columns = mapping.get("columns")
    if not columns:
        raise ValidationError("table mapping needs a 'columns' declaration")
    label_map = {str(k): v for k, v in mapping.get("label_map", {}).items()}

    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh, delimiter=mapping.get("delimiter", ",")))
        default_name = Path(source).stem
    else:
        rows, default_name = list(source), "imported"

    report = ImportReport()
    seen: set[str] = set()
    records: list[AnnotationRecord] = []
    image_dims: dict[str, tuple[int, int]] = {
        ref: tuple(dims) for ref, dims in mapping.get("image_dims", {}).items()
    }
    width_col, height_col = columns.get("width"), columns.get("height")

    for i, row in enumerate(rows):
        ann_id = str(row[columns["annotation_id"]]) if "annotation_id" in columns else str(i)
        if ann_id in seen:
            raise ValidationError(f"duplicate annotation_id {ann_id!r} in source")
        seen.add(ann_id)
        raw_label = str(row[columns["label"]])
        label_name = label_map.get(raw_label, raw_label)
        try:
            label = Label(label_name)
        except ValueError:
            raise ValidationError(f"row {ann_id}: unmapped label {raw_label!r}") from None
        ref = str(row[columns["image_ref"]])
        x, y = int(float(row[columns["x"]])), int(float(row[columns["y"]]))
        if width_col and height_col and ref not in image_dims:
            image_dims[ref] = (int(row[width_col]), int(row[height_col]))
        dims = image_dims.get(ref)
        if dims is not None and not (0 <= x < dims[0] and 0 <= y < dims[1]):
            report.quarantined.append(
                {"annotation_id": ann_id, "reason": f"center ({x},{y}) outside {dims[0]}x{dims[1]}"}
            )
            continue
        records.append(
            AnnotationRecord(
                annotation_id=ann_id,
                case_id=str(row[columns["case_id"]]),
                domain=str(row[columns["domain"]]) if "domain" in columns else mapping.get("default_domain", "A"),
                image_ref=ref,
                x=x,
                y=y,
                label=label,
            )
        )
    if not image_dims:
        report.notes.append("no image dimensions declared; bounds checks deferred to extraction")

    manifest = DatasetManifest(
        name=mapping.get("name", default_name),
        records=records,
        image_root=mapping.get("image_root", ""),
        image_dims=image_dims,
    )
    _finish(manifest, report)
    return manifest, report
