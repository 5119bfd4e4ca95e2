"""Patch extraction and normalization.

Windows are centered on the annotation; when a window would leave the
image it is shifted minimally back inside (SHIFT_WINDOW), so every
returned pixel is real image content and the annotation center stays
inside the window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mitobench.backbone.spec import BackboneSpec
from mitobench.errors import ValidationError
from mitobench.ingest.images import ImageStore
from mitobench.ingest.manifest import AnnotationRecord, Label

RANDOM_PATCH_MIN_DISTANCE = 25
RANDOM_PATCH_MAX_TRIES = 100


@dataclass(frozen=True)
class PatchSpec:
    size: int = 224
    norm_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    norm_std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    border_policy: str = "SHIFT_WINDOW"

    def __post_init__(self):
        if self.size <= 0 or self.size % 2 != 0:
            raise ValidationError(f"size: must be even and positive, got {self.size}")
        if self.border_policy != "SHIFT_WINDOW":
            raise ValidationError(f"border_policy: unsupported {self.border_policy!r}")
        if any(s <= 0 for s in self.norm_std):
            raise ValidationError("norm_std: every channel std must be > 0")

    @classmethod
    def for_backbone(cls, spec: BackboneSpec) -> "PatchSpec":
        return cls(size=spec.input_size, norm_mean=spec.norm_mean, norm_std=spec.norm_std)


def patch_window(x: int, y: int, size: int, width: int, height: int) -> tuple[int, int]:
    """Origin of the size x size window for center (x, y), shifted to fit."""
    if width < size or height < size:
        raise ValidationError(
            f"image {width}x{height} smaller than patch size {size}"
        )
    half = size // 2
    x0 = min(max(x - half, 0), width - size)
    y0 = min(max(y - half, 0), height - size)
    return x0, y0


def extract_patch(store: ImageStore, record: AnnotationRecord, spec: PatchSpec) -> np.ndarray:
    """Raw size x size x 3 uint8 patch centered (shift-to-fit) on the record."""
    width, height = store.dimensions(record.image_ref)
    x0, y0 = patch_window(record.x, record.y, spec.size, width, height)
    return store.read_region(record.image_ref, x0, y0, spec.size, spec.size)


@dataclass(frozen=True)
class RandomPatchRecord:
    """Synthetic negative drawn from image background; training only."""

    image_ref: str
    x: int
    y: int
    relaxed: bool = False


def sample_random_patch(
    store: ImageStore,
    image_ref: str,
    records: list[AnnotationRecord],
    spec: PatchSpec,
    rng: np.random.Generator,
) -> tuple[np.ndarray, RandomPatchRecord]:
    """Uniform in-bounds window whose center keeps a minimum distance from
    every mitotic-figure center; rejection-sampled with a capped retry
    budget, then relaxed to the farthest candidate seen."""
    width, height = store.dimensions(image_ref)
    if width < spec.size or height < spec.size:
        raise ValidationError(
            f"{image_ref}: image {width}x{height} smaller than patch size {spec.size}"
        )
    half = spec.size // 2
    centers = [(r.x, r.y) for r in records if r.label is Label.MITOTIC_FIGURE]

    def min_distance(cx, cy):
        if not centers:
            return np.inf
        return min(((cx - mx) ** 2 + (cy - my) ** 2) ** 0.5 for mx, my in centers)

    best = None
    best_dist = -1.0
    for _ in range(RANDOM_PATCH_MAX_TRIES):
        x0 = int(rng.integers(0, width - spec.size + 1))
        y0 = int(rng.integers(0, height - spec.size + 1))
        cx, cy = x0 + half, y0 + half
        dist = min_distance(cx, cy)
        if dist >= RANDOM_PATCH_MIN_DISTANCE:
            pixels = store.read_region(image_ref, x0, y0, spec.size, spec.size)
            return pixels, RandomPatchRecord(image_ref, cx, cy, relaxed=False)
        if dist > best_dist:
            best, best_dist = (x0, y0), dist
    x0, y0 = best
    pixels = store.read_region(image_ref, x0, y0, spec.size, spec.size)
    return pixels, RandomPatchRecord(image_ref, x0 + half, y0 + half, relaxed=True)


def normalize(patch: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """uint8 H x W x 3 -> float64 3 x H x W, per-channel (p/255 - mean)/std."""
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"expected H x W x 3 patch, got shape {arr.shape}")
    mean = np.asarray(spec.norm_mean, dtype=np.float64).reshape(3, 1, 1)
    std = np.asarray(spec.norm_std, dtype=np.float64).reshape(3, 1, 1)
    chw = arr.astype(np.float64).transpose(2, 0, 1) / 255.0
    return (chw - mean) / std


def denormalize(tensor: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Inverse of normalize; returns H x W x 3 float64 pixels in [0, 255]."""
    mean = np.asarray(spec.norm_mean, dtype=np.float64).reshape(3, 1, 1)
    std = np.asarray(spec.norm_std, dtype=np.float64).reshape(3, 1, 1)
    chw = np.asarray(tensor, dtype=np.float64) * std + mean
    return chw.transpose(1, 2, 0) * 255.0
