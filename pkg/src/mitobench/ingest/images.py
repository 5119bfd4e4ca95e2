"""Pluggable tile readers.

Everything downstream reads pixels through one contract:
``read_region(image_ref, x0, y0, w, h) -> H x W x 3 uint8`` plus
``dimensions(image_ref) -> (width, height)``. Whole-image files and
in-memory arrays are provided; tiled slide formats can implement the
same protocol.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from mitobench.errors import ValidationError

IMAGE_ROOT_ENV = "MITOBENCH_IMAGE_ROOT"


@runtime_checkable
class ImageStore(Protocol):
    def read_region(self, image_ref: str, x0: int, y0: int, w: int, h: int) -> np.ndarray: ...

    def dimensions(self, image_ref: str) -> tuple[int, int]: ...


def _check_window(ref: str, x0: int, y0: int, w: int, h: int, width: int, height: int) -> None:
    if w <= 0 or h <= 0:
        raise ValidationError(f"{ref}: window size must be positive, got {w}x{h}")
    if x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
        raise ValidationError(
            f"{ref}: window ({x0},{y0})+{w}x{h} outside image {width}x{height}"
        )


class ArrayImageStore:
    """In-memory store over H x W x 3 uint8 arrays, keyed by name."""

    def __init__(self, images: dict[str, np.ndarray] | None = None):
        self._images: dict[str, np.ndarray] = {}
        for name, arr in (images or {}).items():
            self.add(name, arr)

    def add(self, name: str, arr: np.ndarray) -> None:
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValidationError(f"{name}: expected H x W x 3 uint8, got {arr.shape} {arr.dtype}")
        self._images[name] = arr

    def refs(self) -> list[str]:
        return sorted(self._images)

    def dimensions(self, image_ref: str) -> tuple[int, int]:
        arr = self._get(image_ref)
        return arr.shape[1], arr.shape[0]

    def read_region(self, image_ref: str, x0: int, y0: int, w: int, h: int) -> np.ndarray:
        arr = self._get(image_ref)
        _check_window(image_ref, x0, y0, w, h, arr.shape[1], arr.shape[0])
        return arr[y0 : y0 + h, x0 : x0 + w].copy()

    def _get(self, ref: str) -> np.ndarray:
        try:
            return self._images[ref]
        except KeyError:
            raise ValidationError(f"unknown image_ref {ref!r}") from None


class FileImageStore:
    """Whole-image files under a root directory, decoded via Pillow.

    The root defaults to the MITOBENCH_IMAGE_ROOT environment variable.
    Decoded arrays are cached; suits ROI-sized images, not giant WSIs.
    """

    def __init__(self, root: str | Path | None = None, cache_size: int = 8):
        if root is None:
            root = os.environ.get(IMAGE_ROOT_ENV)
        if not root:
            raise ValidationError(
                f"no image root: pass one or set {IMAGE_ROOT_ENV}"
            )
        self.root = Path(root)
        if not self.root.is_dir():
            raise ValidationError(f"image root {self.root} is not a directory")
        self._cache: dict[str, np.ndarray] = {}
        self._cache_size = cache_size

    def _load(self, image_ref: str) -> np.ndarray:
        if image_ref in self._cache:
            return self._cache[image_ref]
        from PIL import Image

        path = self.root / image_ref
        if not path.is_file():
            raise ValidationError(f"image file not found: {path}")
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[image_ref] = arr
        return arr

    def dimensions(self, image_ref: str) -> tuple[int, int]:
        arr = self._load(image_ref)
        return arr.shape[1], arr.shape[0]

    def read_region(self, image_ref: str, x0: int, y0: int, w: int, h: int) -> np.ndarray:
        arr = self._load(image_ref)
        _check_window(image_ref, x0, y0, w, h, arr.shape[1], arr.shape[0])
        return arr[y0 : y0 + h, x0 : x0 + w].copy()
