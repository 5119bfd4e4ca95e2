"""Training-time patch augmentation: color jitter, Gaussian blur,
flips, and right-angle rotations. Never applied on the evaluation path
(enforced by the pipeline mode flag in the training module).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mitobench.errors import ValidationError

# ITU-R 601 luma weights for the saturation gray target.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentPolicy:
    """Transform probabilities and magnitude ranges.

    A policy with every probability at zero is the identity.
    """

    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_rotate: float = 1.0
    p_jitter: float = 1.0
    p_blur: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    free_angle: bool = False

    def __post_init__(self):
        for name in ("p_hflip", "p_vflip", "p_rotate", "p_jitter", "p_blur"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name}: probability must be in [0,1], got {p}")

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(p_hflip=0.0, p_vflip=0.0, p_rotate=0.0, p_jitter=0.0, p_blur=0.0)


def _jitter(x: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    if policy.brightness:
        x = x * rng.uniform(1 - policy.brightness, 1 + policy.brightness)
    if policy.contrast:
        mean = (x @ _LUMA).mean()
        x = mean + (x - mean) * rng.uniform(1 - policy.contrast, 1 + policy.contrast)
    if policy.saturation:
        gray = (x @ _LUMA)[..., None]
        x = gray + (x - gray) * rng.uniform(1 - policy.saturation, 1 + policy.saturation)
    if policy.hue:
        from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

        hsv = rgb_to_hsv(np.clip(x / 255.0, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + rng.uniform(-policy.hue, policy.hue)) % 1.0
        x = hsv_to_rgb(hsv) * 255.0
    return x


def augment(patch: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    """Seeded random augmentation of one uint8 H x W x 3 patch.

    Shape is preserved; pixel values are clamped back to [0, 255].
    """
    arr = np.asarray(patch)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValidationError(f"expected uint8 H x W x 3 patch, got {arr.shape} {arr.dtype}")
    out = arr
    if policy.p_hflip and rng.random() < policy.p_hflip:
        out = np.flip(out, axis=1)
    if policy.p_vflip and rng.random() < policy.p_vflip:
        out = np.flip(out, axis=0)
    if policy.p_rotate and rng.random() < policy.p_rotate:
        if policy.free_angle:
            angle = float(rng.uniform(0.0, 360.0))
            out = ndimage.rotate(
                out.astype(np.float32), angle, axes=(0, 1), reshape=False, order=1, mode="reflect"
            )
        else:
            out = np.rot90(out, k=int(rng.integers(0, 4)), axes=(0, 1))
    needs_color = policy.p_jitter and rng.random() < policy.p_jitter
    needs_blur = policy.p_blur and rng.random() < policy.p_blur
    if needs_color or needs_blur or out.dtype != np.uint8:
        x = out.astype(np.float64)
        if needs_color:
            x = _jitter(x, rng, policy)
        if needs_blur:
            sigma = float(rng.uniform(*policy.blur_sigma))
            x = ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0.0))
        out = np.rint(np.clip(x, 0.0, 255.0)).astype(np.uint8)
    else:
        out = np.ascontiguousarray(out)
    return out
