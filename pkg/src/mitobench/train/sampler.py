"""Balanced pseudo-epoch sampling.

Each draw independently picks its source: a mitotic-figure annotation,
a hard-negative annotation, or a random background window, with
policy probabilities (default 0.5 / 0.25 / 0.25). When the pool has no
hard negatives their probability mass moves to random windows.
Mitotic draws are labeled 1, everything else 0.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch

from mitobench.errors import ValidationError
from mitobench.ingest.augment import AugmentPolicy, augment
from mitobench.ingest.images import ImageStore
from mitobench.ingest.manifest import AnnotationRecord, Label
from mitobench.ingest.patches import PatchSpec, extract_patch, normalize, sample_random_patch
from mitobench.splits.plan import derive_seed
from mitobench.train.config import SamplerPolicy

SOURCE_MITOTIC = "mitotic"
SOURCE_HARD_NEGATIVE = "hard_negative"
SOURCE_RANDOM = "random"


class Batch(NamedTuple):
    patches: torch.Tensor  # B x 3 x size x size float32, normalized
    labels: torch.Tensor  # B int64, mitotic = 1
    sources: tuple[str, ...]


class BalancedSampler:
    def __init__(
        self,
        records: list[AnnotationRecord],
        store: ImageStore,
        patch_spec: PatchSpec,
        policy: SamplerPolicy = SamplerPolicy(),
        augment_policy: AugmentPolicy | None = None,
        seed: int = 0,
    ):
        self.positives = [r for r in records if r.label is Label.MITOTIC_FIGURE]
        self.hard_negatives = [r for r in records if r.label is Label.HARD_NEGATIVE]
        if not self.positives:
            raise ValidationError("training pool has no mitotic figures")
        self.images = sorted({r.image_ref for r in records})
        self.by_image = {}
        for r in records:
            self.by_image.setdefault(r.image_ref, []).append(r)
        self.store = store
        self.patch_spec = patch_spec
        self.augment_policy = augment_policy
        p_hard = policy.p_hard_negative if self.hard_negatives else 0.0
        p_random = policy.p_random + (policy.p_hard_negative - p_hard)
        self._probs = np.array([policy.p_mitotic, p_hard, p_random])
        self._rng = np.random.default_rng(derive_seed(seed, "sampler"))

    def next_records(self, count: int) -> list[tuple[str, object]]:
        """Draw ``count`` (source, record-or-image_ref) selections without
        materializing pixels."""
        out = []
        for source_idx in self._rng.choice(3, size=count, p=self._probs):
            if source_idx == 0:
                rec = self.positives[int(self._rng.integers(len(self.positives)))]
                out.append((SOURCE_MITOTIC, rec))
            elif source_idx == 1:
                rec = self.hard_negatives[int(self._rng.integers(len(self.hard_negatives)))]
                out.append((SOURCE_HARD_NEGATIVE, rec))
            else:
                ref = self.images[int(self._rng.integers(len(self.images)))]
                out.append((SOURCE_RANDOM, ref))
        return out

    def materialize(self, source: str, item) -> np.ndarray:
        """Raw uint8 patch for one selection, augmented when configured."""
        if source == SOURCE_RANDOM:
            pixels, _ = sample_random_patch(
                self.store, item, self.by_image.get(item, []), self.patch_spec, self._rng
            )
        else:
            pixels = extract_patch(self.store, item, self.patch_spec)
        if self.augment_policy is not None:
            pixels = augment(pixels, self._rng, self.augment_policy)
        return pixels

    def next_batch(self, count: int) -> Batch:
        selections = self.next_records(count)
        patches, labels, sources = [], [], []
        for source, item in selections:
            pixels = self.materialize(source, item)
            patches.append(normalize(pixels, self.patch_spec).astype(np.float32))
            labels.append(1 if source == SOURCE_MITOTIC else 0)
            sources.append(source)
        return Batch(
            patches=torch.from_numpy(np.stack(patches)),
            labels=torch.tensor(labels, dtype=torch.int64),
            sources=tuple(sources),
        )
