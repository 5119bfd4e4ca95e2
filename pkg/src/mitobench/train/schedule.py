"""One-cycle learning-rate schedule.

One cosine warmup from max_lr/div_factor up to max_lr at step
floor(pct_start * total_steps), then cosine annealing down to
max_lr/final_div at the last step. Each phase is a two-anchor cosine
blend, so the phase endpoints (initial, peak, final) are exact.
"""

from __future__ import annotations

import math

from mitobench.errors import ValidationError


def _cosine_blend(a: float, b: float, t: float) -> float:
    w = (1.0 + math.cos(math.pi * t)) / 2.0
    return a * w + b * (1.0 - w)


def one_cycle_lr(
    step: int,
    total_steps: int,
    max_lr: float,
    pct_start: float = 0.3,
    div_factor: float = 25.0,
    final_div: float = 1e4,
) -> float:
    if total_steps < 1:
        raise ValidationError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ValidationError(f"step {step} out of range [0, {total_steps})")
    if max_lr <= 0 or div_factor <= 0 or final_div <= 0:
        raise ValidationError("max_lr, div_factor and final_div must be > 0")
    peak = int(pct_start * total_steps)
    if step <= peak:
        if peak == 0:
            return max_lr
        return _cosine_blend(max_lr / div_factor, max_lr, step / peak)
    if peak >= total_steps - 1:
        return max_lr
    return _cosine_blend(max_lr, max_lr / final_div, (step - peak) / (total_steps - 1 - peak))
