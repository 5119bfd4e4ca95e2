"""Binary cross-entropy over either head convention.

Two-logit inputs go through log-softmax, single-logit inputs through
softplus; both are computed in log space and agree exactly (up to float
rounding) when the single logit equals the two-logit difference.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from mitobench.errors import ValidationError


def bce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of the true class.

    ``logits`` is either N x 2 (softmax convention) or N / N x 1
    (sigmoid convention); ``labels`` holds 0/1 integers.
    """
    if not torch.is_tensor(logits):
        logits = torch.as_tensor(logits)
    if not torch.is_tensor(labels):
        labels = torch.as_tensor(labels)
    if labels.ndim != 1:
        raise ValidationError(f"labels: expected 1-D, got shape {tuple(labels.shape)}")
    bad = (labels != 0) & (labels != 1)
    if bool(bad.any()):
        raise ValidationError("labels: values outside {0, 1}")
    labels = labels.long()
    if logits.ndim == 2 and logits.shape[-1] == 2:
        lse = torch.logsumexp(logits, dim=-1)
        picked = logits.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
        return (lse - picked).mean()
    single = logits.squeeze(-1) if logits.ndim == 2 else logits
    if single.ndim != 1 or single.shape[0] != labels.shape[0]:
        raise ValidationError(
            f"logits: expected N x 2 or N (x1), got shape {tuple(logits.shape)}"
        )
    return (F.softplus(single) - single * labels.to(single.dtype)).mean()
