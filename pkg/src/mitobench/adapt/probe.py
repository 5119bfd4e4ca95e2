"""Linear classifier head and its direct convex fit.

The head is a bias-free linear map y = W z by default; the fit can add
a bias (stored separately so feature dimensions stay untouched). The fit
minimizes logistic loss with optional L2 via L-BFGS on a symmetric
two-logit parameterization, so flipping the labels exactly negates the
fitted logits when the bias is off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import minimize
from scipy.special import expit
from torch import nn

from mitobench.errors import ValidationError


class ProbeHead(nn.Module):
    """Linear classification head: logits = z @ W.T (+ b).

    ``classes=2`` is the two-logit softmax convention; ``classes=1`` is
    the equivalent single-logit sigmoid convention.
    """

    def __init__(
        self,
        in_features: int,
        classes: int = 2,
        bias: bool = False,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if classes not in (1, 2):
            raise ValidationError(f"classes: binary head needs 1 or 2 logits, got {classes}")
        self.in_features = in_features
        self.classes = classes
        self.weight = nn.Parameter(torch.zeros(classes, in_features, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(classes, dtype=dtype)) if bias else None

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.in_features:
            raise ValidationError(
                f"feature dim {z.shape[-1]} != head input dim {self.in_features}"
            )
        out = z @ self.weight.t()
        if self.bias is not None:
            out = out + self.bias
        return out

    def positive_probability(self, z: torch.Tensor) -> torch.Tensor:
        logits = self.forward(z)
        if self.classes == 1:
            return torch.sigmoid(logits.squeeze(-1))
        return torch.softmax(logits, dim=-1)[..., 1]


def probe_predict(head: ProbeHead, z) -> torch.Tensor:
    """Logits for a single feature vector or a batch (numpy or torch)."""
    if not torch.is_tensor(z):
        z = torch.as_tensor(np.asarray(z), dtype=head.weight.dtype)
    else:
        z = z.to(head.weight.dtype)
    single = z.ndim == 1
    with torch.no_grad():
        out = head(z.unsqueeze(0) if single else z)
    return out.squeeze(0) if single else out


@dataclass(frozen=True)
class FitConfig:
    l2: float = 1e-4
    add_bias: bool = True
    max_iter: int = 1000
    tol: float = 1e-12
    seed: int = 0  # kept for interface symmetry; the fit is deterministic


def fit_probe(features, labels, config: FitConfig = FitConfig()) -> ProbeHead:
    """Fit a two-logit head by logistic regression on frozen features."""
    z = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2:
        raise ValidationError(f"features: expected N x n matrix, got shape {z.shape}")
    if len(y) != len(z) or len(z) < 2:
        raise ValidationError("features/labels: need N >= 2 matched rows")
    if not np.isfinite(z).all():
        raise ValidationError("features: non-finite values present")
    classes = np.unique(y)
    if not np.isin(classes, (0, 1)).all():
        raise ValidationError(f"labels: must be binary 0/1, got {classes}")
    if len(classes) < 2:
        raise ValidationError("labels: both classes must be present")

    n = z.shape[1]
    sign = np.where(y == 1, 1.0, -1.0)

    def objective(theta):
        w = theta[:n]
        s = z @ w + (theta[n] if config.add_bias else 0.0)
        margins = sign * s
        loss = np.logaddexp(0.0, -margins).mean() + config.l2 * (w @ w)
        coeff = -sign * expit(-margins) / len(z)
        grad_w = z.T @ coeff + 2.0 * config.l2 * w
        if config.add_bias:
            return loss, np.concatenate([grad_w, [coeff.sum()]])
        return loss, grad_w

    theta0 = np.zeros(n + (1 if config.add_bias else 0))
    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": 1e-10},
    )
    w = result.x[:n]
    head = ProbeHead(n, classes=2, bias=config.add_bias, dtype=torch.float64)
    with torch.no_grad():
        head.weight.copy_(torch.from_numpy(np.stack([-w / 2.0, w / 2.0])))
        if config.add_bias:
            b = result.x[n]
            head.bias.copy_(torch.tensor([-b / 2.0, b / 2.0], dtype=torch.float64))
    return head
