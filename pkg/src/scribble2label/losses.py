"""Partial cross-entropy losses over scribbled and pseudo-labeled pixels.

All losses accept either probabilities or (with ``from_logits=True``) raw
logits, plus label codes as a ScribbleMap / PseudoLabel or a bare code array.
Leading batch dimensions are allowed; the normalizer is the pixel count pooled
over the whole batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .core import BG, FG, PseudoLabel, ScribbleMap
from .errors import InvalidInputError

DEFAULT_EPS = 1e-7


@dataclass
class LossValue:
    value: torch.Tensor
    n_pixels: int

    def __float__(self):
        return float(self.value.detach())

    def item(self) -> float:
        return float(self)


def _codes_tensor(labels, device) -> torch.Tensor:
    if isinstance(labels, (ScribbleMap, PseudoLabel)):
        labels = labels.codes
    if isinstance(labels, np.ndarray):
        labels = torch.from_numpy(np.array(labels))
    return torch.as_tensor(labels, device=device)


def _as_tensor(pred) -> torch.Tensor:
    if isinstance(pred, np.ndarray):
        return torch.from_numpy(pred)
    if not torch.is_tensor(pred):
        return torch.as_tensor(pred, dtype=torch.float64)
    return pred


def _squeeze_channel(pred: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    # (B, 1, H, W) network output against (B, H, W) codes
    if pred.dim() == codes.dim() + 1 and pred.shape[-3] == 1:
        pred = pred.squeeze(-3)
    if pred.shape != codes.shape:
        raise InvalidInputError(f"shape mismatch: predictions {tuple(pred.shape)} vs labels {tuple(codes.shape)}")
    return pred


def log_probs(pred: torch.Tensor, eps: float = DEFAULT_EPS, from_logits: bool = False):
    """Return ``(log p, log(1 - p))`` with p clamped to ``[eps, 1 - eps]``."""
    lo, hi = math.log(eps), math.log1p(-eps)
    if from_logits:
        return F.logsigmoid(pred).clamp(lo, hi), F.logsigmoid(-pred).clamp(lo, hi)
    p = pred.clamp(eps, 1.0 - eps)
    return torch.log(p), torch.log1p(-p)


def _partial_ce(pred, labels, eps, from_logits) -> LossValue:
    pred = _as_tensor(pred)
    codes = _codes_tensor(labels, pred.device)
    pred = _squeeze_channel(pred, codes)
    fg = codes == FG
    bg = codes == BG
    n = int(fg.sum() + bg.sum())
    if n == 0:
        return LossValue(pred.sum() * 0.0, 0)
    lp, lq = log_probs(pred, eps, from_logits)
    total = lp[fg].sum() + lq[bg].sum()
    return LossValue(-total / n, n)


def scribbled_loss(pred, scribbles, eps: float = DEFAULT_EPS, from_logits: bool = False) -> LossValue:
    """Cross-entropy averaged over scribbled pixels only; 0 if there are none."""
    return _partial_ce(pred, scribbles, eps, from_logits)


def unscribbled_loss(pred, pseudo_label, eps: float = DEFAULT_EPS, from_logits: bool = False) -> LossValue:
    """Cross-entropy averaged over pixels carrying a generated label; 0 if there are none."""
    return _partial_ce(pred, pseudo_label, eps, from_logits)


@dataclass
class TotalLoss(LossValue):
    sp: LossValue = None
    up: LossValue = None


def total_loss(pred, scribbles, pseudo_label, lambda_up: float,
               eps: float = DEFAULT_EPS, from_logits: bool = False) -> TotalLoss:
    sp = scribbled_loss(pred, scribbles, eps, from_logits)
    if lambda_up == 0:
        # keeps the value bit-identical to the scribbled loss
        return TotalLoss(sp.value, sp.n_pixels, sp, LossValue(sp.value * 0.0, 0))
    up = unscribbled_loss(pred, pseudo_label, eps, from_logits)
    return TotalLoss(sp.value + lambda_up * up.value, sp.n_pixels + up.n_pixels, sp, up)


def total_loss_logit_grad(logits: np.ndarray, scribble_codes: np.ndarray, pseudo_codes: np.ndarray,
                          lambda_up: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Closed-form gradient of the total loss with respect to the logits.

    For a sigmoid cross-entropy term the derivative is ``(p - t) / |set|``.
    Pixels whose probability is pinned by the clamp get zero gradient.
    """
    z = np.asarray(logits, dtype=np.float64)
    p = 1.0 / (1.0 + np.exp(-z))
    live = (p > eps) & (p < 1.0 - eps)
    grad = np.zeros_like(z)
    for codes, weight in ((np.asarray(scribble_codes), 1.0), (np.asarray(pseudo_codes), lambda_up)):
        labeled = codes != 0
        n = int(labeled.sum())
        if n == 0 or weight == 0:
            continue
        t = (codes == FG).astype(np.float64)
        grad += np.where(labeled & live, weight * (p - t) / n, 0.0)
    return grad
