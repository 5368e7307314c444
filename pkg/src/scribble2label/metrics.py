"""Semantic IoU, instance extraction and instance-level mean Dice."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _check_pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def iou(pred_mask, gt_mask) -> float:
    """|pred & gt| / |pred | gt|, or 1.0 when both masks are empty."""
    pred, gt = _check_pair(pred_mask, gt_mask)
    pred, gt = pred.astype(bool), gt.astype(bool)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def relabel_consecutive(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    ids = np.unique(labels)
    ids = ids[ids != 0]
    lut = np.zeros(int(labels.max(initial=0)) + 1, dtype=np.int32)
    lut[ids] = np.arange(1, len(ids) + 1, dtype=np.int32)
    return lut[labels]


def extract_instances(prob, threshold: float = 0.5, min_area: int = 4) -> np.ndarray:
    """Binarize, take 8-connected components, drop ones below ``min_area``.

    Pixels strictly above ``threshold`` are foreground.
    """
    prob = np.asarray(prob)
    labels, k = ndimage.label(prob > threshold, structure=EIGHT_CONNECTED)
    if k == 0:
        return labels.astype(np.int32)
    areas = np.bincount(labels.ravel(), minlength=k + 1)
    small = areas < min_area
    small[0] = False
    labels[small[labels]] = 0
    return relabel_consecutive(labels)


def mdice(pred, gt) -> float:
    """Mean over ground-truth instances of the Dice with the best-overlapping prediction.

    For every gt instance the predicted instance with the largest pixel overlap
    is chosen (ties: larger Dice, then smaller id). A gt instance with no
    overlapping prediction contributes 0. Predicted instances may be matched by
    several gt instances.
    """
    pred, gt = _check_pair(pred, gt)
    gt_ids = np.unique(gt)
    gt_ids = gt_ids[gt_ids != 0]
    if len(gt_ids) == 0:
        return 1.0 if not np.any(pred) else 0.0

    pred_ids, pred_inv = np.unique(pred, return_inverse=True)
    gt_ids_all, gt_inv = np.unique(gt, return_inverse=True)
    # contingency table of pixel counts, rows = gt labels, cols = pred labels
    table = np.zeros((len(gt_ids_all), len(pred_ids)), dtype=np.int64)
    np.add.at(table, (gt_inv.ravel(), pred_inv.ravel()), 1)
    gt_area = table.sum(axis=1)
    pred_area = table.sum(axis=0)
    fg_cols = pred_ids != 0

    scores = []
    for r, g in enumerate(gt_ids_all):
        if g == 0:
            continue
        overlap = np.where(fg_cols, table[r], 0)
        best = overlap.max(initial=0)
        if best == 0:
            scores.append(0.0)
            continue
        cand = np.flatnonzero(overlap == best)
        dice = 2.0 * best / (gt_area[r] + pred_area[cand])
        # np.unique sorts ids, so the first maximal dice is the smallest id
        scores.append(float(dice.max()))
    return float(np.mean(scores))


def dice(pred_mask, gt_mask) -> float:
    pred, gt = _check_pair(pred_mask, gt_mask)
    pred, gt = pred.astype(bool), gt.astype(bool)
    s = np.count_nonzero(pred) + np.count_nonzero(gt)
    if s == 0:
        return 1.0
    return 2.0 * np.count_nonzero(pred & gt) / s


def format_score(iou_value: float, mdice_value: float) -> str:
    return f"{iou_value:.4f}[{mdice_value:.4f}]"
