"""Synthetic scribbles from full masks: skeletonize each class, keep a fraction.

Each connected skeleton component is ordered into a walk (depth-first from an
endpoint) and a contiguous, cyclically wrapped run of ``ceil(p * len)``
pixels is kept. The run's start offset depends only on the seed and the
component, so a larger ``p`` always keeps a superset of a smaller one.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _sk_skeletonize

from .core import BG, FG, ScribbleMap
from .errors import InvalidInputError

_EIGHT = np.ones((3, 3), dtype=bool)
# 4-neighbours first so walks prefer straight steps
_NEIGHBOURS = [(-1, 0), (0, 1), (1, 0), (0, -1), (-1, 1), (1, 1), (1, -1), (-1, -1)]


@dataclass(frozen=True)
class SkeletonSet:
    fg: np.ndarray  # boolean skeleton of the foreground
    bg: np.ndarray  # boolean skeleton of the background

    @property
    def fg_skeleton(self) -> set:
        return set(map(tuple, np.argwhere(self.fg).tolist()))

    @property
    def bg_skeleton(self) -> set:
        return set(map(tuple, np.argwhere(self.bg).tolist()))


def _skeleton_of(region: np.ndarray) -> np.ndarray:
    if not region.any():
        return np.zeros_like(region, dtype=bool)
    sk = _sk_skeletonize(region)
    # thinning may erase tiny blobs (e.g. a 2x2 square); keep one interior pixel for those
    labels, k = ndimage.label(region, structure=_EIGHT)
    if k:
        kept = ndimage.sum_labels(sk, labels, index=np.arange(1, k + 1))
        empty = np.flatnonzero(kept == 0) + 1
        if len(empty):
            dist = ndimage.distance_transform_edt(np.pad(region, 1))[1:-1, 1:-1]
            for lab in empty:
                comp = labels == lab
                idx = np.argmax(np.where(comp, dist, -1.0))
                sk.flat[idx] = True
    return sk & region


def skeletonize(mask) -> SkeletonSet:
    """Thin the foreground and the background of a binary mask independently."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidInputError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise InvalidInputError("mask must contain only 0/1")
    fg = mask.astype(bool)
    if not fg.any():
        warnings.warn("mask has no foreground; foreground skeleton is empty", stacklevel=2)
    if fg.all():
        warnings.warn("mask has no background; background skeleton is empty", stacklevel=2)
    return SkeletonSet(fg=_skeleton_of(fg), bg=_skeleton_of(~fg))


def order_component(pixels: np.ndarray) -> List[tuple]:
    """Depth-first walk over an 8-connected pixel set, starting at an endpoint."""
    pts = set(map(tuple, pixels.tolist()))

    def nbrs(p):
        return [(p[0] + dr, p[1] + dc) for dr, dc in _NEIGHBOURS if (p[0] + dr, p[1] + dc) in pts]

    ordered_pts = sorted(pts)
    start = next((p for p in ordered_pts if len(nbrs(p)) <= 1), ordered_pts[0])
    seen = {start}
    stack = [start]
    walk = []
    while stack:
        p = stack.pop()
        walk.append(p)
        for q in reversed(nbrs(p)):
            if q not in seen:
                seen.add(q)
                stack.append(q)
    return walk


def run_length(p: float, n: int) -> int:
    """ceil(p * n), robust to binary representation error in p (0.3 * 10 -> 3)."""
    return max(1, math.ceil(round(p * n, 9)))


def skeleton_components(skel: np.ndarray) -> List[List[tuple]]:
    labels, k = ndimage.label(skel, structure=_EIGHT)
    comps = []
    if k == 0:
        return comps
    objs = ndimage.find_objects(labels)
    for lab, sl in enumerate(objs, start=1):
        local = np.argwhere(labels[sl] == lab)
        local += np.array([sl[0].start, sl[1].start])
        comps.append(order_component(local))
    return comps


def sample_scribbles(sk: SkeletonSet, p: float, seed: int = 0, mode: str = "run") -> ScribbleMap:
    """Keep ``ceil(p * len)`` pixels of every skeleton component.

    ``mode="run"`` keeps a contiguous stroke; ``mode="iid"`` keeps a random
    subset instead. Both are nested in ``p`` for a fixed seed.
    """
    if not 0.0 < p <= 1.0:
        raise InvalidInputError(f"scribble fraction p must be in (0, 1], got {p}")
    if mode not in ("run", "iid"):
        raise InvalidInputError(f"unknown sampling mode {mode!r}")
    if not sk.fg.any() and not sk.bg.any():
        raise InvalidInputError("both skeletons are empty; nothing to sample")
    codes = np.zeros(sk.fg.shape, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    for skel, code in ((sk.fg, FG), (sk.bg, BG)):
        for walk in skeleton_components(skel):
            n = len(walk)
            k = run_length(p, n)
            if mode == "run":
                start = int(rng.integers(n))
                keep = [walk[(start + t) % n] for t in range(k)]
            else:
                perm = rng.permutation(n)
                keep = [walk[t] for t in perm[:k]]
            rr, cc = zip(*keep)
            codes[list(rr), list(cc)] = code
    return ScribbleMap(codes)


def generate_scribbles(mask, p: float, seed: int = 0, mode: str = "run") -> ScribbleMap:
    return sample_scribbles(skeletonize(mask), p, seed, mode)
