"""Synthetic fluorescence-like cell images with exact ground truth.

Cells are randomly oriented ellipses with a bright rim-to-center falloff on a
background carrying a linear intensity ramp, blurred and corrupted with
Gaussian noise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GenerationError


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 40
    size: Tuple[int, int] = (64, 64)
    cells_per_image: Tuple[int, int] = (3, 8)
    radius_range: Tuple[float, float] = (4.0, 9.0)
    elongation_max: float = 1.6
    contrast: float = 0.5
    edge_level: float = 0.5
    background: float = 0.15
    gradient_amplitude: float = 0.15
    noise_sigma: float = 0.05
    blur_sigma: float = 1.0
    allow_overlap: bool = False
    min_gap: int = 2
    fg_fraction_range: Tuple[float, float] = (0.05, 0.6)
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigError(f"synth.{name}: {msg}")

        if self.n_images < 0:
            bad("n_images", f"must be >= 0, got {self.n_images}")
        lo, hi = self.cells_per_image
        if not 1 <= lo <= hi:
            bad("cells_per_image", f"need 1 <= min <= max, got {self.cells_per_image}")
        rlo, rhi = self.radius_range
        if not 0 < rlo <= rhi:
            bad("radius_range", f"need 0 < min <= max, got {self.radius_range}")
        if self.elongation_max < 1:
            bad("elongation_max", f"must be >= 1, got {self.elongation_max}")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            bad("noise_sigma", "noise and blur must be nonnegative")
        flo, fhi = self.fg_fraction_range
        if not 0 <= flo < fhi <= 1:
            bad("fg_fraction_range", f"need 0 <= min < max <= 1, got {self.fg_fraction_range}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


class SynthImage(NamedTuple):
    image: np.ndarray      # float32 in [0, 1]
    mask: np.ndarray       # uint8 {0, 1}
    instances: np.ndarray  # int32, 0 = background


def _ellipse_distance(shape, center, radii, angle):
    """Normalized elliptical radius of every pixel (1.0 on the boundary)."""
    rr, cc = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    dr, dc = rr - center[0], cc - center[1]
    ca, sa = math.cos(angle), math.sin(angle)
    u = (dr * ca + dc * sa) / radii[0]
    v = (-dr * sa + dc * ca) / radii[1]
    return np.sqrt(u * u + v * v)


def _place_cells(cfg: SynthConfig, rng: np.random.Generator, n_cells: int):
    h, w = cfg.size
    dists = []
    centers = []
    occupied = np.zeros((h, w), dtype=bool)
    gap = _gap_footprint(cfg.min_gap)
    for _ in range(n_cells):
        for _attempt in range(cfg.max_retries):
            r = rng.uniform(*cfg.radius_range)
            e = rng.uniform(1.0, cfg.elongation_max)
            radii = (r * math.sqrt(e), r / math.sqrt(e))
            angle = rng.uniform(0, math.pi)
            margin = max(radii) * 0.5
            center = (rng.uniform(margin, h - 1 - margin), rng.uniform(margin, w - 1 - margin))
            d = _ellipse_distance((h, w), center, radii, angle)
            body = d <= 1.0
            if body.sum() < 4:
                continue
            if cfg.allow_overlap:
                # no cell may cover another's center
                ci = (int(round(center[0])), int(round(center[1])))
                if any(od[ci] <= 1.0 for od in dists) or any(d[int(round(c[0])), int(round(c[1]))] <= 1.0
                                                              for c in centers):
                    continue
            elif gap is not None and (ndimage.binary_dilation(body, gap) & occupied).any():
                continue
            dists.append(d)
            centers.append(center)
            occupied |= body
            break
        else:
            raise GenerationError(
                f"could not place cell {len(dists) + 1}/{n_cells} after {cfg.max_retries} retries; "
                "reduce cells_per_image or radius_range")
    return dists


def _gap_footprint(gap: int):
    if gap <= 0:
        return None
    return np.ones((2 * gap + 1, 2 * gap + 1), dtype=bool)


def render(cfg: SynthConfig, rng: np.random.Generator) -> SynthImage:
    h, w = cfg.size
    n_cells = int(rng.integers(cfg.cells_per_image[0], cfg.cells_per_image[1] + 1))
    dists = _place_cells(cfg, rng, n_cells)

    stack = np.stack(dists)                 # (k, h, w)
    inside = stack <= 1.0
    # overlaps go to the cell whose (normalized) center is nearer
    nearest = np.argmin(np.where(inside, stack, np.inf), axis=0)
    instances = np.where(inside.any(axis=0), nearest + 1, 0).astype(np.int32)
    mask = (instances > 0).astype(np.uint8)

    theta = rng.uniform(0, 2 * math.pi)
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    ramp = (math.cos(theta) * (rr / max(h - 1, 1) - 0.5) + math.sin(theta) * (cc / max(w - 1, 1) - 0.5))
    image = cfg.background + cfg.gradient_amplitude * ramp

    dmin = np.where(inside, stack, np.inf).min(axis=0)
    brightness = rng.uniform(0.8, 1.2, size=len(dists))
    cell_gain = brightness[np.maximum(instances - 1, 0)]
    # intensity rises from edge_level at the rim to 1 at the center, scaled by contrast
    profile = cfg.edge_level + (1.0 - cfg.edge_level) * np.sqrt(np.clip(1.0 - dmin ** 2, 0.0, 1.0))
    image = image + np.where(mask > 0, cfg.contrast * cell_gain * profile, 0.0)
    if cfg.blur_sigma > 0:
        image = ndimage.gaussian_filter(image, cfg.blur_sigma, mode="nearest")
    if cfg.noise_sigma > 0:
        image = image + rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return SynthImage(image, mask, instances)


def generate(cfg: SynthConfig) -> List[SynthImage]:
    """Deterministic list of images for ``cfg.seed``; each image has its own derived stream."""
    out = []
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_images)
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        flo, fhi = cfg.fg_fraction_range
        for _ in range(cfg.max_retries):
            item = render(cfg, rng)
            frac = item.mask.mean()
            if flo <= frac <= fhi:
                break
        else:
            raise GenerationError(f"image {i}: foreground fraction stayed outside {cfg.fg_fraction_range}")
        out.append(item)
    return out
