"""U-Net segmenter and the paired image/label augmentation pipeline."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from .errors import ConfigError, InvalidInputError


NORMS = ("batch", "group", "none")
PADDINGS = ("zeros", "reflect", "replicate")


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 3
    width: int = 16
    in_channels: int = 1
    norm: str = "batch"
    padding: str = "reflect"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ConfigError(f"model.norm: must be one of {', '.join(NORMS)}, got {self.norm!r}")
        if self.padding not in PADDINGS:
            raise ConfigError(f"model.padding: must be one of {', '.join(PADDINGS)}, got {self.padding!r}")
        if self.depth < 1:
            raise ConfigError(f"model.depth: must be >= 1, got {self.depth}")
        if self.width < 1:
            raise ConfigError(f"model.width: must be >= 1, got {self.width}")
        if self.in_channels < 1:
            raise ConfigError(f"model.in_channels: must be >= 1, got {self.in_channels}")


def _norm(kind, c):
    if kind == "batch":
        return nn.BatchNorm2d(c)
    if kind == "group":
        # batch-size independent, so train and eval behave the same
        return nn.GroupNorm(min(8, c), c)
    return nn.Identity()


def _block(cin, cout, norm="batch", padding="reflect"):
    bias = norm == "none"
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=bias, padding_mode=padding),
        _norm(norm, cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=bias, padding_mode=padding),
        _norm(norm, cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Plain U-Net with ``depth`` pooling stages and a single-logit head."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        d, w = config.depth, config.width
        chans = [w * 2 ** k for k in range(d + 1)]
        self.down = nn.ModuleList()
        cin = config.in_channels
        for c in chans[:-1]:
            self.down.append(_block(cin, c, config.norm, config.padding))
            cin = c
        self.pool = nn.MaxPool2d(2)
        self.bottom = _block(chans[-2], chans[-1], config.norm, config.padding)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for k in range(d, 0, -1):
            self.up.append(nn.ConvTranspose2d(chans[k], chans[k - 1], 2, stride=2))
            self.dec.append(_block(2 * chans[k - 1], chans[k - 1], config.norm, config.padding))
        self.head = nn.Conv2d(w, 1, 1)

    @property
    def multiple(self) -> int:
        return 2 ** self.config.depth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Return logits of shape (B, 1, H, W)."""
        h, w = x.shape[-2:]
        m = self.multiple
        if h % m or w % m:
            raise InvalidInputError(
                f"input spatial size {h}x{w} must be divisible by {m} (2**depth for depth={self.config.depth})")
        skips = []
        for blk in self.down:
            x = blk(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottom(x)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = dec(torch.cat([up(x), skip], dim=1))
        return self.head(x)

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self(x))

    @torch.no_grad()
    def predict(self, image: np.ndarray) -> np.ndarray:
        """Probability map (H, W) for one image in [0, 1], as float64."""
        x = image_to_tensor(image).to(next(self.parameters()).dtype)
        return self.probabilities(x[None])[0, 0].double().numpy()


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """HxW or HxWxC array to a (C, H, W) float tensor."""
    a = np.asarray(image, dtype=np.float32)
    if a.ndim == 2:
        a = a[None]
    elif a.ndim == 3:
        a = np.moveaxis(a, -1, 0)
    else:
        raise InvalidInputError(f"image must be 2-D or 3-D, got shape {a.shape}")
    return torch.from_numpy(np.ascontiguousarray(a))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(config: ModelConfig = ModelConfig(), seed: Optional[int] = None) -> UNet:
    if seed is not None:
        torch.manual_seed(seed)
    return UNet(config)


def build_optimizer(model: nn.Module, learning_rate: float):
    return torch.optim.RAdam(model.parameters(), lr=learning_rate)


# --------------------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentationPolicy:
    """Randomized transforms, each gated by its own probability.

    Geometric transforms are applied identically to the image and every label
    map; label maps use nearest-neighbor sampling and fill with 0 (unlabeled /
    ignore) outside the source frame.
    """

    crop_size: Optional[Tuple[int, int]] = None
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    rotate_p: float = 0.3
    rotate_deg: float = 20.0
    shift_p: float = 0.3
    shift_frac: float = 0.0625
    scale_p: float = 0.3
    scale_range: Tuple[float, float] = (0.9, 1.1)
    brightness_p: float = 0.5
    brightness: float = 0.1
    contrast_p: float = 0.5
    contrast_range: Tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        for name in ("hflip_p", "vflip_p", "rotate_p", "shift_p", "scale_p", "brightness_p", "contrast_p"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"augmentation.{name}: probability must be in [0, 1], got {v}")
        for name in ("scale_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"augmentation.{name}: need 0 < min <= max, got {getattr(self, name)}")
        if self.crop_size is not None and min(self.crop_size) < 1:
            raise ConfigError(f"augmentation.crop_size: must be positive, got {self.crop_size}")

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls(hflip_p=0, vflip_p=0, rotate_p=0, shift_p=0, scale_p=0, brightness_p=0, contrast_p=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def draw(self, rng: np.random.Generator, shape: Sequence[int]) -> "AugmentationDraw":
        """Sample one set of transform parameters for an image of ``shape``."""
        h, w = shape[:2]
        # fixed number of draws per call so the stream stays aligned regardless of outcomes
        u = rng.random(7)
        vals = rng.random(8)
        crop = None
        if self.crop_size is not None:
            ch, cw = self.crop_size
            if ch > h or cw > w:
                raise ConfigError(f"augmentation.crop_size {ch}x{cw} exceeds image size {h}x{w}")
            crop = (int(vals[0] * (h - ch + 1)), int(vals[1] * (w - cw + 1)), ch, cw)
        lo, hi = self.scale_range
        clo, chi = self.contrast_range
        return AugmentationDraw(
            crop=crop,
            hflip=bool(u[0] < self.hflip_p),
            vflip=bool(u[1] < self.vflip_p),
            angle=float((2 * vals[2] - 1) * self.rotate_deg) if u[2] < self.rotate_p else 0.0,
            shift=(float((2 * vals[3] - 1) * self.shift_frac * h), float((2 * vals[4] - 1) * self.shift_frac * w))
            if u[3] < self.shift_p else (0.0, 0.0),
            scale=float(lo + vals[5] * (hi - lo)) if u[4] < self.scale_p else 1.0,
            brightness=float((2 * vals[6] - 1) * self.brightness) if u[5] < self.brightness_p else 0.0,
            contrast=float(clo + vals[7] * (chi - clo)) if u[6] < self.contrast_p else 1.0,
        )


@dataclass(frozen=True)
class AugmentationDraw:
    crop: Optional[Tuple[int, int, int, int]] = None
    hflip: bool = False
    vflip: bool = False
    angle: float = 0.0
    shift: Tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    brightness: float = 0.0
    contrast: float = 1.0

    @property
    def is_affine_identity(self) -> bool:
        return self.angle == 0.0 and self.shift == (0.0, 0.0) and self.scale == 1.0

    def _affine(self, a: np.ndarray, order: int, mode: str) -> np.ndarray:
        h, w = a.shape[:2]
        c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        t = math.radians(self.angle)
        # output -> input mapping: inverse rotation and scaling about the center, then shift
        rot = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]]) / self.scale
        offset = c - rot @ (c + np.asarray(self.shift))
        if a.ndim == 2:
            return ndimage.affine_transform(a, rot, offset, order=order, mode=mode, cval=0)
        return np.stack([ndimage.affine_transform(a[..., k], rot, offset, order=order, mode=mode, cval=0)
                         for k in range(a.shape[2])], axis=-1)

    def geometric(self, a: np.ndarray, is_label: bool) -> np.ndarray:
        if self.crop is not None:
            r, c, ch, cw = self.crop
            a = a[r:r + ch, c:c + cw]
        if self.hflip:
            a = a[:, ::-1]
        if self.vflip:
            a = a[::-1]
        if not self.is_affine_identity:
            if is_label:
                a = self._affine(np.ascontiguousarray(a), order=0, mode="constant")
            else:
                a = self._affine(np.ascontiguousarray(a), order=1, mode="reflect")
        return np.ascontiguousarray(a)

    def photometric(self, image: np.ndarray) -> np.ndarray:
        if self.brightness == 0.0 and self.contrast == 1.0:
            return image
        m = image.mean()
        out = (image - m) * self.contrast + m + self.brightness
        return np.clip(out, 0.0, 1.0).astype(image.dtype)

    def apply(self, image: np.ndarray, *label_maps: np.ndarray):
        """Transform an image and any number of code maps consistently."""
        img = self.photometric(self.geometric(np.asarray(image), is_label=False))
        labels = tuple(self.geometric(np.asarray(m), is_label=True) for m in label_maps)
        return (img,) + labels


def augment(sample, policy: AugmentationPolicy, draw):
    """Augment an :class:`ImageSample`.

    ``draw`` is either an :class:`AugmentationDraw` or a numpy Generator from
    which one is sampled.
    """
    from .core import ImageSample, ScribbleMap

    if isinstance(draw, np.random.Generator):
        draw = policy.draw(draw, sample.shape)
    maps = [sample.scribbles.codes]
    if sample.gt_mask is not None:
        maps.append(sample.gt_mask)
    out = draw.apply(sample.image, *maps)
    return ImageSample(
        id=sample.id,
        image=out[0],
        scribbles=ScribbleMap(out[1]),
        gt_mask=out[2] if sample.gt_mask is not None else None,
    )
