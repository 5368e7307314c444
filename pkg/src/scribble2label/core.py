"""Domain types shared by every other module.

Scribble maps and pseudo-labels are tri-state per-pixel code arrays. Both use
the same integer alphabet so they can be compared and stacked directly::

    0  UNLABELED (scribbles) / IGNORE (pseudo-labels)
    1  BG
    2  FG
"""
from __future__ import annotations

import io
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, InvalidInputError, PreconditionError

UNLABELED = 0
IGNORE = 0
BG = 1
FG = 2

_CODE_TO_PNG = np.array([0, 128, 255], dtype=np.uint8)
_PNG_TO_CODE = {0: UNLABELED, 128: BG, 255: FG}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _check_codes(codes: np.ndarray, what: str) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise InvalidInputError(f"{what} must be a 2-D array, got shape {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() > FG):
        bad = sorted(set(np.unique(codes).tolist()) - {0, 1, 2})
        raise InvalidInputError(f"{what} contains values outside {{0,1,2}}: {bad}")
    return codes.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class ScribbleMap:
    """Per-pixel scribble annotation over {UNLABELED, BG, FG}."""

    codes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "codes", _frozen(_check_codes(self.codes, "scribble codes")))

    @property
    def shape(self):
        return self.codes.shape

    @property
    def scribbled(self) -> np.ndarray:
        """Boolean mask of the scribbled pixel set."""
        return self.codes != UNLABELED

    @property
    def fg(self) -> np.ndarray:
        return self.codes == FG

    @property
    def bg(self) -> np.ndarray:
        return self.codes == BG

    def n_scribbled(self) -> int:
        return int(np.count_nonzero(self.codes))

    @classmethod
    def empty(cls, shape) -> "ScribbleMap":
        return cls(np.zeros(shape, dtype=np.uint8))

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "ScribbleMap":
        """Dense annotation: every pixel labeled from a binary mask."""
        mask = np.asarray(mask).astype(bool)
        return cls(np.where(mask, FG, BG).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, ScribbleMap):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.codes, other.codes))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PseudoLabel:
    """Filtered pseudo-label over {IGNORE, BG, FG}."""

    codes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "codes", _frozen(_check_codes(self.codes, "pseudo-label codes")))

    @property
    def shape(self):
        return self.codes.shape

    @property
    def generated(self) -> np.ndarray:
        """Boolean mask of the generated-label pixel set."""
        return self.codes != IGNORE

    def n_generated(self) -> int:
        return int(np.count_nonzero(self.codes))

    @classmethod
    def ignore_all(cls, shape) -> "PseudoLabel":
        return cls(np.zeros(shape, dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """Running average of predictions for one image.

    ``n`` counts how many predictions have been folded in; ``n == 0`` means no
    prediction has been seen yet and ``y`` is ``None``.
    """

    y: Optional[np.ndarray] = None
    n: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise InvalidInputError(f"n must be nonnegative, got {self.n}")
        if self.n == 0:
            if self.y is not None:
                raise InvalidInputError("uninitialized state (n=0) must not carry y")
            return
        if self.y is None:
            raise InvalidInputError("initialized state (n>=1) needs y")
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 2:
            raise InvalidInputError(f"ensemble y must be 2-D, got shape {y.shape}")
        if y.size and (y.min() < 0.0 or y.max() > 1.0 or not np.all(np.isfinite(y))):
            raise InvalidInputError("ensemble y must lie in [0, 1]")
        object.__setattr__(self, "y", _frozen(y))

    @property
    def initialized(self) -> bool:
        return self.n >= 1


@dataclass
class ImageSample:
    id: str
    image: np.ndarray
    scribbles: ScribbleMap
    gt_mask: Optional[np.ndarray] = None
    gt_instances: Optional[np.ndarray] = None

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float32)
        if image.ndim not in (2, 3):
            raise InvalidInputError(f"{self.id}: image must be HxW or HxWxC, got {image.shape}")
        if image.size and (image.min() < 0.0 or image.max() > 1.0):
            raise InvalidInputError(f"{self.id}: image values must lie in [0, 1]")
        self.image = image
        hw = image.shape[:2]
        if not isinstance(self.scribbles, ScribbleMap):
            self.scribbles = ScribbleMap(self.scribbles)
        if self.scribbles.shape != hw:
            raise InvalidInputError(
                f"{self.id}: scribble shape {self.scribbles.shape} != image shape {hw}")
        if self.gt_mask is not None:
            m = np.asarray(self.gt_mask)
            if m.shape != hw:
                raise InvalidInputError(f"{self.id}: mask shape {m.shape} != image shape {hw}")
            if not np.isin(m, (0, 1)).all():
                raise InvalidInputError(f"{self.id}: gt mask must contain only 0/1")
            self.gt_mask = m.astype(np.uint8)
        if self.gt_instances is not None:
            inst = np.asarray(self.gt_instances)
            if inst.shape != hw:
                raise InvalidInputError(f"{self.id}: instance shape {inst.shape} != image shape {hw}")
            self.gt_instances = inst.astype(np.int32)

    @property
    def shape(self):
        return self.image.shape[:2]

    @property
    def channels(self) -> int:
        return 1 if self.image.ndim == 2 else self.image.shape[2]


@dataclass(frozen=True)
class HyperParams:
    """Training constants. Defaults follow the published setting where one exists."""

    tau: float = 0.8
    alpha: float = 0.2
    gamma: int = 5
    lambda_up: float = 0.5
    warmup_epochs: int = 100
    total_epochs: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 4
    passes_per_epoch: int = 1
    rng_seed: int = 0
    binarize_threshold: float = 0.5
    prob_clamp_eps: float = 1e-7

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(name, msg):
            raise ConfigError(f"hyperparams.{name}: {msg}")

        if not 0.5 < self.tau < 1.0:
            bad("tau", f"must be in (0.5, 1), got {self.tau}")
        if not 0.0 < self.alpha <= 1.0:
            bad("alpha", f"must be in (0, 1], got {self.alpha}")
        if int(self.gamma) != self.gamma or self.gamma < 1:
            bad("gamma", f"must be a positive integer, got {self.gamma}")
        if self.lambda_up < 0:
            bad("lambda_up", f"must be >= 0, got {self.lambda_up}")
        if int(self.warmup_epochs) != self.warmup_epochs or self.warmup_epochs < 1:
            bad("warmup_epochs", f"must be an integer >= 1, got {self.warmup_epochs}")
        if self.total_epochs < 0:
            bad("total_epochs", f"must be >= 0, got {self.total_epochs}")
        # a zero-epoch run never reaches refinement, so the ordering checks don't apply
        if self.total_epochs > 0 and self.warmup_epochs >= self.total_epochs:
            bad("warmup_epochs", f"must be < total_epochs ({self.total_epochs}), got {self.warmup_epochs}")
        if self.gamma > self.warmup_epochs:
            bad("gamma", f"must be <= warmup_epochs ({self.warmup_epochs}), got {self.gamma}")
        if self.learning_rate <= 0:
            bad("learning_rate", f"must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            bad("batch_size", f"must be >= 1, got {self.batch_size}")
        if int(self.passes_per_epoch) != self.passes_per_epoch or self.passes_per_epoch < 1:
            bad("passes_per_epoch", f"must be an integer >= 1, got {self.passes_per_epoch}")
        if not 0.0 < self.binarize_threshold < 1.0:
            bad("binarize_threshold", f"must be in (0, 1), got {self.binarize_threshold}")
        if not 0.0 < self.prob_clamp_eps < 0.5:
            bad("prob_clamp_eps", f"must be in (0, 0.5), got {self.prob_clamp_eps}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def filter_pseudo_label(state: EnsembleState, scribbles: ScribbleMap, tau: float) -> PseudoLabel:
    """Keep only pixels whose averaged prediction is confidently one class.

    A pixel becomes FG when ``y > tau`` and BG when ``1 - y > tau``; everything
    else, including every scribbled pixel, is IGNORE. Both comparisons are
    strict, so a pixel sitting exactly on ``tau`` is ignored.
    """
    if not state.initialized:
        raise PreconditionError("ensemble state is uninitialized (n=0); run an ensemble pass first")
    if not 0.5 < tau:
        raise InvalidInputError(f"tau must exceed 0.5, got {tau}")
    return PseudoLabel(threshold_codes(state.y, scribbles.codes, tau))


def threshold_codes(y: np.ndarray, scribble_codes: np.ndarray, tau: float) -> np.ndarray:
    """Array-level thresholding behind :func:`filter_pseudo_label`.

    Also used by the naive pseudo-labeling baseline on raw predictions.
    """
    y = np.asarray(y)
    scribble_codes = np.asarray(scribble_codes)
    if y.shape != scribble_codes.shape:
        raise InvalidInputError(f"shape mismatch: predictions {y.shape} vs scribbles {scribble_codes.shape}")
    free = scribble_codes == UNLABELED
    codes = np.zeros(y.shape, dtype=np.uint8)
    codes[(y > tau) & free] = FG
    codes[((1.0 - y) > tau) & free] = BG
    return codes


def encode_scribble_png(s: ScribbleMap) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(_CODE_TO_PNG[s.codes], mode="L").save(buf, format="PNG")
    return buf.getvalue()


def scribble_from_png_array(arr: np.ndarray, source: str = "<array>") -> ScribbleMap:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise FormatError(f"{source}: scribble PNG must be single-channel, got shape {arr.shape}")
    values = np.unique(arr)
    for v in values.tolist():
        if v not in _PNG_TO_CODE:
            raise FormatError(f"{source}: invalid scribble pixel value {v} (allowed: 0, 128, 255)")
    codes = np.zeros(arr.shape, dtype=np.uint8)
    codes[arr == 128] = BG
    codes[arr == 255] = FG
    return ScribbleMap(codes)


def decode_scribble_png(data: bytes, source: str = "<bytes>") -> ScribbleMap:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:  # PIL raises a zoo of types
        raise FormatError(f"{source}: not a readable PNG ({exc})") from exc
    if img.mode not in ("L", "P"):
        raise FormatError(f"{source}: scribble PNG must be 8-bit single-channel, got mode {img.mode}")
    if img.mode == "P":
        img = img.convert("L")
    return scribble_from_png_array(np.array(img), source)


def encode_mask_png(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes, source: str = "<bytes>") -> np.ndarray:
    arr = np.array(Image.open(io.BytesIO(data)))
    if arr.ndim != 2:
        raise FormatError(f"{source}: mask PNG must be single-channel, got shape {arr.shape}")
    values = set(np.unique(arr).tolist())
    if not values <= {0, 255} and not values <= {0, 1}:
        raise FormatError(f"{source}: invalid mask pixel values {sorted(values - {0, 1, 255})}")
    return (arr > 0).astype(np.uint8)
