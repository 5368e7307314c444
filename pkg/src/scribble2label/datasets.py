"""On-disk dataset layout, manifest handling and train/val/test splitting.

Layout::

    root/
      manifest.tsv
      images/<id>.png      8-bit or 16-bit grayscale (or 8-bit RGB)
      masks/<id>.png       optional, {0, 255}
      scribbles/<id>.png   optional, {0 unlabeled, 128 background, 255 foreground}
      instances/<id>.png   optional, 16-bit instance ids (0 = background)

``manifest.tsv`` is tab-separated with a header row; missing files and
unassigned splits are written as ``-``::

    id	image	mask	scribble	instances	split
    img000	images/img000.png	masks/img000.png	scribbles/img000.png	-	train
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import ImageSample, ScribbleMap, decode_mask_png, decode_scribble_png, encode_mask_png, \
    encode_scribble_png
from .errors import ConfigError, DataError, FormatError, InvalidInputError
from .metrics import EIGHT_CONNECTED

MANIFEST_NAME = "manifest.tsv"
COLUMNS = ("id", "image", "mask", "scribble", "instances", "split")
SPLITS = ("train", "val", "test")
MISSING = "-"


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image: str
    mask: Optional[str] = None
    scribble: Optional[str] = None
    instances: Optional[str] = None
    split: Optional[str] = None


@dataclass
class DatasetManifest:
    root: Path
    entries: List[ManifestEntry] = field(default_factory=list)
    ratios: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [e.id for e in self.entries]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise DataError(f"duplicate sample id(s) in manifest: {', '.join(dupes)}")
        for e in self.entries:
            if e.split is not None and e.split not in SPLITS:
                raise DataError(f"{e.id}: unknown split {e.split!r}")

    def ids(self, split: Optional[str] = None) -> List[str]:
        return [e.id for e in self.entries if split is None or e.split == split]

    def entry(self, sample_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == sample_id:
                return e
        raise KeyError(sample_id)

    def write(self):
        path = self.root / MANIFEST_NAME
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(COLUMNS)
            for e in self.entries:
                w.writerow([e.id] + [MISSING if v is None else v
                                     for v in (e.image, e.mask, e.scribble, e.instances, e.split)])
        return path

    @classmethod
    def read(cls, root) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            raise DataError(f"{path}: manifest not found")
        entries = []
        with open(path, newline="") as f:
            rows = list(csv.reader(f, delimiter="\t"))
        if not rows or tuple(rows[0]) != COLUMNS:
            raise DataError(f"{path}:1: header must be {' '.join(COLUMNS)}")
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(COLUMNS)} columns, got {len(row)}")
            vals = [None if v == MISSING else v for v in row]
            if vals[0] is None or vals[1] is None:
                raise DataError(f"{path}:{lineno}: id and image are required")
            entries.append(ManifestEntry(*vals))
        return cls(root, entries)


def check_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"split.ratios: need three nonnegative numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split.ratios: must sum to 1 (+-1e-9), got {sum(ratios)}")
    return tuple(float(r) for r in ratios)


def split_sizes(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Val and test get ``floor(ratio * n)``; the remainder goes to train."""
    _, rv, rt = check_ratios(ratios)
    n_val = math.floor(round(rv * n, 9))
    n_test = math.floor(round(rt * n, 9))
    return n - n_val - n_test, n_val, n_test


def split(manifest: DatasetManifest, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetManifest:
    """Deterministic shuffled partition; ids are sorted before shuffling."""
    ratios = check_ratios(ratios)
    ids = sorted(manifest.ids())
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    order = np.random.default_rng(seed).permutation(len(ids))
    assign = {}
    for rank, k in enumerate(order):
        assign[ids[k]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    entries = [replace(e, split=assign[e.id]) for e in manifest.entries]
    return DatasetManifest(manifest.root, entries, ratios)


# --------------------------------------------------------------------------- raster io


def read_image(path: Path) -> np.ndarray:
    try:
        img = Image.open(path)
        arr = np.array(img)
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except Exception as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from exc
    if arr.dtype == np.uint8:
        out = arr.astype(np.float32) / 255.0
    elif arr.dtype in (np.uint16, np.int32) or img.mode.startswith("I"):
        out = arr.astype(np.float32) / 65535.0
    else:
        raise FormatError(f"{path}: unsupported image dtype {arr.dtype}")
    if out.ndim == 3 and out.shape[2] == 4:
        out = out[..., :3]
    return np.clip(out, 0.0, 1.0)


def write_image(path: Path, image: np.ndarray):
    a = np.asarray(image)
    if a.ndim == 2:
        Image.fromarray(np.round(np.clip(a, 0, 1) * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)).save(path)


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None


def read_scribbles(path: Path) -> ScribbleMap:
    return decode_scribble_png(_read_bytes(path), str(path))


def write_scribbles(path: Path, s: ScribbleMap):
    Path(path).write_bytes(encode_scribble_png(s))


def read_mask(path: Path) -> np.ndarray:
    return decode_mask_png(_read_bytes(path), str(path))


def write_mask(path: Path, mask: np.ndarray):
    Path(path).write_bytes(encode_mask_png(mask))


def read_instances(path: Path) -> np.ndarray:
    return np.array(Image.open(path)).astype(np.int32)


def write_instances(path: Path, instances: np.ndarray):
    Image.fromarray(np.asarray(instances).astype(np.uint16)).save(path)


def instances_from_mask(mask: np.ndarray) -> np.ndarray:
    from scipy import ndimage

    labels, _ = ndimage.label(np.asarray(mask) > 0, structure=EIGHT_CONNECTED)
    return labels.astype(np.int32)


# --------------------------------------------------------------------------- loading


def load_sample(root: Path, e: ManifestEntry) -> ImageSample:
    image = read_image(root / e.image)
    hw = image.shape[:2]
    scribbles = read_scribbles(root / e.scribble) if e.scribble else ScribbleMap.empty(hw)
    mask = read_mask(root / e.mask) if e.mask else None
    if e.instances:
        instances = read_instances(root / e.instances)
    elif mask is not None:
        instances = instances_from_mask(mask)
    else:
        instances = None
    try:
        return ImageSample(e.id, image, scribbles, mask, instances)
    except InvalidInputError as exc:
        raise DataError(str(exc)) from exc


def load_dataset(root) -> Tuple[DatasetManifest, Dict[str, ImageSample]]:
    """Read and validate the manifest and every sample it lists."""
    manifest = DatasetManifest.read(root)
    for e in manifest.entries:
        if e.split == "train" and not e.scribble:
            raise DataError(f"{e.id}: train entry has no scribble file")
    samples = {e.id: load_sample(manifest.root, e) for e in manifest.entries}
    for e in manifest.entries:
        if e.split == "train" and samples[e.id].scribbles.n_scribbled() == 0:
            raise DataError(f"{e.id}: train entry has an empty scribble map")
    return manifest, samples


def samples_for_split(manifest: DatasetManifest, samples: Dict[str, ImageSample], split_name: str):
    return [samples[i] for i in manifest.ids(split_name)]


def write_dataset(root, images, masks=None, instances=None, scribbles=None, ids=None,
                  splits=None) -> DatasetManifest:
    """Write rasters and a manifest under ``root``. Optional lists may be None."""
    root = Path(root)
    n = len(images)
    ids = list(ids) if ids is not None else [f"img{i:03d}" for i in range(n)]
    for sub, present in (("images", True), ("masks", masks is not None), ("instances", instances is not None),
                         ("scribbles", scribbles is not None)):
        if present:
            (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for k, sid in enumerate(ids):
        img_rel = f"images/{sid}.png"
        write_image(root / img_rel, images[k])
        mask_rel = inst_rel = scr_rel = None
        if masks is not None:
            mask_rel = f"masks/{sid}.png"
            write_mask(root / mask_rel, masks[k])
        if instances is not None:
            inst_rel = f"instances/{sid}.png"
            write_instances(root / inst_rel, instances[k])
        if scribbles is not None and scribbles[k] is not None:
            scr_rel = f"scribbles/{sid}.png"
            write_scribbles(root / scr_rel, scribbles[k])
        entries.append(ManifestEntry(sid, img_rel, mask_rel, scr_rel, inst_rel,
                                     None if splits is None else splits[k]))
    manifest = DatasetManifest(root, entries)
    manifest.write()
    return manifest
