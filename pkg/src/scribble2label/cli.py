"""Command-line entry point.

Subcommands::

    synth     generate a synthetic dataset (images, masks, instances, split)
    scribble  write skeleton-sampled scribbles for every mask in a dataset
    train     train S2L or a baseline from a YAML experiment config
    eval      print ``IoU[mDice]`` for a checkpoint on one split
    predict   write probability maps and binarized masks
    overlay   render pseudo-label overlays from a checkpoint's ensemble

Errors are reported as one line on stderr, ``scribble2label: error[E_<KIND>]: ...``,
with exit code 2 (config), 3 (data) or 4 (runtime).
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch
import yaml
from PIL import Image

from . import datasets as ds
from .core import HyperParams, filter_pseudo_label, EnsembleState
from .errors import ConfigError, DataError, FormatError, InvalidInputError, Scribble2LabelError
from .metrics import extract_instances, format_score, iou
from .model import AugmentationPolicy, ModelConfig
from .scribblegen import generate_scribbles
from .synthdata import SynthConfig, generate
from .trainer import (METHOD_LABELS, METHODS, bank_from_checkpoint, evaluate, load_checkpoint,
                      model_from_checkpoint, run_baseline, train)

log = logging.getLogger("scribble2label")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

# overlay colours (RGB)
COLOR_FG_SCRIBBLE = (0, 90, 255)
COLOR_BG_SCRIBBLE = (255, 220, 0)
COLOR_IGNORED = (230, 0, 0)
COLOR_PSEUDO_FG = (255, 255, 255)
COLOR_PSEUDO_BG = (0, 0, 0)


# --------------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    dataset: Optional[str] = None
    out: str = "runs/s2l"
    method: str = "s2l"
    seed: int = 0
    hyperparams: HyperParams = field(default_factory=HyperParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    synth: SynthConfig = field(default_factory=SynthConfig)
    split_ratios: tuple = (0.6, 0.2, 0.2)
    split_seed: int = 0
    scribble_percent: float = 0.3
    scribble_mode: str = "run"

    def resolved(self) -> dict:
        """Plain dict with every default filled in, suitable for YAML."""
        return {
            "dataset": self.dataset,
            "out": self.out,
            "method": self.method,
            "seed": self.seed,
            "hyperparams": asdict(replace(self.hyperparams, rng_seed=self.seed)),
            "model": asdict(self.model),
            "augmentation": self.augmentation.to_dict(),
            "synth": self.synth.to_dict(),
            "split": {"ratios": list(self.split_ratios), "seed": self.split_seed},
            "scribble": {"percent": self.scribble_percent, "mode": self.scribble_mode},
        }


_SECTIONS = {"hyperparams": HyperParams, "model": ModelConfig, "augmentation": AugmentationPolicy,
             "synth": SynthConfig}
_TOP_KEYS = {"dataset", "out", "method", "seed", "split", "scribble"} | set(_SECTIONS)


def _key_lines(node, prefix="", out=None) -> Dict[str, int]:
    """Map dotted key paths to 1-based source lines of a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            _key_lines(v, path + ".", out)
    return out


def _section(name, cls, raw, lines, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}:{lines.get(name, '?')}: {name}: expected a mapping")
    known = {f.name for f in fields(cls)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{where}:{lines.get(f'{name}.{k}', '?')}: {name}.{k}: unknown field "
                              f"(expected one of {', '.join(sorted(known))})")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        msg = str(exc)
        path = msg.split(":", 1)[0]
        key = f"{name}.{path.split('.', 1)[-1]}"
        line = lines.get(key, lines.get(name, "?"))
        raise ConfigError(f"{where}:{line}: {msg}") from exc
    except TypeError as exc:
        raise ConfigError(f"{where}:{lines.get(name, '?')}: {name}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config; errors carry file:line: field."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{path}:{line}: invalid YAML ({getattr(exc, 'problem', exc)})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    lines = _key_lines(node)
    for k in raw:
        if k not in _TOP_KEYS:
            raise ConfigError(f"{path}:{lines.get(k, '?')}: {k}: unknown key "
                              f"(expected one of {', '.join(sorted(_TOP_KEYS))})")
    cfg = ExperimentConfig()
    for name, cls in _SECTIONS.items():
        setattr(cfg, name, _section(name, cls, raw.get(name), lines, path))
    for k in ("dataset", "out"):
        if raw.get(k) is not None:
            setattr(cfg, k, str(raw[k]))
    if "method" in raw:
        cfg.method = raw["method"]
    if "seed" in raw:
        cfg.seed = raw["seed"]
    split_raw = raw.get("split") or {}
    cfg.split_ratios = tuple(split_raw.get("ratios", cfg.split_ratios))
    cfg.split_seed = split_raw.get("seed", cfg.split_seed)
    scr = raw.get("scribble") or {}
    cfg.scribble_percent = scr.get("percent", cfg.scribble_percent)
    cfg.scribble_mode = scr.get("mode", cfg.scribble_mode)
    try:
        validate_config(cfg)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        raise ConfigError(f"{path}:{lines.get(key, '?')}: {exc}") from exc
    return cfg


def validate_config(cfg: ExperimentConfig):
    if cfg.method not in METHODS:
        raise ConfigError(f"method: must be one of {', '.join(METHODS)}, got {cfg.method!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError(f"seed: must be a nonnegative integer, got {cfg.seed!r}")
    ds.check_ratios(cfg.split_ratios)
    if not 0 < float(cfg.scribble_percent) <= 1:
        raise ConfigError(f"scribble.percent: must be in (0, 1], got {cfg.scribble_percent}")
    if cfg.scribble_mode not in ("run", "iid"):
        raise ConfigError(f"scribble.mode: must be run or iid, got {cfg.scribble_mode!r}")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "baseline", None):
        cfg.method = args.baseline
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "percent", None) is not None:
        cfg.scribble_percent = args.percent
    validate_config(cfg)
    return cfg


def _percent(value: str) -> float:
    """Accept 0.3 or 30 (%)."""
    v = float(value)
    return v / 100.0 if v > 1 else v


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = _apply_overrides(cfg, args)
    synth = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
    out = Path(args.out or cfg.dataset or "data/synth")
    items = generate(synth)
    manifest = ds.write_dataset(out, [it.image for it in items], [it.mask for it in items],
                                [it.instances for it in items])
    manifest = ds.split(manifest, cfg.split_ratios, cfg.split_seed)
    manifest.write()
    counts = {s: len(manifest.ids(s)) for s in ds.SPLITS}
    print(f"wrote {len(items)} images to {out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return EXIT_OK


def cmd_scribble(args) -> int:
    if not args.dataset:
        raise ConfigError("--dataset is required")
    p = _percent(args.percent) if args.percent is not None else 0.3
    if not 0 < p <= 1:
        raise ConfigError(f"--percent: must be in (0, 1] or (0, 100], got {args.percent}")
    seed = args.seed or 0
    manifest = ds.DatasetManifest.read(args.dataset)
    in_place = args.out is None
    out_dir = manifest.root / "scribbles" if in_place else Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    entries = []
    for k, e in enumerate(manifest.entries):
        if not e.mask:
            entries.append(e)
            continue
        mask = ds.read_mask(manifest.root / e.mask)
        s = generate_scribbles(mask, p, seed=seed + k, mode=args.mode)
        ds.write_scribbles(out_dir / f"{e.id}.png", s)
        total += s.n_scribbled()
        entries.append(replace(e, scribble=f"scribbles/{e.id}.png") if in_place else e)
    if in_place:
        ds.DatasetManifest(manifest.root, entries, manifest.ratios).write()
    print(f"wrote scribbles for {sum(1 for e in manifest.entries if e.mask)} masks to {out_dir} "
          f"(p={p:g}, {total} scribbled pixels)")
    return EXIT_OK


def _write_run_files(out: Path, cfg: ExperimentConfig):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.yaml", "w") as f:
        yaml.safe_dump(cfg.resolved(), f, sort_keys=False)
    seeds = {
        "seed": cfg.seed,
        "torch_seed": cfg.seed,
        "augmentation_stream": [cfg.seed, 1],
        "order_stream": [cfg.seed, 2],
        "split_seed": cfg.split_seed,
        "synth_seed": cfg.synth.seed,
        "torch_version": torch.__version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
    }
    (out / "seeds.json").write_text(json.dumps(seeds, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = _apply_overrides(cfg, args)
    if not cfg.dataset:
        raise ConfigError("dataset: no dataset given (config key or --dataset)")
    manifest, samples = ds.load_dataset(cfg.dataset)
    train_s = ds.samples_for_split(manifest, samples, "train")
    val_s = ds.samples_for_split(manifest, samples, "val")
    if not train_s:
        raise DataError(f"{cfg.dataset}: no samples assigned to the train split")
    out = Path(cfg.out)
    _write_run_files(out, cfg)
    hp = replace(cfg.hyperparams, rng_seed=cfg.seed)
    if cfg.method == "s2l":
        res = train(train_s, val_s, hp, cfg.model, cfg.augmentation, "s2l", out)
    else:
        res = run_baseline(cfg.method, train_s, val_s, hp, cfg.model, cfg.augmentation, out)
    best = "n/a" if res.best_val_iou is None else f"{res.best_val_iou:.4f} at epoch {res.best_epoch}"
    print(f"{METHOD_LABELS[cfg.method]}: trained {len(res.records)} epochs, best val IoU {best}; run dir {out}")
    return EXIT_OK


def _checkpoint_path(args) -> Path:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    path = Path(args.checkpoint)
    if path.is_dir():
        path = path / "best.pt" if (path / "best.pt").exists() else path / "last.pt"
    if not path.exists():
        raise DataError(f"{path}: checkpoint not found")
    return path


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args))
    model = model_from_checkpoint(ckpt)
    if not args.dataset:
        raise ConfigError("--dataset is required")
    manifest, samples = ds.load_dataset(args.dataset)
    chosen = [s for s in ds.samples_for_split(manifest, samples, args.split) if s.gt_mask is not None]
    if not chosen:
        raise DataError(f"{args.dataset}: no samples with masks in split {args.split!r}")
    ev = evaluate(model, chosen, ckpt["hyperparams"]["binarize_threshold"])
    label = METHOD_LABELS.get(ckpt["method"], ckpt["method"])
    print(f"{label} {args.split} (n={len(chosen)}): {format_score(ev['iou'], ev['mdice'])}")
    return EXIT_OK


def _prob_png(prob: np.ndarray) -> Image.Image:
    return Image.fromarray(np.round(np.clip(prob, 0, 1) * 65535).astype(np.uint16))


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(_checkpoint_path(args))
    model = model_from_checkpoint(ckpt)
    threshold = ckpt["hyperparams"]["binarize_threshold"]
    if args.images:
        items = [(Path(p).stem, ds.read_image(Path(p))) for p in args.images]
    elif args.dataset:
        manifest, samples = ds.load_dataset(args.dataset)
        items = [(s.id, s.image) for s in ds.samples_for_split(manifest, samples, args.split)]
    else:
        raise ConfigError("give --images or --dataset")
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, image in items:
        prob = model.predict(image)
        _prob_png(prob).save(out / f"{name}_prob.png")
        ds.write_mask(out / f"{name}_mask.png", prob > threshold)
        inst = extract_instances(prob, threshold)
        ds.write_instances(out / f"{name}_instances.png", inst)
    print(f"wrote predictions for {len(items)} images to {out}")
    return EXIT_OK


def render_overlay(scribble_codes: np.ndarray, pseudo_codes: np.ndarray) -> np.ndarray:
    """RGB overlay: pseudo FG white, pseudo BG black, ignored red, scribbles on top."""
    from .core import BG, FG

    rgb = np.empty(scribble_codes.shape + (3,), dtype=np.uint8)
    rgb[:] = COLOR_IGNORED
    rgb[pseudo_codes == FG] = COLOR_PSEUDO_FG
    rgb[pseudo_codes == BG] = COLOR_PSEUDO_BG
    rgb[scribble_codes == FG] = COLOR_FG_SCRIBBLE
    rgb[scribble_codes == BG] = COLOR_BG_SCRIBBLE
    return rgb


def cmd_overlay(args) -> int:
    from .core import FG

    ckpt = load_checkpoint(_checkpoint_path(args))
    tau = ckpt["hyperparams"]["tau"] if args.tau is None else args.tau
    bank = bank_from_checkpoint(ckpt)
    model = None if bank is not None and bank.initialized else model_from_checkpoint(ckpt)
    if not args.dataset or not args.out:
        raise ConfigError("--dataset and --out are required")
    manifest, samples = ds.load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for s in ds.samples_for_split(manifest, samples, args.split):
        if model is None and s.id in bank.states:
            state = bank[s.id]
        else:
            # no ensemble for this image: fall back to one prediction
            state = EnsembleState((model or model_from_checkpoint(ckpt)).predict(s.image), 1)
        pl = filter_pseudo_label(state, s.scribbles, tau)
        rgb = render_overlay(s.scribbles.codes, pl.codes)
        name = s.id
        if s.gt_mask is not None:
            fg = (pl.codes == FG) | s.scribbles.fg
            name += f"_iou{iou(fg, s.gt_mask > 0):.4f}"
        Image.fromarray(rgb).save(out / f"{name}.png")
        n += 1
    print(f"wrote {n} overlays to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scribble2label",
                                     description="Scribble-supervised cell segmentation with filtered pseudo-labels.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scribble", help="generate scribbles from masks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--percent", default=None, help="fraction of skeleton pixels, 0.3 or 30")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("run", "iid"), default="run")
    p.add_argument("--out", help="write PNGs here instead of updating the dataset")
    p.set_defaults(func=cmd_scribble)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--baseline", choices=("s2l", "pce_only", "naive_pseudo", "full"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report IoU[mDice] on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=ds.SPLITS, default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write probability maps and masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+")
    p.add_argument("--dataset")
    p.add_argument("--split", choices=ds.SPLITS, default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("overlay", help="render pseudo-label overlays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=ds.SPLITS, default="train")
    p.add_argument("--tau", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)
    return parser


def _fail(kind: str, code: int, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"scribble2label: error[E_{kind}]: {text}", file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("CONFIG", EXIT_CONFIG, exc)
    except (DataError, FormatError, InvalidInputError, FileNotFoundError) as exc:
        return _fail("DATA", EXIT_DATA, exc)
    except (Scribble2LabelError, RuntimeError, OSError) as exc:
        return _fail("RUNTIME", EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
