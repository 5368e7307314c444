"""Two-stage training: scribble-only warm-up, then refinement with filtered pseudo-labels.

Methods:

``s2l``
    Warm-up on the scribbled loss, then scribbled + weighted unscribbled loss
    where pseudo-labels come from the prediction ensemble.
``pce_only``
    The same run with the unscribbled-loss weight forced to 0.
``naive_pseudo``
    Refinement thresholds the current (augmented-frame) prediction instead of
    the ensemble; the ensemble bank is never created.
``full``
    Dense supervision: every pixel labeled from the ground-truth mask.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from .core import FG, HyperParams, ImageSample, ScribbleMap, filter_pseudo_label, threshold_codes
from .ensemble import EnsembleBank, run_ensemble_pass, should_ensemble
from .errors import ConfigError, EnsembleConsistencyError, InvalidInputError, TrainingError
from .losses import scribbled_loss, total_loss
from .metrics import extract_instances, iou, mdice
from .model import AugmentationPolicy, ModelConfig, UNet, build_model, build_optimizer, image_to_tensor

log = logging.getLogger(__name__)

METHODS = ("s2l", "pce_only", "naive_pseudo", "full")
METHOD_LABELS = {"s2l": "S2L", "pce_only": "pCE Only", "naive_pseudo": "Pseudo-Label", "full": "Full"}
CHECKPOINT_FORMAT = "scribble2label-checkpoint"


def set_deterministic():
    torch.use_deterministic_algorithms(True)


@dataclass
class TrainResult:
    model: UNet
    records: List[dict]
    best_epoch: int = 0
    best_val_iou: Optional[float] = None
    best_state: Optional[dict] = None
    bank: Optional[EnsembleBank] = None

    def best_model(self) -> UNet:
        """A copy of the model restored to the best-validation weights (or the final ones)."""
        m = copy.deepcopy(self.model)
        if self.best_state is not None:
            m.load_state_dict(self.best_state)
        m.eval()
        return m


def evaluate(model: UNet, samples: Sequence[ImageSample], threshold: float = 0.5, min_area: int = 4) -> dict:
    """Mean per-image IoU and mDice over samples that carry a ground-truth mask."""
    per_image = []
    was_training = model.training
    model.eval()
    try:
        for s in samples:
            if s.gt_mask is None:
                continue
            prob = model.predict(s.image)
            pred_mask = prob > threshold
            gt_inst = s.gt_instances if s.gt_instances is not None else extract_instances(s.gt_mask, 0.5, 1)
            per_image.append({
                "id": s.id,
                "iou": iou(pred_mask, s.gt_mask),
                "mdice": mdice(extract_instances(prob, threshold, min_area), gt_inst),
            })
    finally:
        model.train(was_training)
    if not per_image:
        return {"iou": None, "mdice": None, "per_image": []}
    return {
        "iou": float(np.mean([r["iou"] for r in per_image])),
        "mdice": float(np.mean([r["mdice"] for r in per_image])),
        "per_image": per_image,
    }


def pseudo_label_quality(bank: EnsembleBank, samples: Sequence[ImageSample], tau: float) -> dict:
    """Pooled IoU of (pseudo-FG plus scribbled FG) against the masks, and label coverage.

    Ignored pixels count as not-foreground, so the score rewards both
    correctness and coverage of the filtered labels.
    """
    inter = union = generated = free = 0
    for s in samples:
        pl = filter_pseudo_label(bank[s.id], s.scribbles, tau)
        generated += pl.n_generated()
        free += int(np.count_nonzero(~s.scribbles.scribbled))
        if s.gt_mask is None:
            continue
        fg = (pl.codes == FG) | s.scribbles.fg
        gt = s.gt_mask > 0
        inter += int(np.count_nonzero(fg & gt))
        union += int(np.count_nonzero(fg | gt))
    return {
        "pseudo_iou": (inter / union if union else None),
        "pseudo_coverage": (generated / free if free else 0.0),
    }


class Trainer:
    def __init__(self, train_samples: Sequence[ImageSample], val_samples: Sequence[ImageSample] = (),
                 hp: HyperParams = HyperParams(), model_config: ModelConfig = ModelConfig(),
                 policy: AugmentationPolicy = AugmentationPolicy(), method: str = "s2l",
                 out_dir=None, min_area: int = 4):
        if method not in METHODS:
            raise ConfigError(f"method: must be one of {', '.join(METHODS)}, got {method!r}")
        if not train_samples:
            raise InvalidInputError("training set is empty")
        if method == "pce_only":
            hp = replace(hp, lambda_up=0.0)
        self.method = method
        self.hp = hp
        self.model_config = model_config
        self.policy = policy
        self.min_area = min_area
        self.out_dir = Path(out_dir) if out_dir is not None else None

        if method == "full":
            missing = [s.id for s in train_samples if s.gt_mask is None]
            if missing:
                raise InvalidInputError(f"full supervision needs masks; missing for {missing[:5]}")
            train_samples = [replace(s, scribbles=ScribbleMap.from_mask(s.gt_mask)) for s in train_samples]
        for s in train_samples:
            if s.scribbles.n_scribbled() == 0:
                raise InvalidInputError(f"{s.id}: training sample has no scribbled pixels")
        if policy.crop_size is None and len({s.shape for s in train_samples}) > 1:
            raise ConfigError("augmentation.crop_size: training images differ in size; set a crop size")
        self.train_samples = list(train_samples)
        self.val_samples = list(val_samples)

        torch.manual_seed(hp.rng_seed)
        self.model = build_model(model_config)
        self.optimizer = build_optimizer(self.model, hp.learning_rate)
        self.aug_rng = np.random.default_rng([hp.rng_seed, 1])
        self.order_rng = np.random.default_rng([hp.rng_seed, 2])
        self.bank = (EnsembleBank([s.id for s in self.train_samples], hp.alpha, hp.gamma)
                     if self.uses_ensemble else None)
        self.epoch = 0
        self.records: List[dict] = []
        self.best_val_iou: Optional[float] = None
        self.best_epoch = 0
        self.best_state: Optional[dict] = None

    @property
    def uses_ensemble(self) -> bool:
        return self.method in ("s2l", "pce_only")

    def refining(self, epoch: int) -> bool:
        return epoch > self.hp.warmup_epochs and self.method != "full"

    # ------------------------------------------------------------------ batches

    def _pseudo_codes(self, sample: ImageSample) -> np.ndarray:
        if not self.bank[sample.id].initialized:
            raise EnsembleConsistencyError(
                f"refinement at epoch {self.epoch} with an uninitialized ensemble for {sample.id}")
        # rebuilt from the latest snapshot every time a batch is assembled
        return filter_pseudo_label(self.bank[sample.id], sample.scribbles, self.hp.tau).codes

    def _assemble(self, batch: Sequence[ImageSample], with_pseudo: bool):
        images, scribbles, pseudo = [], [], []
        for s in batch:
            draw = self.policy.draw(self.aug_rng, s.shape)
            maps = [s.scribbles.codes]
            if with_pseudo:
                maps.append(self._pseudo_codes(s))
            out = draw.apply(s.image, *maps)
            images.append(image_to_tensor(out[0]))
            scribbles.append(out[1])
            if with_pseudo:
                pseudo.append(out[2])
        x = torch.stack(images)
        scr = np.stack(scribbles)
        pl = np.stack(pseudo) if with_pseudo else None
        return x, scr, pl

    def _step(self, batch, epoch: int, batch_idx: int) -> dict:
        refine = self.refining(epoch)
        with_bank = refine and self.method in ("s2l", "pce_only")
        x, scr, pl = self._assemble(batch, with_bank)
        logits = self.model(x)[:, 0]
        eps = self.hp.prob_clamp_eps
        if refine and self.method == "naive_pseudo":
            with torch.no_grad():
                p = torch.sigmoid(logits).double().numpy()
            pl = threshold_codes(p, scr, self.hp.tau)
        if refine:
            loss = total_loss(logits, scr, pl, self.hp.lambda_up, eps=eps, from_logits=True)
            sp, up = loss.sp, loss.up
            n_gen = int(np.count_nonzero(pl))
        else:
            sp = loss = scribbled_loss(logits, scr, eps=eps, from_logits=True)
            up = None
            n_gen = 0
        value = loss.value
        if not torch.isfinite(value):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}, batch {batch_idx}: "
                f"L_sp={float(sp)}, L_up={None if up is None else float(up)}, total={float(value)}")
        self.optimizer.zero_grad(set_to_none=True)
        value.backward()
        self.optimizer.step()
        return {
            "sp": float(sp), "up": 0.0 if up is None else float(up), "total": float(value.detach()),
            "n_gen": n_gen, "n_free": int(np.count_nonzero(scr == 0)),
        }

    # ------------------------------------------------------------------ epochs

    def train_epoch(self) -> dict:
        """One pass of minibatch updates, then the ensemble pass if this epoch qualifies."""
        if self.epoch >= self.hp.total_epochs:
            raise TrainingError(f"already trained for {self.hp.total_epochs} epochs")
        self.epoch += 1
        i = self.epoch
        self.model.train()
        bs = self.hp.batch_size
        steps = []
        # small training sets: several shuffled passes make up one epoch
        for _ in range(self.hp.passes_per_epoch):
            order = self.order_rng.permutation(len(self.train_samples))
            for start in range(0, len(order), bs):
                batch = [self.train_samples[k] for k in order[start:start + bs]]
                steps.append(self._step(batch, i, len(steps)))

        rec = {
            "epoch": i,
            "method": self.method,
            "stage": "refine" if self.refining(i) else "warmup",
            "loss_sp": float(np.mean([s["sp"] for s in steps])),
            "loss_up": float(np.mean([s["up"] for s in steps])),
            "loss_total": float(np.mean([s["total"] for s in steps])),
            "coverage": (sum(s["n_gen"] for s in steps) / max(1, sum(s["n_free"] for s in steps))
                         if self.refining(i) else None),
            "ensembled": False,
            "n": None,
        }
        if self.bank is not None:
            passes = 0
            if i == 1:
                run_ensemble_pass(self.model, self.train_samples, self.bank)
                passes += 1
            if should_ensemble(i, self.hp.gamma):
                run_ensemble_pass(self.model, self.train_samples, self.bank)
                passes += 1
            rec["ensembled"] = passes > 0
            rec["n"] = self.bank.n
            if passes and should_ensemble(i, self.hp.gamma):
                rec.update(pseudo_label_quality(self.bank, self.train_samples, self.hp.tau))
        if self.val_samples:
            ev = evaluate(self.model, self.val_samples, self.hp.binarize_threshold, self.min_area)
            rec["val_iou"], rec["val_mdice"] = ev["iou"], ev["mdice"]
            if ev["iou"] is not None and (self.best_val_iou is None or ev["iou"] > self.best_val_iou):
                self.best_val_iou = ev["iou"]
                self.best_epoch = i
                self.best_state = copy.deepcopy(self.model.state_dict())
                if self.out_dir is not None:
                    self.save_checkpoint(self.out_dir / "best.pt")
        self.records.append(rec)
        if self.out_dir is not None:
            with open(self.out_dir / "metrics.jsonl", "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        log.info("epoch %d %s L_sp=%.4f L_up=%.4f val_iou=%s", i, rec["stage"], rec["loss_sp"],
                 rec["loss_up"], rec.get("val_iou"))
        return rec

    def fit(self) -> TrainResult:
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "metrics.jsonl").write_text("")
        while self.epoch < self.hp.total_epochs:
            self.train_epoch()
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "last.pt")
        return TrainResult(self.model, self.records, self.best_epoch, self.best_val_iou, self.best_state,
                           self.bank)

    # ------------------------------------------------------------------ checkpoints

    def checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "method": self.method,
            "epoch": self.epoch,
            "n": None if self.bank is None else self.bank.n,
            "hyperparams": asdict(self.hp),
            "model_config": asdict(self.model_config),
            "augmentation": self.policy.to_dict(),
            "model_state": self.model.state_dict(),
            "optimizer_state": self.optimizer.state_dict(),
            "bank": None if self.bank is None else self.bank.state_dict(),
            "best_val_iou": self.best_val_iou,
            "best_epoch": self.best_epoch,
        }

    def save_checkpoint(self, path):
        torch.save(self.checkpoint(), path)


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"{path}: not a scribble2label checkpoint")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> UNet:
    model = UNet(ModelConfig(**ckpt["model_config"]))
    model.load_state_dict(ckpt["model_state"])
    model.eval()
    return model


def bank_from_checkpoint(ckpt: dict) -> Optional[EnsembleBank]:
    return None if ckpt.get("bank") is None else EnsembleBank.from_state_dict(ckpt["bank"])


def train(train_samples, val_samples=(), hp: HyperParams = HyperParams(), model_config: ModelConfig = ModelConfig(),
          policy: AugmentationPolicy = AugmentationPolicy(), method: str = "s2l", out_dir=None,
          min_area: int = 4) -> TrainResult:
    set_deterministic()
    trainer = Trainer(train_samples, val_samples, hp, model_config, policy, method, out_dir, min_area)
    return trainer.fit()


def run_baseline(kind: str, train_samples, val_samples=(), hp: HyperParams = HyperParams(),
                 model_config: ModelConfig = ModelConfig(), policy: AugmentationPolicy = AugmentationPolicy(),
                 out_dir=None, min_area: int = 4) -> TrainResult:
    if kind not in ("pce_only", "naive_pseudo", "full"):
        raise ConfigError(f"baseline: must be pce_only, naive_pseudo or full, got {kind!r}")
    return train(train_samples, val_samples, hp, model_config, policy, kind, out_dir, min_area)
