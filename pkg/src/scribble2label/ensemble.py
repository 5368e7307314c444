"""Exponential moving average of per-image predictions.

The bank holds one :class:`EnsembleState` per training image. It is refreshed
by an inference pass over un-augmented images at the end of the first epoch
(initialization) and then at the end of every ``gamma``-th epoch.
"""
from __future__ import annotations

import logging
from typing import Dict, Iterable

import numpy as np
import torch

from .core import EnsembleState
from .errors import EnsembleConsistencyError, InvalidInputError

log = logging.getLogger(__name__)


def ema_update(state: EnsembleState, pred, alpha: float) -> EnsembleState:
    """Fold one prediction into the running average.

    The first prediction initializes the average as-is; later ones are mixed
    in as ``alpha * pred + (1 - alpha) * y``.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1], got {alpha}")
    pred = np.asarray(pred, dtype=np.float64)
    if not state.initialized:
        return EnsembleState(np.clip(pred, 0.0, 1.0), 1)
    if pred.shape != state.y.shape:
        raise InvalidInputError(f"shape mismatch: prediction {pred.shape} vs ensemble {state.y.shape}")
    y = alpha * pred + (1.0 - alpha) * state.y
    # rounding can step a hair outside [0, 1] when both operands sit on the edge
    return EnsembleState(np.clip(y, 0.0, 1.0), state.n + 1)


def should_ensemble(epoch: int, gamma: int) -> bool:
    return epoch % gamma == 0


def expected_count(epoch: int, gamma: int) -> int:
    """Number of averaged predictions after ``epoch`` (initialization included)."""
    if epoch < 1:
        return 0
    return epoch // gamma + 1


class EnsembleBank:
    def __init__(self, ids: Iterable[str], alpha: float, gamma: int):
        self.ids = list(ids)
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInputError("duplicate sample ids in ensemble bank")
        self.alpha = alpha
        self.gamma = gamma
        self.states: Dict[str, EnsembleState] = {i: EnsembleState() for i in self.ids}
        self.passes = 0

    def __getitem__(self, sample_id: str) -> EnsembleState:
        try:
            return self.states[sample_id]
        except KeyError:
            raise EnsembleConsistencyError(f"sample id {sample_id!r} is not tracked by the ensemble bank") from None

    def update(self, sample_id: str, pred) -> EnsembleState:
        state = self[sample_id]
        self.states[sample_id] = new = ema_update(state, pred, self.alpha)
        return new

    @property
    def initialized(self) -> bool:
        return all(s.initialized for s in self.states.values())

    @property
    def n(self) -> int:
        counts = {s.n for s in self.states.values()}
        if len(counts) > 1:
            raise EnsembleConsistencyError(f"ensemble counts diverged across samples: {sorted(counts)}")
        return counts.pop() if counts else 0

    def state_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "passes": self.passes,
            "ids": list(self.ids),
            "n": [self.states[i].n for i in self.ids],
            "y": [None if self.states[i].y is None else torch.from_numpy(np.array(self.states[i].y))
                  for i in self.ids],
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "EnsembleBank":
        bank = cls(d["ids"], d["alpha"], d["gamma"])
        bank.passes = d["passes"]
        for i, n, y in zip(d["ids"], d["n"], d["y"]):
            bank.states[i] = EnsembleState(None if y is None else y.numpy(), n)
        return bank


@torch.no_grad()
def predict_raw(model, images) -> list:
    """Inference-mode probabilities for a list of un-augmented images."""
    was_training = model.training
    model.eval()
    try:
        return [model.predict(img) for img in images]
    finally:
        model.train(was_training)


def run_ensemble_pass(model, samples, bank: EnsembleBank) -> EnsembleBank:
    """Update every sample's average exactly once from the un-augmented image."""
    ids = [s.id for s in samples]
    if sorted(ids) != sorted(bank.ids):
        missing = sorted(set(bank.ids) ^ set(ids))
        raise EnsembleConsistencyError(f"ensemble pass sample set does not match bank: {missing}")
    preds = predict_raw(model, [s.image for s in samples])
    for s, p in zip(samples, preds):
        bank.update(s.id, p)
    bank.passes += 1
    log.debug("ensemble pass %d done, n=%d", bank.passes, bank.n)
    return bank
