"""Desk-scale synthetic benchmark shared by the acceptance suite and the CLI."""
from __future__ import annotations

from dataclasses import replace
from typing import Dict, List

import numpy as np

from .core import HyperParams, ImageSample
from .datasets import split_sizes
from .model import AugmentationPolicy, ModelConfig
from .scribblegen import generate_scribbles
from .synthdata import SynthConfig, generate
from .trainer import TrainResult, evaluate, train

BENCH_HP = HyperParams(tau=0.8, alpha=0.2, gamma=5, lambda_up=0.5, warmup_epochs=20, total_epochs=60,
                       learning_rate=1e-3, batch_size=2)
# group norm: batch statistics over two 64x64 crops are too noisy for eval-mode batch norm
BENCH_MODEL = ModelConfig(norm="group")
# sharp, bright cell rims so the boundary is visible to a 3-level U-Net
BENCH_SYNTH = SynthConfig(n_images=40, size=(64, 64), gradient_amplitude=0.05, blur_sigma=0.0, edge_level=0.8)
BENCH_POLICY = AugmentationPolicy()


def synthetic_splits(synth: SynthConfig = BENCH_SYNTH, p: float = 0.3, scribble_seed: int = 0,
                     ratios=(0.6, 0.2, 0.2), split_seed: int = 0) -> Dict[str, List[ImageSample]]:

    items = generate(synth)
    samples = [
        ImageSample(f"img{k:03d}", it.image, generate_scribbles(it.mask, p, seed=scribble_seed + k),
                    it.mask, it.instances)
        for k, it in enumerate(items)
    ]
    n_train, n_val, _ = split_sizes(len(samples), ratios)
    order = np.random.default_rng(split_seed).permutation(len(samples))
    pick = lambda idx: [samples[k] for k in sorted(idx)]
    return {
        "train": pick(order[:n_train]),
        "val": pick(order[n_train:n_train + n_val]),
        "test": pick(order[n_train + n_val:]),
    }


def run_method(splits, method: str, seed: int, hp: HyperParams = BENCH_HP,
               model_config: ModelConfig = BENCH_MODEL, policy: AugmentationPolicy = BENCH_POLICY,
               out_dir=None) -> dict:
    res: TrainResult = train(splits["train"], splits["val"], replace(hp, rng_seed=seed), model_config, policy,
                             method, out_dir)
    test = evaluate(res.best_model(), splits["test"], hp.binarize_threshold)
    final = evaluate(res.model, splits["test"], hp.binarize_threshold)
    return {"method": method, "seed": seed, "test_iou": test["iou"], "test_mdice": test["mdice"],
            "final_test_iou": final["iou"], "best_epoch": res.best_epoch, "records": res.records}
