"""Task-model training: float training followed by post-training quantization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset
from .layers import Architecture, mlp
from .qmodel import QuantModel, quantize_model
from .rng import stream


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr: float = 3e-3
    batch_size: int = 64
    weight_decay: float = 0.0
    calib_samples: int = 2000


def accuracy(model: QuantModel, ds: Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(model.predict(ds.x) == ds.y))


def calibration_slice(ds: Dataset, n: int) -> np.ndarray:
    return ds.x[: min(n, len(ds))]


def train_task(arch: Architecture, train: Dataset, cfg: TrainConfig = TrainConfig(), seed: int = 0,
               test: Dataset | None = None) -> QuantModel:
    """Cross-entropy training in float arithmetic, then INT-8 quantization."""
    params = nn.init_params(arch, stream(seed, "task-init"))
    y = train.y

    def loss_fn(logits, idx):
        return nn.cross_entropy(logits, y[idx])

    params, history = nn.train(arch, params, train.x, loss_fn, epochs=cfg.epochs, batch_size=cfg.batch_size,
                               lr=cfg.lr, rng=stream(seed, "task-train"), weight_decay=cfg.weight_decay)
    model = quantize_model(arch, params, calibration_slice(train, cfg.calib_samples), alpha=1.0)
    model.meta["train_accuracy"] = accuracy(model, train)
    if test is not None:
        model.meta["test_accuracy"] = accuracy(model, test)
    model.meta["final_loss"] = history[-1] if history else None
    return model
