"""Checker training by knowledge distillation from the task model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset
from .layers import flops, scale_architecture, with_num_classes
from .qmodel import QuantModel, quantize_model
from .rng import stream


class InvalidTemperature(ValueError):
    pass


@dataclass(frozen=True)
class KDConfig:
    temperature: float = 4.0
    mix: float = 0.9  # weight of the distillation term
    epochs: int = 30
    lr: float = 3e-3
    batch_size: int = 64
    calib_samples: int = 2000

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidTemperature(f"temperature must be positive, got {self.temperature}")
        if not 0 <= self.mix <= 1:
            raise ValueError(f"mix must lie in [0, 1], got {self.mix}")


@dataclass(frozen=True)
class ConsistencySample:
    alpha: float
    consistency: float
    flops_ratio: float


def soften(logits, temperature: float) -> np.ndarray:
    """Temperature softmax along the last axis."""
    if not temperature > 0:
        raise InvalidTemperature(f"temperature must be positive, got {temperature}")
    return nn.softmax(np.asarray(logits, dtype=np.float64) / temperature)


def cluster_matrix(label_map, num_classes: int) -> np.ndarray:
    """0/1 matrix M (N x K) with M[i, label_map[i]] = 1."""
    lam = np.asarray(label_map)
    m = np.zeros((num_classes, lam.max() + 1))
    m[np.arange(num_classes), lam] = 1.0
    return m


def _is_identity(label_map, n) -> bool:
    return label_map is None or (len(label_map) == n and np.array_equal(np.asarray(label_map), np.arange(n)))


def kd_loss_and_grad(checker_logits, teacher_logits, labels, cfg: KDConfig, label_map=None):
    """Mean distillation loss over a batch and its gradient w.r.t. the checker logits.

    loss = mix * T^2 * CE(teacher_T -> checker_T) + (1 - mix) * CE(label -> checker)

    With a ``label_map`` the teacher's softened distribution is summed within
    each cluster and ``labels`` are taken as already mapped.
    """
    z = np.atleast_2d(np.asarray(checker_logits, dtype=np.float64))
    zt = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    t, lam = cfg.temperature, cfg.mix
    n = z.shape[0]
    target = soften(zt, t)
    if not _is_identity(label_map, zt.shape[1]):
        target = target @ cluster_matrix(label_map, zt.shape[1])
    if target.shape != z.shape:
        raise ValueError(f"teacher gives {target.shape[1]} classes, checker has {z.shape[1]}")
    logq_t = nn.log_softmax(z / t)
    logq = nn.log_softmax(z)
    soft_ce = -(target * logq_t).sum(axis=1)
    hard_ce = -logq[np.arange(n), y]
    loss = lam * t * t * soft_ce + (1 - lam) * hard_ce
    # d soft_ce / dz = (q_T - target) / T, hence the single factor of T below
    g = lam * t * (np.exp(logq_t) - target)
    hard = np.exp(logq)
    hard[np.arange(n), y] -= 1.0
    g += (1 - lam) * hard
    return float(loss.mean()), g / n


def kd_loss(checker_logits, teacher_logits, label, cfg: KDConfig, label_map=None) -> float:
    return kd_loss_and_grad(checker_logits, teacher_logits, label, cfg, label_map)[0]


def checker_architecture(task: QuantModel, alpha: float, num_classes: int | None = None):
    arch = scale_architecture(task.arch, alpha)
    if num_classes is not None and num_classes != task.num_classes:
        arch = with_num_classes(arch, num_classes)
    return arch


def train_checker(
    task: QuantModel,
    alpha: float,
    cfg: KDConfig,
    train: Dataset,
    heldout: Dataset,
    seed: int = 0,
    label_map=None,
    protected=None,
) -> tuple[QuantModel, ConsistencySample]:
    """Distil a width-scaled copy of ``task`` and measure held-out consistency.

    The student's initialisation and batch order depend only on ``seed`` and
    ``alpha``, so the identity labelling reproduces the un-simplified checker.
    """
    from .runtime import measured_consistency

    n = task.num_classes
    lam = None if _is_identity(label_map, n) else np.asarray(label_map)
    k = n if lam is None else int(lam.max()) + 1
    arch = checker_architecture(task, alpha, k)
    key = f"{alpha:.6f}"
    params = nn.init_params(arch, stream(seed, "checker-init", key))
    teacher = task.logits(train.x)
    y = train.y if lam is None else lam[train.y]

    def loss_fn(logits, idx):
        return kd_loss_and_grad(logits, teacher[idx], y[idx], cfg, lam)

    params, history = nn.train(arch, params, train.x, loss_fn, epochs=cfg.epochs, batch_size=cfg.batch_size,
                               lr=cfg.lr, rng=stream(seed, "checker-train", key))
    checker = quantize_model(arch, params, train.x[: cfg.calib_samples], alpha=alpha,
                             meta={"role": "checker", "num_clusters": k})
    checker.meta["final_loss"] = history[-1] if history else None
    cons = measured_consistency(task, checker, heldout.x, lam, protected)
    return checker, ConsistencySample(alpha, cons, flops(checker) / flops(task))
