"""Progressive bit search: gradient-ranked, greedily committed weight bit flips."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset
from .faults import CampaignResult, Target
from .qmodel import QuantModel
from .quant import flipped_codes


@dataclass
class BFAResult:
    flips: list[Target]
    accuracy: list[float]  # attack-batch accuracy: clean first, then after each committed flip
    loss: list[float]
    model: QuantModel
    early_stop: bool = False
    heldout_accuracy: list[float] = field(default_factory=list)


def _loss_acc(model: QuantModel, x, y) -> tuple[float, float]:
    logits = model.forward(x)
    loss, _ = nn.cross_entropy(logits, y)
    return loss, float(np.mean(np.argmax(logits, axis=1) == y))


def _tensor_grads(model: QuantModel, x, y) -> list[np.ndarray]:
    caches: list = []
    logits = nn.forward(model.arch, model.float_params(), x, model.act_qparams, caches=caches)
    _, g = nn.cross_entropy(logits, y)
    grads = nn.backward(model.arch, model.float_params(), caches, g)
    out = []
    for p, role in model.layout:
        out.append(grads[p][0] if role == "weight" else grads[p][1])
    return out


def rank_candidates(model: QuantModel, grads: list[np.ndarray], n: int, exclude=()) -> list[Target]:
    """Top-``n`` bits by first-order loss increase grad * (flipped - current) * scale.

    Only bits whose linearised effect raises the loss are returned.
    """
    gains, owners = [], []
    for t, (codes, qp, g) in enumerate(zip(model.codes, model.qparams, grads)):
        c = codes.reshape(-1)
        delta = (flipped_codes(c).astype(np.float64) - c[:, None].astype(np.float64)) * qp.scale
        gains.append((g.reshape(-1)[:, None] * delta).reshape(-1))
        owners.append(np.full(c.size * 8, t))
    gain = np.concatenate(gains)
    owner = np.concatenate(owners)
    starts = np.cumsum([0] + [8 * c.size for c in model.codes])
    for t, idx, bit in exclude:
        gain[starts[t] + 8 * idx + bit] = -np.inf
    n = min(n, gain.size)
    top = np.argpartition(-gain, n - 1)[:n]
    top = top[np.lexsort((top, -gain[top]))]
    out = []
    for pos in top:
        if not gain[pos] > 0:
            break
        t = int(owner[pos])
        idx, bit = divmod(int(pos - starts[t]), 8)
        out.append(Target(t, idx, bit))
    return out


def run_bfa(task: QuantModel, dataset: Dataset, max_flips: int, n_candidates: int = 20,
            heldout: Dataset | None = None) -> BFAResult:
    """Attack a private copy of ``task`` on ``dataset`` (the attacker's batch).

    Each step ranks bits by gradient, re-evaluates the top candidates exactly,
    and commits the one with the highest loss among those that do not raise
    batch accuracy. Stops after ``max_flips``, once accuracy reaches chance,
    or when no candidate increases the loss.
    """
    if len(dataset) == 0:
        raise ValueError("attack dataset is empty")
    work = task.copy()
    x, y = dataset.x, dataset.y
    loss, acc = _loss_acc(work, x, y)
    res = BFAResult([], [acc], [loss], work)
    if heldout is not None:
        res.heldout_accuracy.append(float(np.mean(work.predict(heldout.x) == heldout.y)))
    chance = 1.0 / task.num_classes
    while len(res.flips) < max_flips and acc > chance:
        cands = rank_candidates(work, _tensor_grads(work, x, y), n_candidates, exclude=res.flips)
        best = None
        for t in cands:
            work.flip_inplace([t])
            l, a = _loss_acc(work, x, y)
            work.flip_inplace([t])
            if a <= acc and (best is None or l > best[1]):
                best = (t, l, a)
        if best is None or best[1] <= loss:
            res.early_stop = True
            break
        t, loss, acc = best
        work.flip_inplace([t])
        res.flips.append(t)
        res.accuracy.append(acc)
        res.loss.append(loss)
        if heldout is not None:
            res.heldout_accuracy.append(float(np.mean(work.predict(heldout.x) == heldout.y)))
    return res


def bfa_outcome(task: QuantModel, attacked: QuantModel, x: np.ndarray, detector=None) -> CampaignResult:
    """Failure log of the attacked model over every input in ``x``."""
    clean = task.predict(x)
    faulty = attacked.predict(x)
    flagged = detector.flag_batch(attacked, x) if detector is not None else None
    return CampaignResult(task.num_classes, np.arange(len(x)), clean, faulty, flagged, {"kind": "bfa"})
