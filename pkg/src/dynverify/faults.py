"""Bit-flip fault injection into INT-8 models and seeded random campaigns."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import yaml

from .data import Dataset
from .qmodel import QuantModel
from .rng import stream


class FaultAddressError(IndexError):
    pass


class EmptyCampaign(ValueError):
    pass


class Target(NamedTuple):
    tensor: int  # index into model.codes (weight, then bias, per dense/conv layer)
    index: int  # flat C-order index in that tensor
    bit: int  # 0 (LSB) .. 7 (sign bit)


@dataclass(frozen=True)
class FaultSpec:
    targets: tuple[Target, ...]
    persistence: str = "transient"

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(Target(*map(int, t)) for t in self.targets))
        if self.persistence not in ("transient", "persistent"):
            raise ValueError(f"persistence must be transient or persistent, got {self.persistence!r}")


def check_targets(model: QuantModel, targets: Iterable) -> None:
    for t in targets:
        tensor, index, bit = t
        if not 0 <= tensor < len(model.codes):
            raise FaultAddressError(f"tensor {tensor} out of range (model has {len(model.codes)})")
        if not 0 <= index < model.codes[tensor].size:
            raise FaultAddressError(f"index {index} out of range for tensor {tensor} of size {model.codes[tensor].size}")
        if not 0 <= bit <= 7:
            raise FaultAddressError(f"bit {bit} outside [0, 7]")


def apply_fault(model: QuantModel, spec: FaultSpec) -> QuantModel:
    """Copy of ``model`` with every target bit XOR-flipped."""
    check_targets(model, spec.targets)
    out = model.copy()
    out.flip_inplace(spec.targets)
    return out


@dataclass(frozen=True)
class CampaignConfig:
    n_runs: int = 50_000
    n_flips_per_run: int = 1
    seed: int = 0
    scope: str = "weights"  # or "weights+activations"
    dataset: str = "builtin"

    def __post_init__(self):
        if self.n_flips_per_run < 1:
            raise ValueError("n_flips_per_run must be positive")
        if self.n_runs < 0:
            raise ValueError("n_runs must be non-negative")
        if self.scope not in ("weights", "weights+activations"):
            raise ValueError(f"unknown scope {self.scope!r}")

    # structured text form uses the documented short keys
    _keys = {"seed": "seed", "runs": "n_runs", "flips": "n_flips_per_run", "scope": "scope", "dataset": "dataset"}

    @classmethod
    def from_mapping(cls, d: dict) -> "CampaignConfig":
        unknown = set(d) - set(cls._keys)
        if unknown:
            raise ValueError(f"unknown campaign keys: {sorted(unknown)}")
        return cls(**{cls._keys[k]: v for k, v in d.items()})

    def to_mapping(self) -> dict:
        return {k: getattr(self, attr) for k, attr in self._keys.items()}

    @classmethod
    def load(cls, path: str | Path) -> "CampaignConfig":
        return cls.from_mapping(yaml.safe_load(Path(path).read_text()) or {})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_mapping(), sort_keys=True))


@dataclass
class RiskProbMatrix:
    R: np.ndarray
    failure_count: int
    run_count: int

    @property
    def empty(self) -> bool:
        return self.failure_count == 0

    @classmethod
    def from_counts(cls, counts: np.ndarray, run_count: int) -> "RiskProbMatrix":
        counts = np.asarray(counts, dtype=np.int64).copy()
        np.fill_diagonal(counts, 0)
        total = int(counts.sum())
        r = counts / total if total else np.zeros(counts.shape)
        return cls(r, total, run_count)

    def display(self) -> np.ndarray:
        """Max-normalised copy for plotting."""
        m = self.R.max()
        return self.R / m if m > 0 else self.R.copy()


@dataclass
class CampaignResult:
    """Per-run outcome log of a fault campaign.

    ``clean``/``faulty`` are fault-free and faulty task labels for the input
    ``sample`` drawn in each run; ``flagged`` records the threshold detector's
    verdict on the faulty run when one was attached.
    """

    num_classes: int
    sample: np.ndarray
    clean: np.ndarray
    faulty: np.ndarray
    flagged: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.sample)

    @property
    def failed(self) -> np.ndarray:
        return self.clean != self.faulty

    def counts(self, mask: np.ndarray | None = None) -> np.ndarray:
        sel = self.failed if mask is None else self.failed & mask
        c = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        np.add.at(c, (self.clean[sel], self.faulty[sel]), 1)
        return c

    def risk(self) -> RiskProbMatrix:
        return RiskProbMatrix.from_counts(self.counts(), self.n_runs)

    def merge(self, other: "CampaignResult") -> "CampaignResult":
        flagged = None
        if self.flagged is not None and other.flagged is not None:
            flagged = np.concatenate([self.flagged, other.flagged])
        return CampaignResult(self.num_classes, np.concatenate([self.sample, other.sample]),
                              np.concatenate([self.clean, other.clean]), np.concatenate([self.faulty, other.faulty]),
                              flagged, dict(self.meta))


def _bit_table(model: QuantModel, scope: str):
    sizes = [c.size for c in model.codes]
    act_sizes = []
    if scope == "weights+activations":
        if any(qp is None for qp in model.act_qparams):
            raise ValueError("activation faults need a model with calibrated activation quantizers")
        par = model.arch.parametric_indices()
        act_sizes = [math.prod(model.arch.shapes[i]) for i in par]
    bounds = np.cumsum([0] + [8 * s for s in sizes + act_sizes])
    return len(sizes), bounds


def sample_targets(model: QuantModel, n: int, rng: np.random.Generator, scope: str = "weights"):
    """Draw ``n`` distinct bit positions uniformly over the fault scope.

    Returns ``(weight_targets, activation_targets)`` as int arrays of
    ``(tensor, index, bit)`` rows.
    """
    n_tensors, bounds = _bit_table(model, scope)
    total = int(bounds[-1])
    pos = np.array([rng.integers(total)]) if n == 1 else rng.choice(total, size=n, replace=False)
    pos = np.asarray(pos, dtype=np.int64)
    k = np.searchsorted(bounds, pos, side="right") - 1
    idx, bit = np.divmod(pos - bounds[k], 8)
    rows = np.stack([k, idx, bit], axis=1)
    is_w = k < n_tensors
    acts = rows[~is_w]
    acts[:, 0] -= n_tensors
    return rows[is_w], acts


def run_random_campaign(task: QuantModel, config: CampaignConfig, dataset: Dataset, detector=None,
                        runs: range | None = None) -> CampaignResult:
    """Seeded random bit-flip campaign on a private copy of ``task``.

    Each run draws one input and ``n_flips_per_run`` bits from its own stream
    ``(seed, run index)``, so any sub-range of runs can be executed separately
    and merged. A failure is a faulty label that differs from the fault-free one.
    """
    if config.n_runs == 0:
        raise EmptyCampaign("campaign has zero runs")
    if len(dataset) == 0:
        raise EmptyCampaign("campaign dataset is empty")
    runs = range(config.n_runs) if runs is None else runs
    work = task.copy()
    clean_all = task.predict(dataset.x)
    n = len(runs)
    sample = np.empty(n, np.int64)
    faulty = np.empty(n, np.int64)
    flagged = np.zeros(n, bool) if detector is not None else None
    for k, r in enumerate(runs):
        g = stream(config.seed, "campaign", r)
        s = int(g.integers(len(dataset)))
        wt, at = sample_targets(work, config.n_flips_per_run, g, config.scope)
        work.flip_inplace(wt)
        rec = [] if detector is not None else None
        out = work.forward(dataset.x[s], act_fault=[tuple(t) for t in at] or None, record=rec)
        work.flip_inplace(wt)
        sample[k] = s
        faulty[k] = int(np.argmax(out))
        if detector is not None:
            flagged[k] = detector.flags(rec)
    return CampaignResult(task.num_classes, sample, clean_all[sample], faulty, flagged,
                          {"seed": config.seed, "flips": config.n_flips_per_run, "scope": config.scope, "kind": "random"})


def precision_vector(model: QuantModel, dataset: Dataset) -> np.ndarray:
    """Per-class precision; a class that is never predicted scores 0."""
    pred = model.predict(dataset.x)
    n = model.num_classes
    out = np.zeros(n)
    for c in range(n):
        hit = pred == c
        if hit.any():
            out[c] = float(np.mean(dataset.y[hit] == c))
    return out


# -- exports ----------------------------------------------------------------------


def save_risk_csv(risk: RiskProbMatrix, path: str | Path, counts: np.ndarray | None = None) -> None:
    n = risk.R.shape[0]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "col", "probability", "count"])
        for i in range(n):
            for j in range(n):
                c = int(counts[i, j]) if counts is not None else int(round(risk.R[i, j] * risk.failure_count))
                w.writerow([i, j, repr(float(risk.R[i, j])), c])


def load_risk_csv(path: str | Path, run_count: int = 0) -> tuple[RiskProbMatrix, np.ndarray]:
    rows = list(csv.DictReader(open(path, newline="")))
    n = int(math.isqrt(len(rows)))
    r = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=np.int64)
    for row in rows:
        i, j = int(row["row"]), int(row["col"])
        r[i, j] = float(row["probability"])
        counts[i, j] = int(row["count"])
    return RiskProbMatrix(r, int(counts.sum()), run_count), counts


def save_log_csv(result: CampaignResult, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "sample", "clean", "faulty", "flagged"])
        for k in range(result.n_runs):
            fl = "" if result.flagged is None else int(result.flagged[k])
            w.writerow([k, int(result.sample[k]), int(result.clean[k]), int(result.faulty[k]), fl])


def load_log_csv(path: str | Path, num_classes: int, meta: dict | None = None) -> CampaignResult:
    rows = list(csv.DictReader(open(path, newline="")))
    col = lambda k: np.array([int(r[k]) for r in rows], dtype=np.int64)
    flagged = None
    if rows and rows[0]["flagged"] != "":
        flagged = col("flagged").astype(bool)
    empty = np.zeros(0, np.int64)
    return CampaignResult(num_classes, col("sample") if rows else empty, col("clean") if rows else empty,
                          col("faulty") if rows else empty, flagged, dict(meta or {}))


def campaign_summary(result: CampaignResult) -> dict:
    risk = result.risk()
    return {
        "runs": result.n_runs,
        "failures": risk.failure_count,
        "failure_rate": risk.failure_count / result.n_runs if result.n_runs else None,
        "empty": risk.empty,
        "num_classes": result.num_classes,
        "meta": result.meta,
    }
