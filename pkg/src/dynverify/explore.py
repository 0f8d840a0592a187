"""Two-stage checker design exploration: width sweep, then task simplification."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import ClusterLabeling
from .consistency import ConsistencyFit, fit_consistency, optimal_alpha
from .data import Dataset
from .distill import ConsistencySample, KDConfig, train_checker
from .faults import CampaignResult
from .qmodel import QuantModel
from .runtime import DyvePair, MetricsReport, evaluate_dyve, overhead_c

DEFAULT_ALPHAS = (0.05, 0.1, 0.2, 0.4, 0.7, 1.0)


@dataclass
class ArchitectureSweep:
    samples: list[ConsistencySample]
    fit: ConsistencyFit
    alpha_star: float
    predicted_oc: float
    checkers: dict = field(default_factory=dict)  # alpha -> QuantModel

    def rows(self) -> list[dict]:
        return [{"alpha": s.alpha, "consistency": s.consistency, "flops_ratio": s.flops_ratio,
                 "O_C": overhead_c(s.flops_ratio, s.consistency)} for s in self.samples]

    def save_csv(self, path: str | Path) -> None:
        write_rows(path, self.rows(), ["alpha", "consistency", "flops_ratio", "O_C"])

    def fit_dict(self) -> dict:
        return {"a": self.fit.a, "b": self.fit.b, "alpha_star": self.alpha_star, "predicted_O_C": self.predicted_oc,
                "valid_range": list(self.fit.valid_range)}


def write_rows(path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in columns})


def read_rows(path) -> list[dict]:
    out = []
    for r in csv.DictReader(open(path, newline="")):
        out.append({k: (float(v) if any(ch in v for ch in ".e") or v.lstrip("-").isdigit() else v) for k, v in r.items()})
    return out


def explore_architecture(task: QuantModel, train: Dataset, heldout: Dataset, cfg: KDConfig,
                         alphas: Sequence[float] = DEFAULT_ALPHAS, seed: int = 0) -> ArchitectureSweep:
    """Distil one checker per multiplier, fit the consistency curve, pick alpha*."""
    samples, checkers = [], {}
    for a in alphas:
        checker, s = train_checker(task, a, cfg, train, heldout, seed=seed)
        samples.append(s)
        checkers[a] = checker
    fit = fit_consistency(samples)
    alpha_star, predicted = optimal_alpha(fit)
    return ArchitectureSweep(samples, fit, alpha_star, predicted, checkers)


def evaluate_candidate(task: QuantModel, labeling, campaign: CampaignResult, cfg: KDConfig, *, alpha: float,
                       train: Dataset, heldout: Dataset, impact, protected=None, seed: int = 0,
                       persistence: str = "transient") -> tuple[MetricsReport, QuantModel]:
    """Retrain the checker on a simplified task and replay the campaign through it.

    Coverage is always computed over original classes; a failure between two
    classes of one cluster can never be detected.
    """
    labels = np.asarray(getattr(labeling, "labels", labeling), dtype=np.int64)
    checker, _ = train_checker(task, alpha, cfg, train, heldout, seed=seed, label_map=labels, protected=protected)
    pair = DyvePair(task, checker, labels, protected)
    rep = evaluate_dyve(pair, campaign, heldout.x, getattr(impact, "I", impact), persistence)
    rep.extra["K"] = int(labels.max()) + 1
    rep.extra["labels"] = labels.tolist()
    return rep, checker


def pareto_front(reports: Sequence[tuple[int, MetricsReport]]) -> list[tuple[int, MetricsReport]]:
    """Points not dominated in (lower O_C, higher WCov)."""
    front = []
    for k, r in reports:
        dominated = any(
            (q.O_C <= r.O_C and _w(q) >= _w(r)) and (q.O_C < r.O_C or _w(q) > _w(r)) for _, q in reports
        )
        if not dominated:
            front.append((k, r))
    return front


def _w(r: MetricsReport) -> float:
    return -np.inf if r.WCov is None else r.WCov


def select_pareto(reports: Sequence[tuple[int, MetricsReport]], epsilon: float = 0.02,
                  reference_k: int | None = None) -> tuple[int, MetricsReport]:
    """Cheapest Pareto point whose WCov stays within a relative ``epsilon`` of
    the reference (the un-simplified design, i.e. the largest K, by default)."""
    if not reports:
        raise ValueError("no candidate reports to select from")
    reports = list(reports)
    ref_k = max(k for k, _ in reports) if reference_k is None else reference_k
    ref = dict(reports)[ref_k]
    floor = (1.0 - epsilon) * _w(ref)
    ok = [(k, r) for k, r in pareto_front(reports) if _w(r) >= floor]
    if not ok:
        return ref_k, ref
    return min(ok, key=lambda kr: (kr[1].O_C, -_w(kr[1]), -kr[0]))
