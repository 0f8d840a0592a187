"""Online dynamic verification: task + checker + comparator + re-computation.

Also hosts the overhead/coverage metrics, the activation-range threshold
baseline and the collision estimate for simultaneous faults.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Sequence

import numpy as np

from .layers import flops
from .qmodel import QuantModel, storage_bytes


class InvalidPair(ValueError):
    pass


class InvalidDistribution(ValueError):
    pass


@dataclass
class DyvePair:
    task: QuantModel
    checker: QuantModel
    label_map: np.ndarray | None = None
    protected: np.ndarray | None = None

    def __post_init__(self):
        n = self.task.num_classes
        self.label_map = np.arange(n) if self.label_map is None else np.asarray(self.label_map, dtype=np.int64)
        self.protected = np.ones(n, bool) if self.protected is None else np.asarray(self.protected, dtype=bool)
        if self.label_map.shape != (n,) or self.protected.shape != (n,):
            raise InvalidPair("label map and protected mask need one entry per task class")
        k = int(self.label_map.max()) + 1
        if set(self.label_map.tolist()) != set(range(k)):
            raise InvalidPair("label map is not surjective onto 0..K-1")
        if self.checker.num_classes != k:
            raise InvalidPair(f"checker has {self.checker.num_classes} outputs but the label map has {k} clusters")
        if flops(self.task) == 0 or storage_bytes(self.task) == 0:
            raise InvalidPair("task model has zero size")

    def consistent(self, task_labels, checker_labels) -> np.ndarray:
        t = np.asarray(task_labels)
        return ~self.protected[t] | (self.label_map[t] == np.asarray(checker_labels))


class Verdict(NamedTuple):
    label: int
    detected: bool
    recomputed: bool


def verify(pair: DyvePair, x, faulty_task: QuantModel | None = None, act_fault=None,
           persistence: str = "transient") -> Verdict:
    """One protected inference.

    ``faulty_task`` (and/or ``act_fault``) describe the faults present during
    this run. On inconsistency the task model is re-run: under transient
    faults on the clean model, under persistent ones on the faulty model.
    """
    first = faulty_task if faulty_task is not None else pair.task
    t = int(np.argmax(first.forward(x, act_fault=act_fault)))
    c = int(np.argmax(pair.checker.forward(x)))
    if bool(pair.consistent(t, c)):
        return Verdict(t, False, False)
    again = pair.task if persistence == "transient" else first
    redo_fault = None if persistence == "transient" else act_fault
    return Verdict(int(np.argmax(again.forward(x, act_fault=redo_fault))), True, True)


def measured_consistency(task: QuantModel, checker: QuantModel, x, label_map=None, protected=None) -> float:
    """Fraction of inputs the comparator accepts on a fault-free run."""
    t = task.predict(x)
    c = checker.predict(x)
    n = task.num_classes
    lam = np.arange(n) if label_map is None else np.asarray(label_map)
    prot = np.ones(n, bool) if protected is None else np.asarray(protected, bool)
    return float(np.mean(~prot[t] | (lam[t] == c)))


def overhead_c(flops_ratio: float, p_consistent: float) -> float:
    """Checker FLOPs plus expected re-computation, relative to the task model."""
    if not 0 <= p_consistent <= 1:
        raise ValueError(f"P_consistent {p_consistent} outside [0, 1]")
    return flops_ratio + (1.0 - p_consistent)


def compute_overheads(pair: DyvePair, p_consistent: float) -> tuple[float, float]:
    o_s = storage_bytes(pair.checker) / storage_bytes(pair.task)
    return o_s, overhead_c(flops(pair.checker) / flops(pair.task), p_consistent)


def compute_coverage(total_failures, detected_failures, impact) -> tuple[float | None, float | None]:
    """Plain and impact-weighted coverage from N x N failure count matrices.

    Either value is None when its denominator is zero.
    """
    tf = np.asarray(total_failures, dtype=np.float64)
    df = np.asarray(detected_failures, dtype=np.float64)
    imp = np.asarray(impact, dtype=np.float64)
    off = ~np.eye(tf.shape[0], dtype=bool)
    tf, df, imp = tf[off], df[off], imp[off]
    # scale-free, and a constant impact becomes exactly 1.0 so WCov == Cov bit for bit
    top = imp.max() if imp.size else 0.0
    if top > 0:
        imp = imp / top
    if np.any(df > tf):
        raise ValueError("detected failures exceed total failures")
    den = tf.sum()
    cov = float(df.sum() / den) if den > 0 else None
    wden = (tf * imp).sum()
    wcov = float((df * imp).sum() / wden) if wden > 0 else None
    return cov, wcov


@dataclass
class MetricsReport:
    O_S: float | None = None
    O_C: float | None = None
    Cov: float | None = None
    WCov: float | None = None
    FPR: float | None = None
    FNR: float | None = None
    P_consistent: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra" and getattr(self, f.name) is not None}
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: v for k, v in d.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:.2f}%"


def comparison_table(rows: dict[str, dict[str, MetricsReport]]) -> str:
    """Plain-text table: one row per impact setting, FPR/FNR/O(C)/WCov per
    attack and detector, mirroring the usual threshold-vs-checker layout."""
    cols = [(a, d) for a in ("random", "bfa") for d in ("threshold", "dyve")]
    head = ["setting"] + [f"{a}/{d}/{m}" for a, d in cols for m in ("FPR", "FNR", "O(C)", "WCov")]
    lines = [" | ".join(head)]
    for name, reps in rows.items():
        cells = [name]
        for a, d in cols:
            r = reps.get(f"{a}/{d}")
            if r is None:
                cells += ["-"] * 4
            else:
                cells += [_pct(r.FPR), _pct(r.FNR), _pct(r.O_C), _pct(r.WCov)]
        lines.append(" | ".join(cells))
    return "\n".join(lines)


class ThresholdChecker:
    """Activation-range detector calibrated on fault-free data.

    Each bound is pushed away from the calibration interval by 10% of its
    own magnitude, so the accepted interval always contains the calibration
    range whatever the signs.
    """

    margin = 0.1

    def __init__(self, lows: Sequence[float], highs: Sequence[float]):
        self.xmin = np.asarray(lows, dtype=np.float64)
        self.xmax = np.asarray(highs, dtype=np.float64)
        self.lo = self.xmin - self.margin * np.abs(self.xmin)
        self.hi = self.xmax + self.margin * np.abs(self.xmax)

    @classmethod
    def calibrate(cls, model: QuantModel, x, batch: int = 2048) -> "ThresholdChecker":
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            raise ValueError("calibration set is empty")
        lows = highs = None
        for i in range(0, len(x), batch):
            rec: list = []
            model.forward(x[i : i + batch], record=rec)
            lo = np.array([r.min() for r in rec])
            hi = np.array([r.max() for r in rec])
            lows = lo if lows is None else np.minimum(lows, lo)
            highs = hi if highs is None else np.maximum(highs, hi)
        return cls(lows, highs)

    def flags(self, record: Sequence[np.ndarray]) -> bool:
        """True if any recorded activation of one sample is out of range."""
        return any(bool(np.any(r < lo) or np.any(r > hi)) for r, lo, hi in zip(record, self.lo, self.hi))

    def flag_batch(self, model: QuantModel, x, batch: int = 2048) -> np.ndarray:
        out = []
        for i in range(0, len(x), batch):
            rec: list = []
            model.forward(x[i : i + batch], record=rec)
            bad = np.zeros(len(rec[0]), bool)
            for r, lo, hi in zip(rec, self.lo, self.hi):
                r = r.reshape(len(r), -1)
                bad |= np.any((r < lo) | (r > hi), axis=1)
            out.append(bad)
        return np.concatenate(out) if out else np.zeros(0, bool)

    def to_dict(self) -> dict:
        return {"xmin": self.xmin.tolist(), "xmax": self.xmax.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdChecker":
        return cls(d["xmin"], d["xmax"])


def collision_probability(p, q, tol: float = 1e-9) -> float:
    """Chance that two independently faulty models emit the same class."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for name, d in (("p", p), ("q", q)):
        if d.ndim != 1 or np.any(d < 0) or abs(d.sum() - 1.0) > tol:
            raise InvalidDistribution(f"{name} is not a probability vector")
    if p.shape != q.shape:
        raise InvalidDistribution("p and q have different lengths")
    return float(p @ q)


def system_fpr(pair: DyvePair, x) -> tuple[float, float]:
    """(system FPR, comparator alarm rate) on fault-free inputs.

    An alarm triggers a clean re-run whose label is final, so the system only
    errs if that re-run disagrees with the original task output.
    """
    t = pair.task.predict(x)
    c = pair.checker.predict(x)
    alarm = ~pair.consistent(t, c)
    final = t.copy()
    if alarm.any():
        final[alarm] = pair.task.predict(np.asarray(x)[alarm])
    return float(np.mean(final != t)), float(np.mean(alarm))


def evaluate_dyve(pair: DyvePair, campaign, x_heldout, impact, persistence: str = "transient") -> MetricsReport:
    """Replay a campaign log through the comparator.

    The checker is fault-free, so its label on each campaign input is its
    clean prediction; a failure is detected when the faulty task label is
    inconsistent with it.
    """
    x_heldout = np.asarray(x_heldout)
    p_cons = measured_consistency(pair.task, pair.checker, x_heldout, pair.label_map, pair.protected)
    o_s, o_c = compute_overheads(pair, p_cons)
    fpr, alarm = system_fpr(pair, x_heldout)
    rep = MetricsReport(O_S=o_s, O_C=o_c, P_consistent=p_cons, FPR=fpr,
                        extra={"comparator_alarm_rate": alarm, "runs": int(campaign.n_runs)})
    if campaign.n_runs == 0:
        return rep
    checker_labels = pair.checker.predict(x_heldout)[campaign.sample]
    detected = ~pair.consistent(campaign.faulty, checker_labels)
    cov, wcov = compute_coverage(campaign.counts(), campaign.counts(detected), impact)
    failed = campaign.failed
    if persistence == "transient":
        final = np.where(detected, campaign.clean, campaign.faulty)
    else:
        final = campaign.faulty
    rep.Cov, rep.WCov = cov, wcov
    rep.FNR = None if cov is None else 1.0 - cov
    flops_ratio = flops(pair.checker) / flops(pair.task)
    rep.extra.update(
        failures=int(failed.sum()),
        detected_failures=int((failed & detected).sum()),
        recompute_rate=float(detected.mean()),
        O_C_measured=flops_ratio + float(detected.mean()),
        accuracy_loss=float(np.mean(final != campaign.clean)),
        undetected_mass=float(np.mean(failed & ~detected)),
    )
    return rep


def evaluate_threshold(detector: ThresholdChecker, task: QuantModel, campaign, x_heldout, impact) -> MetricsReport:
    """Coverage of the range detector on a campaign log that carries its flags.

    O_C is reported as the detector's alarm rate on fault-free inputs.
    """
    fp = detector.flag_batch(task, np.asarray(x_heldout))
    fpr = float(fp.mean()) if len(fp) else None
    rep = MetricsReport(O_C=fpr, FPR=fpr, extra={"runs": int(campaign.n_runs)})
    if campaign.n_runs == 0:
        return rep
    if campaign.flagged is None:
        raise ValueError("campaign was run without a threshold detector attached")
    cov, wcov = compute_coverage(campaign.counts(), campaign.counts(campaign.flagged), impact)
    rep.Cov, rep.WCov = cov, wcov
    rep.FNR = None if cov is None else 1.0 - cov
    rep.extra["failures"] = int(campaign.failed.sum())
    rep.extra["flag_rate"] = float(campaign.flagged.mean())
    return rep
