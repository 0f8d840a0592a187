"""Stage orchestration: train-task, explore, attack, report.

Each stage reads the previous stage's files from the output directory and
writes its own, then records their sha256 in ``ledger.json``. Timings live
only in the ledger, so every other artifact is a pure function of the config.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clustering, faults, qmodel
from .bfa import bfa_outcome, run_bfa
from .config import ConfigError, PipelineConfig
from .consistency import FitError
from .data import Dataset, DatasetError, load_delimited, make_blobs, split
from .explore import evaluate_candidate, explore_architecture, select_pareto, write_rows
from .faults import CampaignConfig, CampaignResult
from .layers import Architecture, flatten, mlp, small_cnn
from .nn import TrainingError
from .runtime import DyvePair, MetricsReport, ThresholdChecker, comparison_table, evaluate_dyve, evaluate_threshold
from .training import train_task

log = logging.getLogger(__name__)

LEDGER = "ledger.json"
CANDIDATE_COLUMNS = ["K", "O_C", "WCov", "Cov", "P_consistent"]


class StageError(RuntimeError):
    """A pipeline stage could not complete; the ledger marks it failed."""


# -- ledger -----------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunLedger:
    path: Path
    stages: dict = field(default_factory=dict)

    @classmethod
    def open(cls, out_dir: Path) -> "RunLedger":
        p = Path(out_dir) / LEDGER
        stages = json.loads(p.read_text())["stages"] if p.exists() else {}
        return cls(p, stages)

    def record(self, stage: str, status: str, seed: int, seconds: float, artifacts: dict, error: str | None = None):
        entry = {"status": status, "seed": seed, "seconds": round(seconds, 3), "artifacts": artifacts}
        if error:
            entry["error"] = error
        self.stages[stage] = entry
        self.save()

    def hashes(self) -> dict:
        return {s: dict(e["artifacts"]) for s, e in sorted(self.stages.items())}

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps({"stages": self.stages}, indent=2, sort_keys=True))


class _Stage:
    """Context manager that times a stage and hashes the files it wrote."""

    def __init__(self, cfg: PipelineConfig, name: str):
        self.cfg, self.name = cfg, name
        self.files: list[Path] = []

    def __enter__(self):
        self.cfg.out_dir.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.cfg.save(self.out(f"config/{self.name}.yaml"))
        return self

    def out(self, rel: str) -> Path:
        p = self.cfg.out_dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def __exit__(self, exc_type, exc, tb):
        ledger = RunLedger.open(self.cfg.out_dir)
        dt = time.perf_counter() - self.t0
        arts = {str(p.relative_to(self.cfg.out_dir)): sha256_file(p) for p in self.files if p.exists()}
        if exc is None:
            ledger.record(self.name, "ok", self.cfg.seed, dt, arts)
            return False
        ledger.record(self.name, "failed", self.cfg.seed, dt, arts, error=f"{type(exc).__name__}: {exc}")
        if isinstance(exc, (StageError, ConfigError)):
            return False
        raise StageError(f"{self.name} failed: {exc}") from exc


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


def _matrix_rows(m: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.asarray(m)]


# -- data and models --------------------------------------------------------------


def load_data(cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.source == "builtin":
        return make_blobs(d.blobs, cfg.seed)
    try:
        ds = load_delimited(d.path)
    except DatasetError as e:
        raise StageError(str(e)) from e
    heldout, train = split(ds, d.heldout_fraction, cfg.seed)
    return train, heldout


def task_architecture(cfg: PipelineConfig, input_shape: tuple[int, ...], num_classes: int) -> Architecture:
    t = cfg.task
    if t.arch == "cnn":
        if len(input_shape) != 3:
            raise ConfigError(f"task.arch 'cnn' needs CxHxW inputs, dataset has shape {input_shape}")
        return small_cnn(input_shape, t.channels, t.hidden[0], num_classes)
    flat = int(np.prod(input_shape))
    arch = mlp(flat, t.hidden, num_classes)
    if len(input_shape) == 1:
        return arch
    return Architecture(tuple(input_shape), (flatten(),) + arch.layers)


def _load_model(path: Path, what: str) -> qmodel.QuantModel:
    if not path.exists():
        raise StageError(f"{what} not found at {path}; run the earlier stage first")
    try:
        return qmodel.load(path)
    except qmodel.ModelFormatError as e:
        raise StageError(f"{what} at {path} is unreadable: {e}") from e


def _impact(cfg: PipelineConfig, task, heldout: Dataset) -> clustering.ImpactMatrix:
    if cfg.explore.impact == "uniform":
        return clustering.uniform_impact(task.num_classes)
    return clustering.nonuniform_impact(faults.precision_vector(task, heldout))


def run_campaign(cfg: PipelineConfig, task, heldout: Dataset, detector=None) -> CampaignResult:
    c = cfg.campaign
    if c.runs == 0:
        empty = np.zeros(0, np.int64)
        flagged = np.zeros(0, bool) if detector is not None else None
        return CampaignResult(task.num_classes, empty, empty, empty, flagged, {"runs": 0})
    conf = CampaignConfig(n_runs=c.runs, n_flips_per_run=c.flips, seed=cfg.seed, scope=c.scope,
                          dataset=cfg.dataset.source)
    return faults.run_random_campaign(task, conf, heldout, detector=detector)


# -- stages -----------------------------------------------------------------------


def cmd_train_task(cfg: PipelineConfig) -> qmodel.QuantModel:
    with _Stage(cfg, "train-task") as st:
        train, heldout = load_data(cfg)
        arch = task_architecture(cfg, train.input_shape, train.num_classes)
        log.info("training task model %s on %d samples", cfg.task.hidden, len(train))
        try:
            task = train_task(arch, train, cfg.task.train, seed=cfg.seed, test=heldout)
        except TrainingError as e:
            raise StageError(f"task training failed: {e}") from e
        task.meta["num_classes"] = train.num_classes
        path = cfg.task_path
        path.parent.mkdir(parents=True, exist_ok=True)
        qmodel.save(task, path)
        if path.resolve().is_relative_to(cfg.out_dir.resolve()):
            st.files.append(path)
        _dump(st.out("task.json"), {
            "train_accuracy": task.meta["train_accuracy"],
            "test_accuracy": task.meta["test_accuracy"],
            "final_loss": task.meta["final_loss"],
            "flops": qmodel.flops(task),
            "storage_bytes": qmodel.storage_bytes(task),
            "digest": task.digest(),
        })
        log.info("task accuracy %.4f (held-out)", task.meta["test_accuracy"])
        return task


def cmd_explore(cfg: PipelineConfig) -> dict:
    """Width sweep, fit, alpha*, clustering, candidate sweep, Pareto pick."""
    with _Stage(cfg, "explore") as st:
        task = _load_model(cfg.task_path, "task model")
        train, heldout = load_data(cfg)
        kd = cfg.explore.kd

        log.info("stage 1: distilling %d checkers", len(cfg.explore.alphas))
        try:
            sweep = explore_architecture(task, train, heldout, kd, cfg.explore.alphas, seed=cfg.seed)
        except FitError as e:
            raise StageError(f"consistency fit rejected: {e}") from e
        sweep.save_csv(st.out("stage1_sweep.csv"))
        _dump(st.out("fit.json"), sweep.fit_dict())
        alpha = sweep.alpha_star
        log.info("alpha* = %.4f (a=%.5f, b=%.4f)", alpha, sweep.fit.a, sweep.fit.b)

        impact = _impact(cfg, task, heldout)
        _dump(st.out("impact.json"), {"mode": impact.mode, "I": _matrix_rows(impact.I)})
        log.info("random campaign: %d runs x %d flips", cfg.campaign.runs, cfg.campaign.flips)
        camp = run_campaign(cfg, task, heldout)
        faults.save_log_csv(camp, st.out("campaign_log.csv"))
        faults.save_risk_csv(camp.risk(), st.out("risk.csv"), camp.counts(camp.failed))

        n = task.num_classes
        identity = np.arange(n)
        reports: list[tuple[int, MetricsReport]] = []
        checkers = {}
        rep, checker = evaluate_candidate(task, identity, camp, kd, alpha=alpha, train=train, heldout=heldout,
                                          impact=impact, seed=cfg.seed)
        reports.append((n, rep))
        checkers[n] = (identity, checker)
        _dump(st.out("stage1_report.json"), rep.to_dict())

        inconsistency = clustering.inconsistency_matrix(DyvePair(task, checker), heldout.x)
        weighted = clustering.build_risk_matrix(camp.risk(), impact)
        _dump(st.out("matrices.json"), {"C": _matrix_rows(inconsistency), "R_weighted": _matrix_rows(weighted)})
        labelings = clustering.agglomerative_clustering(weighted, inconsistency, n) if n >= 3 else []
        clustering.save_dendrogram(labelings, n, st.out("dendrogram.json"))

        for lab in labelings:
            log.info("stage 2: candidate K=%d", lab.k)
            rep, checker = evaluate_candidate(task, lab.labels, camp, kd, alpha=alpha, train=train,
                                              heldout=heldout, impact=impact, seed=cfg.seed)
            reports.append((lab.k, rep))
            checkers[lab.k] = (np.asarray(lab.labels), checker)
        write_rows(st.out("candidates.csv"), [{"K": k, **r.to_dict()} for k, r in reports], CANDIDATE_COLUMNS)
        _dump(st.out("candidates.json"), [{"K": k, **r.to_dict()} for k, r in reports])

        k_sel, chosen = select_pareto(reports, cfg.explore.epsilon, reference_k=n)
        labels, checker = checkers[k_sel]
        qmodel.save(task, st.out("bundle/task.dvq"))
        qmodel.save(checker, st.out("bundle/checker.dvq"))
        _dump(st.out("bundle/labels.json"), {"K": k_sel, "labels": [int(v) for v in labels]})
        _dump(st.out("bundle/metrics.json"), chosen.to_dict())
        ref = dict(reports)[n]
        summary = {
            "alpha_star": alpha,
            "predicted_O_C": sweep.predicted_oc,
            "selected": {"K": k_sel, "labels": [int(v) for v in labels], "O_C": chosen.O_C, "WCov": chosen.WCov},
            "identity": {"K": n, "O_C": ref.O_C, "WCov": ref.WCov},
            "O_C_saving": None if not ref.O_C else 1.0 - chosen.O_C / ref.O_C,
            "WCov_drop": None if ref.WCov is None or chosen.WCov is None else ref.WCov - chosen.WCov,
        }
        _dump(st.out("explore.json"), summary)
        log.info("selected K=%d: O_C %.4f -> %.4f", k_sel, ref.O_C, chosen.O_C)
        return summary


def load_bundle(path: Path) -> DyvePair:
    task = _load_model(path / "task.dvq", "bundle task model")
    checker = _load_model(path / "checker.dvq", "bundle checker model")
    try:
        labels = json.loads((path / "labels.json").read_text())["labels"]
    except (OSError, KeyError, ValueError) as e:
        raise StageError(f"bundle labels unreadable: {e}") from e
    return DyvePair(task, checker, np.asarray(labels, dtype=np.int64))


def cmd_attack(cfg: PipelineConfig, bundle: str | Path | None = None) -> dict:
    """Random and BFA campaigns against the checker design and the threshold baseline."""
    with _Stage(cfg, "attack") as st:
        pair = load_bundle(Path(bundle) if bundle else cfg.out_dir / "bundle")
        task = pair.task
        train, heldout = load_data(cfg)
        detector = ThresholdChecker.calibrate(task, train.x)
        _dump(st.out("threshold.json"), detector.to_dict())
        impacts = {"uniform": clustering.uniform_impact(task.num_classes), "non-uniform": _impact(cfg, task, heldout)}
        if cfg.explore.impact == "uniform":
            impacts.pop("non-uniform")

        log.info("random campaign with detector attached")
        camp = run_campaign(cfg, task, heldout, detector=detector)
        a = cfg.attack
        log.info("bit-flip attack: up to %d flips", a.bfa_flips)
        attacker = train.subset(np.arange(min(a.bfa_batch, len(train))))
        res = run_bfa(task, attacker, a.bfa_flips, a.bfa_candidates, heldout=heldout)
        _dump(st.out("bfa.json"), {"flips": [list(map(int, t)) for t in res.flips], "batch_accuracy": res.accuracy,
                                   "heldout_accuracy": res.heldout_accuracy, "loss": res.loss,
                                   "early_stop": res.early_stop})
        bfa_log = bfa_outcome(task, res.model, heldout.x, detector)

        table, out = {}, {}
        for name, imp in impacts.items():
            reps = {
                "random/threshold": evaluate_threshold(detector, task, camp, heldout.x, imp.I),
                "random/dyve": evaluate_dyve(pair, camp, heldout.x, imp.I, "transient"),
                "bfa/threshold": evaluate_threshold(detector, task, bfa_log, heldout.x, imp.I),
                "bfa/dyve": evaluate_dyve(pair, bfa_log, heldout.x, imp.I, "persistent"),
            }
            table[name] = reps
            out[name] = {k: r.to_dict() for k, r in reps.items()}
        _dump(st.out("attack.json"), out)
        st.out("comparison.txt").write_text(comparison_table(table) + "\n")
        return out


def cmd_report(cfg: PipelineConfig) -> str:
    """Human-readable summary of whatever stages have run."""
    with _Stage(cfg, "report") as st:
        d = cfg.out_dir
        if not (d / "task.json").exists():
            raise StageError(f"nothing to report in {d}; run train-task first")
        lines = ["# Run report", ""]
        task = json.loads((d / "task.json").read_text())
        lines += [f"- task held-out accuracy: {task['test_accuracy']:.4f}",
                  f"- task FLOPs: {task['flops']}, storage: {task['storage_bytes']} bytes", ""]
        if (d / "explore.json").exists():
            ex = json.loads((d / "explore.json").read_text())
            fit = json.loads((d / "fit.json").read_text())
            lines += ["## Exploration", "",
                      f"- consistency fit: a = {fit['a']:.5f}, b = {fit['b']:.4f}",
                      f"- alpha* = {ex['alpha_star']:.4f} (predicted O_C {ex['predicted_O_C']:.4f})",
                      f"- selected K = {ex['selected']['K']}, labels {ex['selected']['labels']}",
                      f"- O_C {ex['identity']['O_C']:.4f} -> {ex['selected']['O_C']:.4f}"
                      + (f" ({100 * ex['O_C_saving']:.1f}% saving)" if ex["O_C_saving"] is not None else ""),
                      ]
            if ex["WCov_drop"] is not None:
                lines.append(f"- WCov {ex['identity']['WCov']:.4f} -> {ex['selected']['WCov']:.4f}")
            lines += ["", "| K | O_C | WCov | Cov | P_consistent |", "|---|---|---|---|---|"]
            for c in json.loads((d / "candidates.json").read_text()):
                cells = [c.get(k) for k in CANDIDATE_COLUMNS]
                lines.append("| " + " | ".join("-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))
                                                for v in cells) + " |")
            lines.append("")
        if (d / "comparison.txt").exists():
            lines += ["## Attacks", "", "```", (d / "comparison.txt").read_text().rstrip(), "```", ""]
        text = "\n".join(lines)
        st.out("report.md").write_text(text)
        return text
