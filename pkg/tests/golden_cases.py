"""Reference computations whose outputs are frozen under tests/golden.

``scripts/regen_goldens.py`` writes them; the tests recompute and compare.
Only regenerate after a deliberate behaviour change.
"""
import hashlib
import json
from pathlib import Path

import numpy as np

from dynverify import bfa, clustering, data, distill, faults, layers, nn, qmodel, training
from dynverify.rng import stream

GOLDEN = Path(__file__).parent / "golden"
SMALL_BLOBS = data.BlobSpec(n_train=2000, n_test=2000)


def golden(name: str):
    return json.loads((GOLDEN / name).read_text())


def small_setup():
    train, test = data.make_blobs(SMALL_BLOBS, seed=7)
    task = training.train_task(layers.mlp(8, [16, 16], 10), train, training.TrainConfig(epochs=15), seed=7, test=test)
    return train, test, task


def default_setup():
    """The builtin toy task model used by the pipeline defaults."""
    train, test = data.make_blobs(data.BlobSpec(), seed=0)
    task = training.train_task(layers.mlp(8, [64, 64], 10), train, training.TrainConfig(), seed=0, test=test)
    return train, test, task


def _sha(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def mlp_logits() -> dict:
    arch = layers.mlp(4, [6], 3)
    params = nn.init_params(arch, stream(3, "golden"), zero_head=False)
    calib = stream(3, "golden", "calib").standard_normal((64, 4))
    model = qmodel.quantize_model(arch, params, calib)
    x = np.array([0.5, -1.25, 2.0, 0.125])
    logits, label = qmodel.infer(model, x)
    return {"logits_hex": logits.astype("<f8").tobytes().hex(), "label": label, "digest": model.digest()}


def campaign(task, test) -> dict:
    cfg = faults.CampaignConfig(n_runs=3000, n_flips_per_run=20, seed=11)
    res = faults.run_random_campaign(task, cfg, test)
    risk = res.risk()
    return {"counts": res.counts(res.failed).tolist(), "failures": risk.failure_count,
            "R_sha256": _sha(risk.R.astype("<f8"))}


def precision(task, test) -> dict:
    return {"precision": [float(v) for v in faults.precision_vector(task, test)]}


def inconsistency(task, train, test) -> dict:
    from dynverify.runtime import DyvePair

    checker, s = distill.train_checker(task, 0.5, distill.KDConfig(epochs=5), train, test, seed=7)
    c = clustering.inconsistency_matrix(DyvePair(task, checker), test.x)
    return {"C_sha256": _sha(c.astype("<f8")), "total": float(c.sum()), "consistency": s.consistency}


def small_bfa(task, train) -> dict:
    res = bfa.run_bfa(task, train.subset(np.arange(128)), max_flips=8)
    return {"flips": [list(map(int, t)) for t in res.flips], "accuracy": res.accuracy}


def default_bfa(task, train, test) -> dict:
    res = bfa.run_bfa(task, train.subset(np.arange(256)), max_flips=50, heldout=test)
    return {"flips": [list(map(int, t)) for t in res.flips], "heldout_accuracy": res.heldout_accuracy}


def all_cases() -> dict:
    train, test, task = small_setup()
    dtrain, dtest, dtask = default_setup()
    return {
        "mlp_logits.json": mlp_logits(),
        "campaign.json": campaign(task, test),
        "precision.json": precision(task, test),
        "inconsistency.json": inconsistency(task, train, test),
        "bfa_small.json": small_bfa(task, train),
        "bfa_default.json": default_bfa(dtask, dtrain, dtest),
    }
