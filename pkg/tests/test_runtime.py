import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dynverify import faults, qmodel, runtime
from dynverify.clustering import uniform_impact
from dynverify.faults import CampaignConfig, FaultSpec, apply_fault
from dynverify.layers import mlp
from dynverify.runtime import (DyvePair, InvalidDistribution, InvalidPair, MetricsReport, ThresholdChecker,
                               collision_probability, compute_coverage, overhead_c, verify)


def _linear(w):
    w = np.asarray(w, dtype=np.float64)
    return qmodel.quantize_model(mlp(w.shape[1], [], w.shape[0], bias=False), [(w, None)])


def _pair():
    task = _linear(np.eye(3))
    checker = _linear([[1, 1, 0], [0, 0, 1]])  # clusters {0, 1} and {2}
    return DyvePair(task, checker, [0, 0, 1])


def test_consistent_run_is_accepted():
    v = verify(_pair(), np.array([0.1, 0.9, 0.2]))
    assert v == (1, False, False)


def test_fault_crossing_clusters_is_caught_and_recomputed():
    pair = _pair()
    faulty = apply_fault(pair.task, FaultSpec([(0, 8, 7)]))  # w[2,2] goes negative
    x = np.array([0.0, 0.1, 0.9])
    assert int(np.argmax(faulty.forward(x))) != 2
    assert verify(pair, x, faulty) == (2, True, True)
    # persistent faults are still present in the re-run
    assert verify(pair, x, faulty, persistence="persistent").label != 2


def test_fault_inside_a_cluster_is_missed():
    pair = _pair()
    faulty = apply_fault(pair.task, FaultSpec([(0, 4, 7)]))  # w[1,1] goes negative
    x = np.array([0.2, 0.9, 0.0])
    v = verify(pair, x, faulty)
    assert v.label == 0 and not v.detected


def test_unprotected_class_is_never_checked():
    pair = DyvePair(_linear(np.eye(3)), _linear(np.eye(3)[::-1]), protected=[True, False, True])
    assert not verify(pair, np.array([0.0, 1.0, 0.0])).detected
    assert verify(pair, np.array([1.0, 0.0, 0.0])).detected


def test_invalid_pairs():
    with pytest.raises(InvalidPair):
        DyvePair(_linear(np.eye(3)), _linear(np.eye(2)))
    with pytest.raises(InvalidPair):
        DyvePair(_linear(np.eye(3)), _linear(np.eye(2)), [0, 2, 2])


@pytest.mark.parametrize("ratio,p,want", [(0.05, 0.92, 0.13), (0.01, 0.80, 0.21), (0.10, 0.94, 0.16), (0.0, 1.0, 0.0)])
def test_overhead_examples(ratio, p, want):
    assert overhead_c(ratio, p) == pytest.approx(want, abs=1e-12)


def test_overhead_rejects_bad_probability():
    with pytest.raises(ValueError):
        overhead_c(0.1, 1.2)


def test_coverage_examples():
    assert compute_coverage([[0, 10], [0, 0]], [[0, 9], [0, 0]], [[0, 1], [1, 0]]) == (0.9, 0.9)
    cov, wcov = compute_coverage([[0, 100], [1, 0]], [[0, 100], [0, 0]], [[0, 1], [100, 0]])
    assert cov == pytest.approx(100 / 101) and wcov == pytest.approx(0.5)
    assert compute_coverage(np.zeros((3, 3)), np.zeros((3, 3)), np.ones((3, 3))) == (None, None)
    with pytest.raises(ValueError):
        compute_coverage([[0, 1], [0, 0]], [[0, 2], [0, 0]], np.ones((2, 2)))


@given(st.integers(2, 8).flatmap(lambda n: st.tuples(
    arrays(np.int64, (n, n), elements=st.integers(0, 10**6)), arrays(np.float64, (n, n), elements=st.floats(0, 1)),
    st.floats(1e-6, 1e6))))
def test_constant_impact_makes_weighted_coverage_identical(case):
    tf, frac, c = case
    df = np.floor(tf * frac)
    cov, wcov = compute_coverage(tf, df, np.full(tf.shape, c))
    assert cov == wcov  # exact, not approximate


def test_threshold_bounds():
    det = ThresholdChecker([0.0, -2.0], [1.0, 3.0])
    assert not det.flags([np.array([1.0]), np.array([3.0])])
    assert not det.flags([np.array([1.09]), np.array([-2.19])])
    assert det.flags([np.array([1.2]), np.array([0.0])])
    assert det.flags([np.array([0.5]), np.array([-2.3])])
    assert ThresholdChecker.from_dict(det.to_dict()).to_dict() == det.to_dict()


def test_threshold_never_flags_its_calibration_data(small):
    train, _, task = small
    det = ThresholdChecker.calibrate(task, train.x)
    assert not det.flag_batch(task, train.x).any()


@pytest.mark.parametrize("p,q,want", [([0.1] * 10, [0.1] * 10, 0.1), ([0.5, 0.5], [1, 0], 0.5), ([1, 0], [0, 1], 0.0)])
def test_collision_examples(p, q, want):
    assert collision_probability(p, q) == pytest.approx(want)


@pytest.mark.parametrize("p,q", [([0.5, 0.6], [1, 0]), ([-0.1, 1.1], [1, 0]), ([1.0], [0.5, 0.5])])
def test_collision_rejects_bad_distributions(p, q):
    with pytest.raises(InvalidDistribution):
        collision_probability(p, q)


def test_system_fpr_is_zero(small):
    _, test, task = small
    pair = DyvePair(task, _random_checker(task))
    fpr, alarm = runtime.system_fpr(pair, test.x)
    assert fpr == 0.0 and alarm > 0


def _random_checker(task):
    from dynverify import nn
    from dynverify.rng import stream

    params = nn.init_params(task.arch, stream(0, "junk"), zero_head=False)
    return qmodel.quantize_model(task.arch, params)


def test_replayed_campaign_accounting(small):
    _, test, task = small
    pair = DyvePair(task, _random_checker(task))
    camp = faults.run_random_campaign(task, CampaignConfig(n_runs=500, n_flips_per_run=20, seed=4), test)
    rep = runtime.evaluate_dyve(pair, camp, test.x, uniform_impact(10).I)
    assert rep.FPR == 0.0 and rep.Cov == rep.WCov
    assert rep.extra["accuracy_loss"] == rep.extra["undetected_mass"]
    assert rep.FNR == pytest.approx(1 - rep.Cov)


def test_metrics_report_round_trip():
    rep = MetricsReport(O_S=0.1, O_C=0.2, Cov=None, WCov=0.9, extra={"K": 4})
    back = MetricsReport.from_dict(json.loads(rep.to_json()))
    assert back == rep and "Cov" not in rep.to_dict()


def test_comparison_table_layout():
    rows = {"uniform": {"random/dyve": MetricsReport(FPR=0.0, FNR=0.25, O_C=0.1, WCov=0.75)}}
    text = runtime.comparison_table(rows)
    head, line = text.splitlines()
    assert head.split(" | ")[0] == "setting" and len(head.split(" | ")) == 17
    assert "25.00%" in line and line.count("-") >= 12


def test_measured_consistency_respects_protection():
    task, checker = _linear(np.eye(2)), _linear(np.eye(2)[::-1])
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert runtime.measured_consistency(task, checker, x) == 0.0
    assert runtime.measured_consistency(task, checker, x, protected=[True, False]) == 0.5
