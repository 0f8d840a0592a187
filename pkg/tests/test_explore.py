import numpy as np
import pytest

from dynverify import distill, explore, faults
from dynverify.clustering import uniform_impact
from dynverify.distill import KDConfig
from dynverify.faults import CampaignConfig
from dynverify.layers import flops
from dynverify.runtime import DyvePair, MetricsReport

KD = KDConfig(epochs=2)


def _r(o_c, wcov):
    return MetricsReport(O_C=o_c, WCov=wcov)


def test_single_report_is_selected():
    assert explore.select_pareto([(10, _r(0.2, 0.9))])[0] == 10


def test_dominating_candidate_wins():
    assert explore.select_pareto([(10, _r(0.2, 0.9)), (5, _r(0.1, 0.95))])[0] == 5


def test_knee_within_tolerance():
    reports = [(10, _r(0.20, 0.95)), (8, _r(0.15, 0.94)), (4, _r(0.10, 0.80))]
    assert explore.select_pareto(reports, epsilon=0.02)[0] == 8
    assert explore.select_pareto(reports, epsilon=0.2)[0] == 4
    assert explore.select_pareto(reports, epsilon=0.0)[0] == 10


def test_pareto_front_drops_dominated_points():
    reports = [(10, _r(0.2, 0.9)), (9, _r(0.25, 0.85)), (8, _r(0.1, 0.8))]
    assert [k for k, _ in explore.pareto_front(reports)] == [10, 8]


def test_no_reports():
    with pytest.raises(ValueError):
        explore.select_pareto([])


@pytest.fixture(scope="module")
def campaign(small):
    _, test, task = small
    return faults.run_random_campaign(task, CampaignConfig(n_runs=400, n_flips_per_run=20, seed=1), test)


def test_identity_candidate_reproduces_the_width_sweep(small, campaign):
    train, test, task = small
    checker, sample = distill.train_checker(task, 0.4, KD, train, test, seed=2)
    rep, again = explore.evaluate_candidate(task, np.arange(10), campaign, KD, alpha=0.4, train=train, heldout=test,
                                            impact=uniform_impact(10), seed=2)
    assert again.digest() == checker.digest()
    assert rep.P_consistent == sample.consistency and rep.extra["K"] == 10


def test_single_cluster_checker(small, campaign):
    train, test, task = small
    rep, checker = explore.evaluate_candidate(task, np.zeros(10, int), campaign, KD, alpha=0.4, train=train,
                                              heldout=test, impact=uniform_impact(10), seed=2)
    assert rep.P_consistent == 1.0 and rep.WCov == 0.0
    assert rep.O_C == pytest.approx(flops(checker) / flops(task))


def test_failures_inside_a_cluster_are_never_detected(small, campaign):
    train, test, task = small
    labels = np.array([0, 1, 2, 3, 4, 3, 5, 6, 7, 8])  # classes 3 and 5 share a cluster
    _, checker = explore.evaluate_candidate(task, labels, campaign, KD, alpha=0.4, train=train, heldout=test,
                                            impact=uniform_impact(10), seed=2)
    pair = DyvePair(task, checker, labels)
    detected = ~pair.consistent(campaign.faulty, checker.predict(test.x)[campaign.sample])
    caught = campaign.counts(detected)
    assert caught[3, 5] == caught[5, 3] == 0
    assert campaign.counts()[3, 5] + campaign.counts()[5, 3] > 0


def test_sweep_fit_and_csv(tmp_path, small):
    train, test, task = small
    sweep = explore.explore_architecture(task, train, test, KDConfig(epochs=3), alphas=(0.1, 0.4, 1.0), seed=0)
    assert sweep.fit.valid_range[0] <= sweep.alpha_star <= 1.0
    sweep.save_csv(tmp_path / "s.csv")
    rows = explore.read_rows(tmp_path / "s.csv")
    assert [r["alpha"] for r in rows] == [0.1, 0.4, 1.0]
    assert rows == sweep.rows()
