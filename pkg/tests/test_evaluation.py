"""Metrics and interval statistics against scipy oracles and hand cases."""

import json
import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from coughscreen import evaluation as ev
from coughscreen.dataset import SingleClass


# ---------------------------------------------------------------- roc / auc


def test_roc_hand_case():
    scores = [0.9, 0.8, 0.3, 0.2]
    labels = [1, 0, 1, 0]
    fpr, tpr, thr = ev.roc_curve(scores, labels)
    np.testing.assert_array_equal(fpr, [0.0, 0.0, 0.5, 0.5, 1.0])
    np.testing.assert_array_equal(tpr, [0.0, 0.5, 0.5, 1.0, 1.0])
    assert thr[0] == np.inf
    np.testing.assert_array_equal(thr[1:], [0.9, 0.8, 0.3, 0.2])
    assert ev.auc(scores, labels) == pytest.approx(0.75, abs=1e-15)


def test_roc_groups_ties():
    fpr, tpr, thr = ev.roc_curve([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0])
    np.testing.assert_array_equal(fpr, [0.0, 1.0])
    np.testing.assert_array_equal(tpr, [0.0, 1.0])
    np.testing.assert_array_equal(thr, [np.inf, 0.5])
    assert ev.auc([0.5] * 4, [1, 1, 0, 0]) == pytest.approx(0.5, abs=1e-15)


def test_roc_monotone_and_terminates_at_one_one():
    rng = np.random.default_rng(300)
    scores = rng.random(50)
    labels = np.r_[np.ones(25), np.zeros(25)]
    fpr, tpr, _ = ev.roc_curve(scores, labels)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    assert fpr[0] == 0.0 and tpr[0] == 0.0
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0


def test_auc_extremes():
    labels = [1, 1, 0, 0]
    assert ev.auc([0.9, 0.8, 0.2, 0.1], labels) == 1.0
    assert ev.auc([0.1, 0.2, 0.8, 0.9], labels) == 0.0


def test_trapezoid_equals_pairwise_with_ties():
    rng = np.random.default_rng(301)
    for _ in range(30):
        n = int(rng.integers(10, 60))
        scores = rng.integers(0, 5, size=n) / 4.0  # heavy ties
        labels = rng.integers(0, 2, size=n).astype(float)
        labels[0], labels[1] = 1.0, 0.0  # force both classes
        assert abs(ev.auc(scores, labels) - ev.pairwise_auc(scores, labels)) <= 1e-12


def test_roc_single_class_raises():
    with pytest.raises(SingleClass):
        ev.roc_curve([0.1, 0.2], [1, 1])
    with pytest.raises(SingleClass):
        ev.pairwise_auc([0.1, 0.2], [0, 0])


def test_input_validation():
    with pytest.raises(ValueError):
        ev.roc_curve([0.1, 0.2], [1])
    with pytest.raises(ValueError):
        ev.roc_curve([0.1, 0.2], [1, 2])


def test_accuracy_threshold_boundary():
    # score exactly at the threshold counts as a positive call
    assert ev.accuracy([0.5], [1]) == 1.0
    assert ev.accuracy([0.5], [0]) == 0.0
    assert ev.accuracy([0.6, 0.4, 0.4, 0.6], [1, 0, 1, 0]) == 0.5
    assert ev.accuracy([0.9, 0.1], [1, 0], threshold=0.95) == 0.5


# ---------------------------------------------------------------- student t


def test_betainc_matches_scipy():
    for a in (0.5, 1.0, 2.5, 7.0):
        for b in (0.5, 1.0, 3.0):
            for x in np.linspace(0.01, 0.99, 23):
                got = ev.betainc_reg(a, b, float(x))
                want = scipy.special.betainc(a, b, x)
                assert got == pytest.approx(want, abs=1e-12)


def test_betainc_edges():
    assert ev.betainc_reg(2.0, 3.0, 0.0) == 0.0
    assert ev.betainc_reg(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        ev.betainc_reg(2.0, 3.0, 1.5)


def test_t_cdf_matches_scipy():
    for df in (1, 2, 4, 10, 30):
        for t in (-6.0, -2.5, -0.3, 0.0, 0.7, 3.1, 8.0):
            assert ev.t_cdf(t, df) == pytest.approx(
                scipy.stats.t.cdf(t, df), abs=1e-12
            )


def test_t_cdf_symmetry():
    for t in (0.5, 1.7, 4.2):
        assert ev.t_cdf(-t, 7) == pytest.approx(1.0 - ev.t_cdf(t, 7), abs=1e-14)
    assert ev.t_cdf(0.0, 3) == 0.5


def test_t_quantile_examples():
    assert ev.t_quantile(0.975, 4) == pytest.approx(2.7764451051977987, abs=1e-9)
    assert ev.t_quantile(0.5, 9) == 0.0
    for df in (2, 5, 20):
        for p in (0.6, 0.9, 0.975, 0.995):
            assert ev.t_quantile(p, df) == pytest.approx(
                scipy.stats.t.ppf(p, df), abs=1e-8
            )


def test_t_quantile_round_trip():
    for p in (0.1, 0.4, 0.83, 0.99):
        assert ev.t_cdf(ev.t_quantile(p, 6), 6) == pytest.approx(p, abs=1e-12)
    with pytest.raises(ValueError):
        ev.t_quantile(0.0, 4)


def test_ci95_worked_example():
    values = [0.69, 0.70, 0.71, 0.72, 0.73]
    mean, half = ev.ci95(values)
    assert mean == pytest.approx(0.71, abs=1e-12)
    # s = 0.0158114, t(0.975, 4) = 2.7764 -> half width 0.0196
    assert half == pytest.approx(0.0196, abs=1e-4)
    assert half == pytest.approx(
        ev.t_quantile(0.975, 4) * np.std(values, ddof=1) / math.sqrt(5), abs=1e-15
    )


def test_ci95_zero_variance():
    with pytest.raises(ev.ZeroVariance):
        ev.ci95([0.7, 0.7, 0.7])
    with pytest.raises(ev.ZeroVariance):
        ev.ci95([0.7])


def test_t_test_matches_scipy():
    rng = np.random.default_rng(302)
    for _ in range(10):
        values = rng.uniform(0.4, 0.9, size=5)
        got = ev.t_test_auc(values)
        want = scipy.stats.ttest_1samp(values, 0.5, alternative="greater").pvalue
        assert got == pytest.approx(want, rel=1e-10)
        got2 = ev.t_test_auc(values, two_sided=True)
        want2 = scipy.stats.ttest_1samp(values, 0.5).pvalue
        assert got2 == pytest.approx(want2, rel=1e-10)


def test_t_test_zero_variance():
    with pytest.raises(ev.ZeroVariance):
        ev.t_test_auc([0.8, 0.8])


# ---------------------------------------------------------------- reports


def _run_eval(seed, scores, labels):
    return ev.evaluate_run(seed, scores, labels)


def test_evaluate_run_fields():
    r = _run_eval(11, [0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0])
    assert r.seed == 11
    assert r.auc == pytest.approx(0.75)
    assert r.accuracy == pytest.approx(0.5)
    assert r.n_test == 4
    assert r.thresholds[0] == np.inf


def test_build_report_normal_path():
    rng = np.random.default_rng(303)
    labels = np.r_[np.ones(10), np.zeros(10)]
    runs = []
    for seed in range(3):
        scores = np.clip(labels * 0.6 + rng.normal(0, 0.2, size=20), 0, 1)
        runs.append(_run_eval(seed, scores, labels))
    report = ev.build_report(runs, threshold=0.5)
    assert report["n_runs"] == 3
    assert report["ci_degenerate"] is False
    lo, hi = report["auc_ci95"]
    assert lo < report["mean_auc"] < hi
    assert 0.0 <= report["p_value_auc_gt_half"] <= 1.0
    assert len(report["runs"]) == 3
    assert report["runs"][0]["roc"]["fpr"][0] == 0.0


def test_build_report_degenerate_collapses_ci():
    scores = [0.9, 0.8, 0.3, 0.2]
    labels = [1, 0, 1, 0]
    runs = [_run_eval(s, scores, labels) for s in (1, 2)]
    report = ev.build_report(runs)
    assert report["ci_degenerate"] is True
    assert report["p_value_auc_gt_half"] is None
    assert report["auc_ci95"] == [report["mean_auc"], report["mean_auc"]]


def test_build_report_rejects_empty():
    with pytest.raises(ValueError):
        ev.build_report([])


def test_report_json_canonical_and_infinity_round_trips():
    runs = [_run_eval(1, [0.9, 0.2], [1, 0]), _run_eval(2, [0.8, 0.3], [1, 0])]
    report = ev.build_report(runs)
    text = ev.report_json(report)
    assert text.endswith("\n")
    assert ev.report_json(report) == text  # deterministic
    assert ev.report_json(json.loads(text)) == text  # serialization round-trips
    back = json.loads(text)
    assert back["runs"][0]["roc"]["thresholds"][0] == float("inf")
    keys = list(back)
    assert keys == sorted(keys)
