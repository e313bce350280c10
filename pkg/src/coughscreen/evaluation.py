"""ROC analysis and small-sample statistics for screening runs.

AUC comes from the trapezoid rule over a tie-grouped ROC curve; a
pairwise (Mann-Whitney) computation is kept alongside as an independent
cross-check. Confidence intervals and the one-sample t-test use a
Student-t CDF built on the regularized incomplete beta function, so the
package has no runtime dependency on a stats library.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import SingleClass

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class ZeroVariance(Exception):
    """Raised when run scores are identical and spread-based statistics
    are undefined."""


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal 1-D")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    return s, y


def roc_curve(scores, labels):
    """ROC points (fpr, tpr, thresholds), tied scores grouped into one
    point, anchored at (0, 0) with threshold +inf."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(np.sum(y == 1.0))
    n_neg = int(np.sum(y == 0.0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} positive / {n_neg} negative")

    order = np.argsort(-s, kind="stable")
    s_desc = s[order]
    y_desc = y[order]
    # Last index of each tie group, i.e. where the next score differs.
    last = np.r_[np.nonzero(np.diff(s_desc))[0], len(s_desc) - 1]
    tp = np.cumsum(y_desc)[last]
    fp = np.cumsum(1.0 - y_desc)[last]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s_desc[last]]
    return fpr, tpr, thresholds


def auc(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(_trapezoid(tpr, fpr))


def pairwise_auc(scores, labels) -> float:
    """Probability a positive outscores a negative, ties counted half.
    O(pos * neg); used to cross-check the trapezoid AUC."""
    s, y = _as_arrays(scores, labels)
    pos = s[y == 1.0]
    neg = s[y == 0.0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("need both classes for pairwise AUC")
    diff = pos[:, None] - neg[None, :]
    wins = np.sum(diff > 0) + 0.5 * np.sum(diff == 0)
    return float(wins / (len(pos) * len(neg)))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of correct calls; score >= threshold counts positive."""
    s, y = _as_arrays(scores, labels)
    return float(np.mean((s >= threshold) == (y == 1.0)))


# ------------------------------------------------------- Student-t pieces

def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta, modified Lentz method.
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: int) -> float:
    if df < 1:
        raise ValueError("df must be >= 1")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    half_tail = 0.5 * betainc_reg(df / 2.0, 0.5, x)
    return half_tail if t < 0 else 1.0 - half_tail


def t_quantile(p: float, df: int) -> float:
    """Inverse CDF by bisection; adequate precision for interval work."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    lo, hi = -1e8, 1e8
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ci95(values) -> tuple:
    """Mean and t-based 95% half-width across repeated runs.

    Raises ZeroVariance when all values are identical (or fewer than two),
    since the half-width is then meaningless.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) < 2:
        raise ZeroVariance("need at least two run values")
    mean = float(np.mean(v))
    s = float(np.std(v, ddof=1))
    # identical inputs can still give s > 0 because the mean rounds
    if s == 0.0 or np.all(v == v[0]):
        raise ZeroVariance("all run values identical")
    half = t_quantile(0.975, len(v) - 1) * s / math.sqrt(len(v))
    return mean, half


def t_test_auc(values, null: float = 0.5, two_sided: bool = False) -> float:
    """One-sample t-test p-value that mean AUC exceeds ``null``.

    One-sided by default (alternative: mean > null); pass two_sided=True
    for the symmetric alternative.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) < 2:
        raise ZeroVariance("need at least two run values")
    s = float(np.std(v, ddof=1))
    if s == 0.0 or np.all(v == v[0]):
        raise ZeroVariance("all run values identical")
    t_stat = (float(np.mean(v)) - null) / (s / math.sqrt(len(v)))
    df = len(v) - 1
    if two_sided:
        return 2.0 * (1.0 - t_cdf(abs(t_stat), df))
    return 1.0 - t_cdf(t_stat, df)


# ------------------------------------------------------------- reporting

@dataclass
class RunEval:
    seed: int
    auc: float
    accuracy: float
    n_test: int
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def evaluate_run(seed: int, scores, labels, threshold: float = 0.5) -> RunEval:
    fpr, tpr, thr = roc_curve(scores, labels)
    return RunEval(
        seed=seed,
        auc=float(_trapezoid(tpr, fpr)),
        accuracy=accuracy(scores, labels, threshold),
        n_test=len(np.asarray(scores)),
        fpr=fpr,
        tpr=tpr,
        thresholds=thr,
    )


def build_report(run_evals: list, threshold: float = 0.5) -> dict:
    """Aggregate per-run metrics into a JSON-ready report.

    When the runs produce identical AUCs the interval and p-value are
    degenerate: the CI collapses to a point and p_value is null, with
    ci_degenerate set so readers are not misled.
    """
    if not run_evals:
        raise ValueError("no runs to report")
    aucs = [r.auc for r in run_evals]
    accs = [r.accuracy for r in run_evals]
    report = {
        "threshold": threshold,
        "n_runs": len(run_evals),
        "mean_auc": float(np.mean(aucs)),
        "mean_accuracy": float(np.mean(accs)),
        "runs": [
            {
                "seed": r.seed,
                "auc": r.auc,
                "accuracy": r.accuracy,
                "n_test": r.n_test,
                "roc": {
                    "fpr": r.fpr.tolist(),
                    "tpr": r.tpr.tolist(),
                    "thresholds": r.thresholds.tolist(),
                },
            }
            for r in run_evals
        ],
    }
    try:
        mean, half = ci95(aucs)
        report["auc_ci95"] = [mean - half, mean + half]
        report["ci_degenerate"] = False
        report["p_value_auc_gt_half"] = t_test_auc(aucs)
    except ZeroVariance:
        report["auc_ci95"] = [report["mean_auc"], report["mean_auc"]]
        report["ci_degenerate"] = True
        report["p_value_auc_gt_half"] = None
    return report


def report_json(report: dict) -> str:
    """Canonical serialization: sorted keys, two-space indent, trailing
    newline. The ROC anchor threshold is +inf and serializes as the JSON
    extension literal Infinity, which json.loads reads back."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
