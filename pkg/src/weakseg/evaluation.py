"""Point- and instance-level detection metrics.

Predictions are scored point by point against the ground truth; there is no
point-adjust step anywhere in this module.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    iou: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def _binary(v, name: str) -> np.ndarray:
    a = np.asarray(v).ravel()
    if a.size and not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be binary")
    return a.astype(bool)


def point_metrics(pred, truth) -> MetricReport:
    """Confusion counts, precision, recall, F1 and IoU; 0/0 is reported as 0."""
    p, g = _binary(pred, "pred"), _binary(truth, "truth")
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: pred has {p.size} points, truth has {g.size}")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    precision, d1 = _ratio(tp, tp + fp)
    recall, d2 = _ratio(tp, tp + fn)
    # equals 2PR/(P+R), computed from integer counts with a single rounding
    f1, d3 = _ratio(2 * tp, 2 * tp + fp + fn)
    iou, d4 = _ratio(tp, tp + fp + fn)
    return MetricReport(tp, fp, fn, tn, precision, recall, f1, iou, d1 or d2 or d3 or d4)


def candidate_thresholds(scores) -> np.ndarray:
    """Midpoints between sorted unique scores, plus one sentinel below and one above."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    if u.size == 0:
        return np.array([np.inf])
    mids = (u[:-1] + u[1:]) / 2.0
    below = u[0] - 1.0
    above = u[-1] + 1.0
    return np.concatenate([[below], mids, [above]])


def best_threshold_metrics(scores, truth) -> tuple[MetricReport, float]:
    """Threshold maximizing F1 (predict 1 where score >= threshold); ties go to the smallest.

    When no threshold reaches a positive F1 the all-normal sentinel is returned.

    The returned report carries the IoU at that same threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = _binary(truth, "truth")
    if s.shape != g.shape:
        raise ValueError(f"length mismatch: scores has {s.size} points, truth has {g.size}")
    cands = candidate_thresholds(s)
    # cumulative counts over a descending sort give every threshold in O(n log n)
    order = np.argsort(-s, kind="stable")
    s_sorted, g_sorted = s[order], g[order]
    tp_cum = np.concatenate([[0], np.cumsum(g_sorted)])
    n_pos = int(g.sum())
    # number of points with score >= c, for each candidate
    k = np.searchsorted(-s_sorted, -cands, side="right")
    tp = tp_cum[k]
    fp = k - tp
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    best = int(np.argmax(f1))  # candidates are ascending, so argmax picks the smallest on ties
    if f1[best] == 0:
        best = len(cands) - 1  # nothing detectable: predict all-normal
    thr = float(cands[best])
    return point_metrics(s >= thr, g), thr


def auroc(scores, truth) -> float:
    """Mann-Whitney AUROC; tied pairs count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = _binary(truth, "truth")
    if s.shape != g.shape:
        raise ValueError(f"length mismatch: scores has {s.size} points, truth has {g.size}")
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes in truth")
    ranks = rankdata(s)
    u = ranks[g].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def instance_metrics(global_scores, instance_labels, threshold: float) -> MetricReport:
    """Metrics for instance predictions ``score >= threshold``."""
    s = np.asarray(global_scores, dtype=np.float64).ravel()
    return point_metrics((s >= threshold).astype(int), instance_labels)


def format_table(rows: dict) -> str:
    """Two-column plain-text table of metric name and value."""
    width = max(len(k) for k in rows)
    lines = []
    for k, v in rows.items():
        val = f"{v:.4f}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {val}")
    return "\n".join(lines)
