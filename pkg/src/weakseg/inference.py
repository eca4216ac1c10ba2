"""Test-time segmentation via hard alignment against the masked pseudo-label."""

import logging
from dataclasses import dataclass

import numpy as np

from . import dtw
from .model import ScorerModel, forward
from .training import pseudo_label

log = logging.getLogger(__name__)


@dataclass
class Segment:
    start: int  # 1-based, inclusive
    end: int  # 1-based, inclusive
    label: int


@dataclass
class SegmentResult:
    id: str
    segments: list
    point_predictions: np.ndarray
    global_score: float
    pseudo_label: np.ndarray  # after masking by the predicted instance label
    local_scores: np.ndarray
    boundaries: np.ndarray | None = None


def merge_segments(segments: list) -> list:
    """Coalesce adjacent segments that share a label."""
    out = []
    for seg in segments:
        if out and out[-1].label == seg.label:
            out[-1] = Segment(out[-1].start, seg.end, seg.label)
        else:
            out.append(seg)
    return out


def segments_from_boundaries(boundaries, bits) -> list:
    return [
        Segment(int(boundaries[l]) + 1, int(boundaries[l + 1]), int(bits[l]))
        for l in range(len(bits))
    ]


def segment_scores(local_scores, bits, clamp_eps: float = 1e-7):
    """Segment a score series against a pseudo-label; returns (segments, boundaries or None)."""
    T = len(local_scores)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size > T:
        raise ValueError(f"no feasible alignment: label length L={bits.size} exceeds T={T}")
    if not bits.any():
        return [Segment(1, T, 0)], None
    costs = dtw.build_cost_matrix(bits, local_scores, clamp_eps)
    bounds = dtw.decode_path(costs)
    return merge_segments(segments_from_boundaries(bounds, bits)), bounds


def segment_instance(model: ScorerModel, instance, L: int, tau: float, tau_star: float,
                     instance_id: str | None = None) -> SegmentResult:
    """Predict the instance label from the global score, then segment by hard DTW."""
    values = getattr(instance, "values", instance)
    iid = instance_id or getattr(instance, "id", "")
    T = np.shape(values)[1]
    if L > T:
        raise ValueError(f"no feasible alignment: L={L} exceeds T={T}")
    _, scores, tape = forward(model, values)
    y_hat = int(scores.global_ >= tau_star)
    bits = y_hat * pseudo_label(model, tape, L, tau)
    segments, bounds = segment_scores(scores.local, bits, model.clamp_eps)
    pred = np.zeros(T, dtype=np.int64)
    for seg in segments:
        if seg.label:
            pred[seg.start - 1 : seg.end] = 1
    return SegmentResult(iid, segments, pred, scores.global_, bits, scores.local, bounds)


def segment_dataset(model: ScorerModel, dataset, L: int, tau: float, tau_star: float):
    """Segment every instance in id order.

    Returns ``(results, failures)``; a failing instance is recorded as
    ``(id, message)`` and does not stop the rest.
    """
    results, failures = [], []
    for inst in sorted(dataset.instances, key=lambda i: i.id):
        try:
            results.append(segment_instance(model, inst, L, tau, tau_star))
        except (ValueError, FloatingPointError) as e:
            log.warning("segmentation failed for %s: %s", inst.id, e)
            failures.append((inst.id, str(e)))
    return results, failures


def count_runs(pred) -> int:
    """Number of maximal runs of ones in a binary vector."""
    p = np.asarray(pred, dtype=np.int64)
    if p.size == 0:
        return 0
    return int(p[0] + np.sum((p[1:] == 1) & (p[:-1] == 0)))
