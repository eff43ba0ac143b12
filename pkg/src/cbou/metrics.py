"""Evaluation metrics over experiment traces and parent-set posteriors.

Y* is the best (minimum) target value observed during a run and Ȳ the
average selected value. Posterior quality is scored by mean accuracy and
mean F1 of the candidate masks against the true parent mask, weighted by
posterior probability. Parent-intervention proportion measures how often
the chosen intervention stayed inside the true parent set.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .parent_posterior import ParentPosterior, ParentSet


class MetricsError(ValueError):
    pass


@dataclass
class MetricReport:
    y_star: float
    y_bar: float
    y_star_series: list
    mean_accuracy_series: list = field(default_factory=list)
    mean_f1_series: list = field(default_factory=list)
    parent_intervention_proportion: float = float("nan")


def _trial_ys(trace) -> np.ndarray:
    records = trace.iterations if hasattr(trace, "iterations") else trace
    ys = np.asarray(
        [r["y"] if isinstance(r, dict) else r.y for r in records], dtype=float
    )
    if ys.size == 0:
        raise MetricsError("trace has no trial records")
    return ys


def y_star(trace) -> float:
    return float(_trial_ys(trace).min())


def y_bar(trace) -> float:
    return float(_trial_ys(trace).mean())


def mean_accuracy(post: ParentPosterior, true_set: ParentSet) -> float:
    """Posterior-weighted per-node mask accuracy against the true parents."""
    d = post.num_nodes - 1
    if d < 1:
        raise MetricsError("need at least one non-target node")
    truth = np.asarray(true_set.mask(post.num_nodes, post.target))
    total = 0.0
    for s, w in post.weights().items():
        mask = np.asarray(s.mask(post.num_nodes, post.target))
        total += w * float((mask == truth).sum()) / d
    return total


def mean_f1(post: ParentPosterior, true_set: ParentSet) -> float:
    """Posterior-weighted F1 of each candidate set against the true parents.

    A candidate with no true positives, false positives, or false negatives
    (empty predicted vs empty truth) scores 1.
    """
    truth = set(true_set.nodes)
    total = 0.0
    for s, w in post.weights().items():
        pred = set(s.nodes)
        tp = len(pred & truth)
        fp = len(pred - truth)
        fn = len(truth - pred)
        f1 = 1.0 if tp + fp + fn == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
        total += w * f1
    return total


def parent_intervention_proportion(trace, true_set: ParentSet) -> float:
    """Fraction of trials whose chosen element lies inside the true parents."""
    records = trace.iterations if hasattr(trace, "iterations") else trace
    if not records:
        raise MetricsError("trace has no trial records")
    truth = set(true_set.nodes)
    hits = 0
    for r in records:
        element = r["element"] if isinstance(r, dict) else r.element
        hits += set(element) <= truth
    return hits / len(records)
