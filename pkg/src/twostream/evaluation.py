"""Ranking metrics, the confusion matrix, and input-gradient saliency.

Average precision is the discrete area under the precision-recall curve:
predictions are sorted by descending score (ties broken by original index),
and precision is accumulated at each positive rank. The confusion matrix
follows the row = predicted, column = actual convention. Saliency maps are
the absolute gradients of a chosen pre-softmax category output with respect
to the input images, max-reduced over color channels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import TwoStreamModel, forward_clip, _scale_images
from .tensor import Tensor, take_element

__all__ = [
    "UndefinedAPError",
    "average_precision",
    "mean_average_precision",
    "ConfusionMatrix",
    "confusion_matrix",
    "SaliencyResult",
    "input_saliency",
    "ap_table_text",
]


class UndefinedAPError(ValueError):
    """Average precision is undefined for a category with no positives."""


def average_precision(scores, positives) -> float:
    """Area under the precision-recall staircase for one category.

    ``scores`` are per-clip confidences, ``positives`` the ground-truth
    flags. Equal scores keep their original order. Raises
    :class:`UndefinedAPError` when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ShapeError(f"scores and positives must be matching 1-d arrays, got {scores.shape} and {positives.shape}")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise UndefinedAPError("no positive instances; average precision is undefined")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    cum_tp = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    precision_at = cum_tp / ranks
    recall_at = cum_tp / n_pos
    # rectangle rule at positive ranks: precision(k) * (recall step at k),
    # accumulated sequentially in rank order so the result is bit-identical
    # to a rank-by-rank staircase integration
    ap = 0.0
    prev_recall = 0.0
    for k in np.flatnonzero(hits):
        ap += precision_at[k] * (recall_at[k] - prev_recall)
        prev_recall = recall_at[k]
    return float(ap)


def mean_average_precision(per_category_scores, labels):
    """Unweighted mean AP over categories that have positives.

    ``per_category_scores`` is (N, C): score of clip n for category c.
    Returns (mAP, list of per-category APs with None where undefined).
    """
    scores = np.asarray(per_category_scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ShapeError(f"need (N, C) scores and (N,) labels, got {scores.shape} and {labels.shape}")
    aps = []
    defined = []
    for c in range(scores.shape[1]):
        try:
            ap = average_precision(scores[:, c], labels == c)
        except UndefinedAPError:
            warnings.warn(f"category {c} has no positives; skipped in mAP", stacklevel=2)
            aps.append(None)
            continue
        aps.append(ap)
        defined.append(ap)
    if not defined:
        raise UndefinedAPError("no category has positive instances")
    return float(np.mean(defined)), aps


def ap_table_text(aps, map_value: float) -> str:
    """Tab-separated per-category AP row plus the mean, mirroring the usual
    reporting layout (one column per category, then Mean)."""
    header = "\t".join([f"cat{i}" for i in range(len(aps))] + ["Mean"])
    cells = ["nan" if ap is None else f"{ap:.6f}" for ap in aps] + [f"{map_value:.6f}"]
    return header + "\n" + "\t".join(cells) + "\n"


@dataclass
class ConfusionMatrix:
    """Counts with rows indexed by predicted category, columns by actual."""

    counts: np.ndarray

    @property
    def num_categories(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Percentage view: each row scaled to sum to 100 (empty rows zero)."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, 100.0 * self.counts / sums, 0.0)
        return out

    def to_text(self) -> str:
        c = self.num_categories
        lines = ["predicted\\actual\t" + "\t".join(str(j) for j in range(c))]
        for i in range(c):
            lines.append(str(i) + "\t" + "\t".join(str(int(v)) for v in self.counts[i]))
        return "\n".join(lines) + "\n"


def confusion_matrix(predicted, actual, num_categories: int | None = None) -> ConfusionMatrix:
    """Count matrix where entry (i, j) is the number of clips predicted i
    whose actual label is j."""
    predicted = np.asarray(predicted, dtype=np.intp)
    actual = np.asarray(actual, dtype=np.intp)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise ShapeError(f"label sequences must match, got {predicted.shape} and {actual.shape}")
    if num_categories is None:
        num_categories = int(max(predicted.max(initial=0), actual.max(initial=0))) + 1
    if predicted.size and (predicted.min() < 0 or actual.min() < 0
                           or predicted.max() >= num_categories or actual.max() >= num_categories):
        raise ShapeError(f"labels out of range [0, {num_categories})")
    counts = np.zeros((num_categories, num_categories), dtype=np.int64)
    np.add.at(counts, (predicted, actual), 1)
    return ConfusionMatrix(counts=counts)


@dataclass
class SaliencyResult:
    """Per input pair, the |gradient| of the chosen category output with
    respect to each image, max-reduced over color channels."""

    category: int
    frame_maps: list
    flow_maps: list


def input_saliency(model: TwoStreamModel, pairs, category: int) -> SaliencyResult:
    """Gradient of the pre-softmax output for ``category`` w.r.t. both input
    images of every pair.

    The pre-softmax unit is used because softmax saturation flattens the
    gradients of confident predictions. The model is read-only here;
    repeated calls give bit-identical maps.
    """
    if not 0 <= category < model.num_categories:
        raise ShapeError(f"category {category} out of range for {model.num_categories}")
    frames = Tensor(_scale_images([p[0] for p in pairs]), requires_grad=True)
    flows = Tensor(_scale_images([p[1] for p in pairs]), requires_grad=True)
    result = forward_clip(model, pairs, frames_tensor=frames, flows_tensor=flows)
    unit = take_element(result.final_logits, category)
    model.zero_grads()
    unit.backward()
    frame_grad = np.zeros_like(frames.data) if frames.grad is None else frames.grad
    flow_grad = np.zeros_like(flows.data) if flows.grad is None else flows.grad
    frame_maps = [np.abs(frame_grad[t]).max(axis=-1) for t in range(model.time_step)]
    flow_maps = [np.abs(flow_grad[t]).max(axis=-1) for t in range(model.time_step)]
    return SaliencyResult(category=category, frame_maps=frame_maps, flow_maps=flow_maps)
