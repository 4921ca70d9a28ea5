"""The two-stream activity model and its multi-task objective.

Per frame, the four globally pooled feature vectors (flow GAP, flow GMAX,
frame GAP, frame GMAX, in that order) are fused by a 4-step LSTM whose
final state, through a softmax head, becomes that frame's representation: a
probability distribution over the activity categories. A second LSTM consumes the
representation sequence and predicts the clip label through its own softmax
head. Training sums a cross-entropy term per frame plus a weighted
cross-entropy on the final prediction, all on one graph, so a single
backward pass reaches every parameter.

An ablation variant replaces the fusion LSTM with an element-wise sum of
the four vectors followed by a learned projection; it is provably
insensitive to the order of its inputs, which is exactly what the variant
exists to demonstrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, build_backbone, extract_features
from .errors import ShapeError
from .tensor import Tensor

__all__ = [
    "LstmParams",
    "DenseParams",
    "TwoStreamModel",
    "LossBreakdown",
    "build_model",
    "one_hot",
    "frame_representation",
    "frame_representation_sum_variant",
    "recognize_activity",
    "categorical_cross_entropy",
    "total_loss",
    "forward_clip",
    "ClipForward",
    "DEFAULT_LAMBDA",
]

DEFAULT_LAMBDA = 2.0
DEFAULT_HIDDEN = 200


@dataclass
class LstmParams:
    w_x: Tensor
    w_h: Tensor
    bias: Tensor

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]


@dataclass
class DenseParams:
    w: Tensor
    b: Tensor


@dataclass
class TwoStreamModel:
    backbone_frame: Backbone
    backbone_flow: Backbone
    lstm1: LstmParams
    fc1: DenseParams
    lstm2: LstmParams
    fc2: DenseParams
    num_categories: int
    time_step: int
    representation: str = "lstm"       # "lstm" or "sum" (ablation variant)
    proj: DenseParams | None = None    # sum variant only

    def parameters(self):
        """Canonical ordered (name, tensor) inventory; checkpoint and
        optimizer state both key off this order."""
        out = []
        for prefix, backbone in (("backbone_frame", self.backbone_frame),
                                 ("backbone_flow", self.backbone_flow)):
            out.extend((f"{prefix}.{name}", p) for name, p in backbone.parameters())
        out.append(("lstm1.w_x", self.lstm1.w_x))
        out.append(("lstm1.w_h", self.lstm1.w_h))
        out.append(("lstm1.bias", self.lstm1.bias))
        if self.proj is not None:
            out.append(("proj.w", self.proj.w))
            out.append(("proj.b", self.proj.b))
        out.append(("fc1.w", self.fc1.w))
        out.append(("fc1.b", self.fc1.b))
        out.append(("lstm2.w_x", self.lstm2.w_x))
        out.append(("lstm2.w_h", self.lstm2.w_h))
        out.append(("lstm2.bias", self.lstm2.bias))
        out.append(("fc2.w", self.fc2.w))
        out.append(("fc2.b", self.fc2.b))
        return out

    def parameter_groups(self):
        groups = {}
        for name, p in self.parameters():
            groups.setdefault(name.split(".")[0], []).append((name, p))
        return groups

    def zero_grads(self):
        for _, p in self.parameters():
            p.zero_grad()


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in, fan_out = shape
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    rows, cols = shape
    flat = (rows, cols) if rows >= cols else (cols, rows)
    a = rng.normal(size=flat)
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q[:rows, :cols])


def _init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmParams:
    # forget-gate bias starts at 1 so early training does not erase state
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    return LstmParams(
        w_x=Tensor(glorot_uniform(rng, (input_dim, 4 * hidden)), requires_grad=True),
        w_h=Tensor(orthogonal(rng, (hidden, 4 * hidden)), requires_grad=True),
        bias=Tensor(bias, requires_grad=True),
    )


def _init_dense(rng: np.random.Generator, input_dim: int, output_dim: int) -> DenseParams:
    return DenseParams(
        w=Tensor(glorot_uniform(rng, (input_dim, output_dim)), requires_grad=True),
        b=Tensor(np.zeros(output_dim), requires_grad=True),
    )


def build_model(num_categories: int, time_step: int,
                backbone_config: BackboneConfig | None = None,
                seed: int = 0, lstm_hidden: int = DEFAULT_HIDDEN,
                representation: str = "lstm") -> TwoStreamModel:
    """Construct a full model with all parameters derived from ``seed``."""
    if num_categories < 2:
        raise ShapeError(f"need at least 2 categories, got {num_categories}")
    if time_step < 1:
        raise ShapeError(f"time_step must be >= 1, got {time_step}")
    if representation not in ("lstm", "sum"):
        raise ShapeError(f"representation must be 'lstm' or 'sum', got {representation!r}")
    if backbone_config is None:
        backbone_config = BackboneConfig()
    children = np.random.SeedSequence(seed).spawn(7)
    feat = backbone_config.final_channels
    rngs = [np.random.default_rng(c) for c in children[2:]]
    model = TwoStreamModel(
        backbone_frame=build_backbone(backbone_config, children[0]),
        backbone_flow=build_backbone(backbone_config, children[1]),
        lstm1=_init_lstm(rngs[0], feat, lstm_hidden),
        fc1=_init_dense(rngs[1], lstm_hidden, num_categories),
        lstm2=_init_lstm(rngs[2], num_categories, lstm_hidden),
        fc2=_init_dense(rngs[3], lstm_hidden, num_categories),
        num_categories=num_categories,
        time_step=time_step,
        representation=representation,
    )
    if representation == "sum":
        model.proj = _init_dense(rngs[4], feat, lstm_hidden)
    return model


def one_hot(label: int, num_categories: int) -> np.ndarray:
    if not 0 <= label < num_categories:
        raise ShapeError(f"label {label} out of range for {num_categories} categories")
    g = np.zeros(num_categories)
    g[label] = 1.0
    return g


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _dense(x: Tensor, params: DenseParams) -> Tensor:
    if x.data.ndim == 1:
        return T.squeeze_row(T.add_rowvec(T.matmul(T.lift_row(x), params.w), params.b))
    return T.add_rowvec(T.matmul(x, params.w), params.b)


def _zero_state(like: Tensor, hidden: int):
    if like.data.ndim == 2:
        shape = (like.shape[0], hidden)
    else:
        shape = (hidden,)
    return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))


def _check_widths(model: TwoStreamModel, vectors) -> None:
    feat = model.backbone_frame.config.final_channels
    for v in vectors:
        if v.shape[-1] != feat:
            raise ShapeError(f"pooled vector width {v.shape[-1]} != backbone channels {feat}")


def frame_representation(model: TwoStreamModel, gap_frame: Tensor, gmax_frame: Tensor,
                         gap_flow: Tensor, gmax_flow: Tensor) -> Tensor:
    """Fuse the four pooled vectors into a per-frame probability vector.

    The fusion LSTM consumes them as a 4-step sequence in the fixed order
    (flow GAP, flow GMAX, frame GAP, frame GMAX) from zero initial state;
    the final hidden state goes through the softmax head. Inputs may be
    (C_feat,) vectors or (B, C_feat) batches.
    """
    # flow steps go first: late zero-input steps only decay the carried
    # state, so a switched-off frame stream cannot erase the motion signal
    steps = (gap_flow, gmax_flow, gap_frame, gmax_frame)
    _check_widths(model, steps)
    h, c = _zero_state(gap_flow, model.lstm1.hidden)
    for x in steps:
        h, c = T.lstm_cell_step(x, h, c, model.lstm1.w_x, model.lstm1.w_h, model.lstm1.bias)
    logits = _dense(h, model.fc1)
    return T.softmax(logits) if logits.data.ndim == 1 else T.softmax_rows(logits)


def frame_representation_sum_variant(model: TwoStreamModel, gap_frame: Tensor, gmax_frame: Tensor,
                                     gap_flow: Tensor, gmax_flow: Tensor) -> Tensor:
    """Ablation path: element-wise sum of the four vectors, a learned linear
    projection to the hidden width, then the same softmax head."""
    if model.proj is None:
        raise ShapeError("model was not built with the sum-variant projection")
    steps = (gap_frame, gmax_frame, gap_flow, gmax_flow)
    _check_widths(model, steps)
    summed = T.add(T.add(gap_frame, gmax_frame), T.add(gap_flow, gmax_flow))
    logits = _dense(_dense(summed, model.proj), model.fc1)
    return T.softmax(logits) if logits.data.ndim == 1 else T.softmax_rows(logits)


def recognize_activity(model: TwoStreamModel, reprs) -> Tensor:
    """Predict the clip-level distribution from ``time_step`` frame
    representations via the temporal LSTM and its softmax head."""
    return T.softmax(_temporal_logits(model, reprs))


def _temporal_logits(model: TwoStreamModel, reprs) -> Tensor:
    reprs = list(reprs)
    if len(reprs) != model.time_step:
        raise ShapeError(f"expected {model.time_step} frame representations, got {len(reprs)}")
    h, c = _zero_state(reprs[0], model.lstm2.hidden)
    for r in reprs:
        if r.shape[-1] != model.num_categories:
            raise ShapeError(f"representation width {r.shape[-1]} != {model.num_categories} categories")
        h, c = T.lstm_cell_step(r, h, c, model.lstm2.w_x, model.lstm2.w_h, model.lstm2.bias)
    return _dense(h, model.fc2)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def categorical_cross_entropy(target: np.ndarray, p: Tensor) -> Tensor:
    """-sum(g_i log p_i) for a one-hot g; equals -log p at the true index."""
    target = np.asarray(target, dtype=np.float64)
    ones = target == 1.0
    if not (ones.sum() == 1 and np.logical_or(target == 0.0, ones).all()):
        raise ShapeError(f"target must be one-hot, got {target}")
    return T.cross_entropy(p, target)


@dataclass
class LossBreakdown:
    """Eq-style multi-task loss: per-frame terms, the final-prediction term,
    its weight, and their exact combination."""

    frame_losses: list
    final_loss: Tensor
    lambda_weight: float
    total: Tensor

    @property
    def frame_loss_values(self) -> list:
        return [t.item() for t in self.frame_losses]

    @property
    def final_loss_value(self) -> float:
        return self.final_loss.item()

    @property
    def total_value(self) -> float:
        return self.total.item()


def _as_scalar_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(float(value)))


def total_loss(frame_losses, final_loss, lambda_weight: float = DEFAULT_LAMBDA) -> LossBreakdown:
    """Combine losses as sum(frame terms) + lambda * final term.

    The total is built with exactly that float evaluation order, so the
    breakdown reproduces the combination bitwise.
    """
    if lambda_weight < 0:
        raise ValueError(f"lambda_weight must be >= 0, got {lambda_weight}")
    frame_losses = [_as_scalar_tensor(v) for v in frame_losses]
    final_loss = _as_scalar_tensor(final_loss)
    for t in frame_losses + [final_loss]:
        val = t.item()
        if not np.isfinite(val) or val < 0:
            raise ValueError(f"loss terms must be finite and >= 0, got {val}")
    acc = frame_losses[0]
    for t in frame_losses[1:]:
        acc = T.add(acc, t)
    combined = T.add(acc, T.scale(final_loss, lambda_weight))
    return LossBreakdown(frame_losses=frame_losses, final_loss=final_loss,
                         lambda_weight=float(lambda_weight), total=combined)


# ---------------------------------------------------------------------------
# full clip forward
# ---------------------------------------------------------------------------

@dataclass
class ClipForward:
    frame_probs: Tensor          # (time_step, C) representation matrix
    reprs: list                  # per-frame (C,) rows of frame_probs
    final_logits: Tensor         # (C,) pre-softmax output
    final_probs: Tensor          # (C,)
    losses: LossBreakdown | None


def _scale_images(images) -> np.ndarray:
    stack = np.stack([np.asarray(img) for img in images])
    if stack.dtype == np.uint8:
        return stack.astype(np.float64) / 255.0
    return stack.astype(np.float64)


def forward_clip(model: TwoStreamModel, pairs, label: int | None = None,
                 lambda_weight: float = DEFAULT_LAMBDA, zero_stream: str | None = None,
                 frames_tensor: Tensor | None = None, flows_tensor: Tensor | None = None) -> ClipForward:
    """Run a full clip through the model on one autodiff graph.

    ``pairs`` holds ``time_step`` (frame image, flow image) tuples, uint8 or
    pre-scaled float [0, 1]. When ``label`` is given, the per-frame targets
    are that label replicated and the returned breakdown carries the
    combined loss. ``zero_stream`` ("frame" or "flow") replaces that
    stream's pooled vectors with zeros, which switches the stream off at
    evaluation time. Callers that need input gradients can pass pre-built
    ``frames_tensor``/``flows_tensor`` of shape (time_step, H, W, 3).
    """
    if zero_stream not in (None, "frame", "flow"):
        raise ShapeError(f"zero_stream must be None, 'frame' or 'flow', got {zero_stream!r}")
    if frames_tensor is None or flows_tensor is None:
        if len(pairs) != model.time_step:
            raise ShapeError(f"expected {model.time_step} pairs, got {len(pairs)}")
        frames_tensor = Tensor(_scale_images([p[0] for p in pairs]))
        flows_tensor = Tensor(_scale_images([p[1] for p in pairs]))
    elif frames_tensor.shape[0] != model.time_step:
        raise ShapeError(f"expected {model.time_step} frames, got {frames_tensor.shape[0]}")

    gap_f, gmax_f = extract_features(model.backbone_frame, frames_tensor)
    gap_o, gmax_o = extract_features(model.backbone_flow, flows_tensor)
    if zero_stream == "frame":
        gap_f = Tensor(np.zeros_like(gap_f.data))
        gmax_f = Tensor(np.zeros_like(gmax_f.data))
    elif zero_stream == "flow":
        gap_o = Tensor(np.zeros_like(gap_o.data))
        gmax_o = Tensor(np.zeros_like(gmax_o.data))

    represent = frame_representation if model.representation == "lstm" else frame_representation_sum_variant
    frame_probs = represent(model, gap_f, gmax_f, gap_o, gmax_o)
    reprs = [T.take_row(frame_probs, t) for t in range(model.time_step)]
    final_logits = _temporal_logits(model, reprs)
    final_probs = T.softmax(final_logits)

    losses = None
    if label is not None:
        target = one_hot(label, model.num_categories)
        frame_losses = [categorical_cross_entropy(target, r) for r in reprs]
        final_ce = categorical_cross_entropy(target, final_probs)
        losses = total_loss(frame_losses, final_ce, lambda_weight)
    return ClipForward(frame_probs=frame_probs, reprs=reprs, final_logits=final_logits,
                       final_probs=final_probs, losses=losses)
