"""Optimization of the multi-task objective.

Training runs in two phases: rmsprop (lr 0.001, fuzz 1e-8) drives the loss
down quickly, then plain SGD (lr 0.0001) takes over for fine tuning once
the smoothed epoch loss stops improving. The switch is permanent and
happens at most once.

Everything is deterministic given the config seed: the epoch shuffle comes
from one seeded generator, gradients accumulate over each mini-batch in
ascending clip-index order, and the optimizer steps are pure elementwise
updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .flow import FlowParams, preprocess_clip
from .model import TwoStreamModel, forward_clip
from .tensor import Tensor

__all__ = [
    "TrainingConfig",
    "OptimizerState",
    "EpochRecord",
    "TrainingHistory",
    "rmsprop_step",
    "sgd_step",
    "train",
    "prepare_samples",
]

# smoothing constant for the epoch-loss average that drives the phase switch
EMA_BETA = 0.7


@dataclass(frozen=True)
class TrainingConfig:
    lambda_weight: float = 2.0
    rmsprop_lr: float = 0.001
    sgd_lr: float = 0.0001
    fuzz: float = 1e-8
    decay_rho: float = 0.9
    batch_size: int = 8
    max_epochs: int = 30
    switch_patience: int = 3
    switch_threshold: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_weight",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("rmsprop_lr", "sgd_lr", "fuzz", "decay_rho", "switch_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.switch_patience < 1:
            raise ValueError("batch_size, max_epochs, switch_patience must be >= 1")


def rmsprop_step(param, grad, acc, lr: float = 0.001, rho: float = 0.9, fuzz: float = 1e-8):
    """One rmsprop update: acc <- rho*acc + (1-rho)*g^2,
    w <- w - lr*g/(sqrt(acc) + fuzz). Pure: returns (new_param, new_acc)."""
    p = param.data if isinstance(param, Tensor) else np.asarray(param, dtype=np.float64)
    g = grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)
    acc = np.asarray(acc, dtype=np.float64)
    if g.shape != p.shape or acc.shape != p.shape:
        from .errors import ShapeError

        raise ShapeError(f"rmsprop shapes disagree: param {p.shape}, grad {g.shape}, acc {acc.shape}")
    new_acc = rho * acc + (1.0 - rho) * g * g
    new_param = p - lr * g / (np.sqrt(new_acc) + fuzz)
    return new_param, new_acc


def sgd_step(param, grad, lr: float = 0.0001):
    """Plain gradient descent without momentum: w <- w - lr*g."""
    p = param.data if isinstance(param, Tensor) else np.asarray(param, dtype=np.float64)
    g = grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)
    if g.shape != p.shape:
        from .errors import ShapeError

        raise ShapeError(f"sgd shapes disagree: param {p.shape}, grad {g.shape}")
    return p - lr * g


@dataclass
class OptimizerState:
    """Phase marker plus per-parameter squared-gradient accumulators
    (rmsprop phase only)."""

    kind: str = "rmsprop"
    learning_rate: float = 0.001
    fuzz: float = 1e-8
    decay_rho: float = 0.9
    accumulators: dict = field(default_factory=dict)

    def apply(self, named_params) -> None:
        for name, p in named_params:
            if p.grad is None:
                continue
            if self.kind == "rmsprop":
                acc = self.accumulators.get(name)
                if acc is None:
                    acc = np.zeros_like(p.data)
                new_param, new_acc = rmsprop_step(p, p.grad, acc, lr=self.learning_rate,
                                                  rho=self.decay_rho, fuzz=self.fuzz)
                self.accumulators[name] = new_acc
                p.assign(new_param)
            else:
                p.assign(sgd_step(p, p.grad, lr=self.learning_rate))


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    total_loss: float
    loss1_sum: float
    loss2: float
    accuracy: float


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)

    def to_log_text(self) -> str:
        lines = ["epoch\tphase\ttotal_loss\tloss1_sum\tloss2\taccuracy"]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.phase}\t{r.total_loss:.10f}\t{r.loss1_sum:.10f}"
                         f"\t{r.loss2:.10f}\t{r.accuracy:.6f}")
        return "\n".join(lines) + "\n"


def prepare_samples(clips, time_step: int, input_size, flow_params: FlowParams | None = None):
    """Preprocess every clip once into ((frame, flow image) pairs, label)."""
    samples = []
    for clip in clips:
        pairs = preprocess_clip(clip, target_frames=time_step + 1, target_size=input_size,
                                params=flow_params)
        samples.append((pairs, clip.label))
    return samples


def _assert_finite_grads(model: TwoStreamModel) -> None:
    for group, members in model.parameter_groups().items():
        for name, p in members:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient in parameter group '{group}' ({name})")


def train(model: TwoStreamModel, dataset, config: TrainingConfig | None = None,
          flow_params: FlowParams | None = None, samples=None):
    """Fit ``model`` on a list of clips and return (model, TrainingHistory).

    ``dataset`` entries are preprocessed once up front; pass ``samples`` to
    reuse an existing preprocessing. A NaN loss or gradient aborts with a
    diagnostic naming the parameter group that went non-finite first.
    """
    if config is None:
        config = TrainingConfig()
    if samples is None:
        if not dataset:
            raise ValueError("training dataset is empty")
        size = model.backbone_frame.config.input_size
        samples = prepare_samples(dataset, model.time_step, size, flow_params)
    if not samples:
        raise ValueError("training dataset is empty")

    rng = np.random.default_rng(config.seed)
    named_params = model.parameters()
    optimizer = OptimizerState(kind="rmsprop", learning_rate=config.rmsprop_lr,
                               fuzz=config.fuzz, decay_rho=config.decay_rho)
    history = TrainingHistory()
    ema = None
    stall = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(samples))
        sum_total = sum_l1 = sum_l2 = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = sorted(order[start:start + config.batch_size].tolist())
            model.zero_grads()
            for idx in batch:
                pairs, label = samples[idx]
                result = forward_clip(model, pairs, label=label, lambda_weight=config.lambda_weight)
                total = result.losses.total
                if not np.isfinite(total.data):
                    raise NumericError(f"loss became non-finite on clip {idx} in epoch {epoch}")
                total.backward()
                _assert_finite_grads(model)
                sum_total += total.item()
                sum_l1 += sum(result.losses.frame_loss_values)
                sum_l2 += result.losses.final_loss_value
                if int(result.final_probs.data.argmax()) == label:
                    correct += 1
            inv = 1.0 / len(batch)
            for _, p in named_params:
                if p.grad is not None:
                    p.grad *= inv
            optimizer.apply(named_params)

        n = len(samples)
        epoch_loss = sum_total / n
        history.records.append(EpochRecord(epoch=epoch, phase=optimizer.kind,
                                           total_loss=epoch_loss, loss1_sum=sum_l1 / n,
                                           loss2=sum_l2 / n, accuracy=correct / n))

        prev_ema = ema
        ema = epoch_loss if ema is None else EMA_BETA * ema + (1.0 - EMA_BETA) * epoch_loss
        if optimizer.kind == "rmsprop" and prev_ema is not None:
            improvement = (prev_ema - ema) / max(abs(prev_ema), 1e-12)
            stall = stall + 1 if improvement < config.switch_threshold else 0
            if stall >= config.switch_patience:
                optimizer = OptimizerState(kind="sgd", learning_rate=config.sgd_lr)
    return model, history
