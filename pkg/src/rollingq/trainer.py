"""SGD training loop with an epoch-level cosine schedule and the rotation hook."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .controller import ControllerState, RollingQConfig, compute_batch_stats, controller_step
from .linalg import make_rng
from .model import ModelParams, ModelSpec, init, loss_and_grads, model_forward
from .synthdata import Dataset, SyntheticSpec, batches, generate

# independent random sub-streams derived from the run seed
STREAM_INIT, STREAM_SHUFFLE = 1, 2


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    momentum: float = 0.0
    rollingq: bool = False
    rq: RollingQConfig = field(default_factory=RollingQConfig)
    seed: int = 0
    eval_every: int = 1
    # "final_batch" or "epoch_average" (ablation): which traces feed the controller
    stats_mode: str = "final_batch"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.stats_mode not in ("final_batch", "epoch_average"):
            raise ValueError(f"unknown stats_mode {self.stats_mode!r}")


def lr_at(epoch: float, config: TrainConfig) -> float:
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))


@dataclass
class StepResult:
    loss: float
    grad_norm_a: float
    grad_norm_v: float
    grads: ModelParams


def _encoder_norm(enc) -> float:
    return float(np.sqrt(sum(np.sum(np.square(getattr(enc, k))) for k in ("w1", "b1", "w2", "b2"))))


def train_step(model: ModelParams, batch: Dataset, lr: float, velocity: dict | None = None,
               momentum: float = 0.0, where: str = "") -> StepResult:
    """One SGD update in place. The rotation is never touched."""
    # overflow shows up as a non-finite loss, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        loss, grads, _ = loss_and_grads(model, batch.raw_a, batch.raw_v, batch.labels)
    if not math.isfinite(loss):
        raise DivergenceError(f"divergence: non-finite loss {where}".strip())
    params = model.named_arrays(include_rotation=False)
    gvals = dict(grads.named_arrays(include_rotation=False))
    for name, p in params:
        g = gvals[name]
        if momentum:
            v = velocity.setdefault(name, np.zeros_like(p))
            v *= momentum
            v += g
            g = v
        if lr:
            p -= lr * g
    with np.errstate(over="ignore", invalid="ignore"):
        norms = _encoder_norm(grads.encoder_a), _encoder_norm(grads.encoder_v)
    return StepResult(loss, *norms, grads)


@dataclass
class TrainReport:
    train_loss: list[float]
    test_acc: list[float]
    records: list[diagnostics.DiagnosticsRecord]
    scatter: list[diagnostics.ScatterRow]
    model: ModelParams
    controller: ControllerState
    train_set: Dataset
    test_set: Dataset


def run(config: TrainConfig, spec: SyntheticSpec, model_spec: ModelSpec | None = None,
        data: tuple[Dataset, Dataset] | None = None) -> TrainReport:
    """Full training run; one diagnostics record per ``eval_every`` epochs."""
    model_spec = model_spec or ModelSpec(din_a=spec.din_a, din_v=spec.din_v, num_classes=spec.num_classes)
    train_set, test_set = data if data is not None else generate(spec)
    model = init(model_spec, make_rng(config.seed, STREAM_INIT))
    shuffle = make_rng(config.seed, STREAM_SHUFFLE)
    state = ControllerState()
    velocity: dict = {}
    losses, accs, records = [], [], []
    scatter: list = []

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        epoch_batches = batches(train_set, config.batch_size, shuffle)
        batch_losses, norms_a, norms_v = [], [], []
        events = []
        for j, batch in enumerate(epoch_batches):
            res = train_step(model, batch, lr, velocity, config.momentum,
                             where=f"at epoch {epoch + 1}, batch {j + 1}")
            batch_losses.append(res.loss * len(batch))
            norms_a.append(res.grad_norm_a)
            norms_v.append(res.grad_norm_v)
            last = j == len(epoch_batches) - 1
            if config.rollingq and (last or config.rq.cadence == "batch"):
                # statistics on frozen (post-update) parameters
                if config.stats_mode == "epoch_average" and last:
                    traces = [model_forward(model, b.raw_a, b.raw_v).trace for b in epoch_batches]
                else:
                    traces = model_forward(model, batch.raw_a, batch.raw_v).trace
                events.append(controller_step(state, config.rq, compute_batch_stats(traces),
                                              model.fusion, epoch + 1))

        mean_loss = float(sum(batch_losses) / len(train_set))
        losses.append(mean_loss)
        applied = [e for e in events if e.applied]
        if (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs:
            rec, scatter = diagnostics.snapshot(
                model, test_set, epoch + 1,
                alpha=applied[-1].alpha if applied else None,
                rotation_applied=bool(applied),
                rotations_used=state.rotations_used,
                grad_norm_a=float(np.mean(norms_a)), grad_norm_v=float(np.mean(norms_v)),
                train_loss=mean_loss,
            )
            records.append(rec)
            accs.append(rec.test_acc)

    return TrainReport(losses, accs, records, scatter, model, state, train_set, test_set)
