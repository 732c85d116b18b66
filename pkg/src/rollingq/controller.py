"""Query-rotation controller.

At the end of an epoch the controller measures the attention imbalance rate
(AIR), the batch mean of ``cos(q, k_hat_a) - cos(q, k_hat_v)``. When
``|AIR| >= beta`` it builds a rebalance anchor that leans toward the
under-attended modality and rotates the query onto it by right-multiplying
the accumulated rotation ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fusion import FusionParams, FusionTrace, average_keys
from .linalg import ContractError, cosine_similarity, l2_norm, plane_rotation_from_pair, unit


@dataclass(frozen=True)
class RollingQConfig:
    rho: float = 1.0
    beta: float = 0.5
    max_rotations: int = 3
    # "epoch": last batch of each epoch only; "batch": every batch (ablation)
    cadence: str = "epoch"

    def __post_init__(self):
        if not self.rho > 0:
            raise ContractError(f"rho must be > 0, got {self.rho}")
        if not self.beta > 0:
            raise ContractError(f"beta must be > 0, got {self.beta}")
        if self.max_rotations < 0:
            raise ContractError(f"max_rotations must be >= 0, got {self.max_rotations}")
        if self.cadence not in ("epoch", "batch"):
            raise ContractError(f"unknown cadence {self.cadence!r}")


@dataclass
class BatchKeyStats:
    mean_key_a: np.ndarray
    mean_key_v: np.ndarray
    mean_query: np.ndarray
    cos_a: float
    cos_v: float
    air: float
    size: int


@dataclass
class ControllerEvent:
    epoch: int
    air: float
    alpha: float | None
    applied: bool


@dataclass
class ControllerState:
    rotations_used: int = 0
    air_history: list[tuple[int, float]] = field(default_factory=list)
    events: list[ControllerEvent] = field(default_factory=list)


def compute_batch_stats(traces: FusionTrace | Sequence[FusionTrace]) -> BatchKeyStats:
    """Mean average-keys, mean query and AIR over every sample in ``traces``."""
    if isinstance(traces, FusionTrace):
        traces = [traces]
    if not traces:
        raise ContractError("compute_batch_stats needs a nonempty batch")
    k_a, k_v, q, c_a, c_v = [], [], [], [], []
    for tr in traces:
        ka = average_keys(tr.keys_a).reshape(-1, tr.query.shape[0])
        kv = average_keys(tr.keys_v).reshape(-1, tr.query.shape[0])
        qs = np.broadcast_to(tr.query, ka.shape)
        k_a.append(ka)
        k_v.append(kv)
        q.append(qs)
        c_a.append(np.atleast_1d(cosine_similarity(ka, qs)))
        c_v.append(np.atleast_1d(cosine_similarity(kv, qs)))
    k_a, k_v, q = np.concatenate(k_a), np.concatenate(k_v), np.concatenate(q)
    c_a, c_v = np.concatenate(c_a), np.concatenate(c_v)
    return BatchKeyStats(
        mean_key_a=k_a.mean(axis=0),
        mean_key_v=k_v.mean(axis=0),
        mean_query=q.mean(axis=0),
        cos_a=float(c_a.mean()),
        cos_v=float(c_v.mean()),
        air=float(np.mean(c_a - c_v)),
        size=int(c_a.size),
    )


def compute_alpha(air: float, rho: float) -> float:
    if not rho > 0:
        raise ContractError(f"rho must be > 0, got {rho}")
    return 0.5 * (1.0 + np.tanh(-rho * air))


def compute_anchor(stats: BatchKeyStats, alpha: float) -> np.ndarray:
    """Blend of the unit mean keys, rescaled to the mean query's norm.

    The blend is renormalized before scaling so that the anchor and the
    mean query have equal length; the rotation then maps one exactly onto
    the other.
    """
    q_norm = l2_norm(stats.mean_query)
    if q_norm <= 1e-12:
        raise ContractError("degenerate mean query")
    blend = alpha * unit(stats.mean_key_a) + (1.0 - alpha) * unit(stats.mean_key_v)
    n = l2_norm(blend)
    if n < 1e-12:
        raise ContractError("degenerate anchor")
    return blend / n * q_norm


def compute_rotation(stats: BatchKeyStats, anchor) -> np.ndarray:
    return plane_rotation_from_pair(stats.mean_query, anchor)


def controller_step(state: ControllerState, config: RollingQConfig, stats: BatchKeyStats,
                    fusion: FusionParams, epoch: int) -> ControllerEvent:
    """Possibly rotate the query. Only ``fusion.rotation`` and ``state`` change."""
    state.air_history.append((epoch, stats.air))
    alpha = None
    applied = False
    if abs(stats.air) >= config.beta and state.rotations_used < config.max_rotations:
        alpha = float(compute_alpha(stats.air, config.rho))
        anchor = compute_anchor(stats, alpha)
        r_b = compute_rotation(stats, anchor)
        fusion.rotation = fusion.rotation @ r_b
        state.rotations_used += 1
        applied = True
    event = ControllerEvent(epoch, stats.air, alpha, applied)
    state.events.append(event)
    return event
