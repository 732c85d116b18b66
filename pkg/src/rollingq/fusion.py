"""Class-token attention fusion over two modality token sequences.

A single query ``q = z_cls @ W_Q @ R`` attends over the concatenated keys
``[K_a; K_v]``; the fused feature is ``softmax(q K^T / sqrt(d)) @ [V_a; V_v]``.
The class token's own key and value are not part of the sequence.

All functions accept either one sample (tokens of shape ``(L, d)``) or a batch
(``(B, L, d)``); leading axes broadcast through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ContractError, cosine_similarity, l2_norm, outer_sum, softmax_row

MODES = ("none", "mask_a", "mask_v", "block_average")


@dataclass
class FusionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    z_cls: np.ndarray
    rotation: np.ndarray = None

    def __post_init__(self):
        if self.rotation is None:
            self.rotation = np.eye(self.dim)

    @property
    def dim(self) -> int:
        return self.z_cls.shape[0]

    def query(self) -> np.ndarray:
        """Effective query ``z_cls W_Q R``."""
        return self.z_cls @ self.w_q @ self.rotation

    def copy(self) -> "FusionParams":
        return FusionParams(*(np.array(a) for a in (self.w_q, self.w_k, self.w_v, self.z_cls, self.rotation)))


@dataclass
class FusionTrace:
    query: np.ndarray
    tokens_a: np.ndarray
    tokens_v: np.ndarray
    keys_a: np.ndarray
    keys_v: np.ndarray
    values_a: np.ndarray
    values_v: np.ndarray
    logits: np.ndarray
    scores: np.ndarray
    output: np.ndarray
    mode: str = "none"

    @property
    def len_a(self) -> int:
        return self.keys_a.shape[-2]

    @property
    def score_sums(self) -> np.ndarray:
        """Attention mass per modality, shape ``(..., 2)`` ordered (a, v)."""
        la = self.len_a
        return np.stack(
            [self.scores[..., :la].sum(axis=-1), self.scores[..., la:].sum(axis=-1)], axis=-1
        )


@dataclass
class FusionGradients:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    z_cls: np.ndarray
    # token gradients split into the path through the keys and the path
    # through the values
    tokens_a_key: np.ndarray
    tokens_a_value: np.ndarray
    tokens_v_key: np.ndarray
    tokens_v_value: np.ndarray
    query: np.ndarray = field(repr=False, default=None)

    @property
    def tokens_a(self) -> np.ndarray:
        return self.tokens_a_key + self.tokens_a_value

    @property
    def tokens_v(self) -> np.ndarray:
        return self.tokens_v_key + self.tokens_v_value


def _check_tokens(params: FusionParams, tokens_a, tokens_v):
    d = params.dim
    for name, t in (("a", tokens_a), ("v", tokens_v)):
        if t.ndim < 2 or t.shape[-1] != d or t.shape[-2] < 1:
            raise ContractError(f"modality {name} tokens have shape {t.shape}, expected (..., L, {d})")
    if tokens_a.shape[:-2] != tokens_v.shape[:-2]:
        raise ContractError(f"batch shapes differ: {tokens_a.shape} vs {tokens_v.shape}")


def forward(params: FusionParams, tokens_a, tokens_v, mode: str = "none") -> FusionTrace:
    """Attention of the class-token query over both modalities.

    ``mode`` selects an evaluation-time ablation: ``mask_a``/``mask_v`` drop a
    modality's logits to ``-inf`` before the softmax, ``block_average``
    replaces each post-softmax score by its modality block's mean.
    """
    if mode not in MODES:
        raise ContractError(f"unknown ablation mode {mode!r}")
    tokens_a = np.asarray(tokens_a, dtype=np.float64)
    tokens_v = np.asarray(tokens_v, dtype=np.float64)
    _check_tokens(params, tokens_a, tokens_v)
    d = params.dim
    la = tokens_a.shape[-2]

    q = params.query()
    keys_a, keys_v = tokens_a @ params.w_k, tokens_v @ params.w_k
    values_a, values_v = tokens_a @ params.w_v, tokens_v @ params.w_v
    keys = np.concatenate([keys_a, keys_v], axis=-2)
    values = np.concatenate([values_a, values_v], axis=-2)

    logits = keys @ q / np.sqrt(d)
    masked = logits
    if mode == "mask_a":
        masked = logits.copy()
        masked[..., :la] = -np.inf
    elif mode == "mask_v":
        masked = logits.copy()
        masked[..., la:] = -np.inf
    scores = softmax_row(masked)
    if mode == "block_average":
        scores = scores.copy()
        scores[..., :la] = scores[..., :la].mean(axis=-1, keepdims=True)
        scores[..., la:] = scores[..., la:].mean(axis=-1, keepdims=True)

    output = np.einsum("...l,...ld->...d", scores, values)
    return FusionTrace(q, tokens_a, tokens_v, keys_a, keys_v, values_a, values_v,
                       logits, scores, output, mode)


def backward(params: FusionParams, trace: FusionTrace, grad_output) -> FusionGradients:
    """Exact gradients of a scalar loss given ``dL/d output``.

    Parameter gradients are summed over any batch axes. The rotation is
    treated as a constant.
    """
    if trace.mode != "none":
        raise ContractError("backward is only defined for mode 'none'")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ContractError(f"grad_output shape {g.shape} does not match output {trace.output.shape}")
    d = params.dim
    if trace.query.shape != (d,):
        raise ContractError(f"trace built for dim {trace.query.shape}, params have dim {d}")
    la = trace.len_a
    scale = 1.0 / np.sqrt(d)

    values = np.concatenate([trace.values_a, trace.values_v], axis=-2)
    keys = np.concatenate([trace.keys_a, trace.keys_v], axis=-2)
    s = trace.scores

    d_values = s[..., :, None] * g[..., None, :]
    d_scores = np.einsum("...ld,...d->...l", values, g)
    d_logits = s * (d_scores - np.sum(s * d_scores, axis=-1, keepdims=True))
    d_keys = d_logits[..., :, None] * (trace.query * scale)
    d_query = scale * outer_sum(d_logits[..., None], keys)[0]

    dk_a, dk_v = d_keys[..., :la, :], d_keys[..., la:, :]
    dv_a, dv_v = d_values[..., :la, :], d_values[..., la:, :]
    za, zv = trace.tokens_a, trace.tokens_v

    w_k = outer_sum(za, dk_a) + outer_sum(zv, dk_v)
    w_v = outer_sum(za, dv_a) + outer_sum(zv, dv_v)
    # q = z_cls W_Q R  ->  dL/d(z_cls W_Q) = d_query R^T
    d_pre = d_query @ params.rotation.T
    w_q = np.outer(params.z_cls, d_pre)
    z_cls = params.w_q @ d_pre

    return FusionGradients(
        w_q=w_q, w_k=w_k, w_v=w_v, z_cls=z_cls,
        tokens_a_key=dk_a @ params.w_k.T, tokens_a_value=dv_a @ params.w_v.T,
        tokens_v_key=dk_v @ params.w_k.T, tokens_v_value=dv_v @ params.w_v.T,
        query=d_query,
    )


def average_keys(keys_m) -> np.ndarray:
    """Mean key of one modality over its token axis."""
    keys_m = np.asarray(keys_m, dtype=np.float64)
    if keys_m.ndim < 2 or keys_m.shape[-2] < 1:
        raise ContractError(f"average_keys needs (..., L>=1, d), got {keys_m.shape}")
    return keys_m.mean(axis=-2)


def modality_score_sums(trace: FusionTrace) -> np.ndarray:
    return trace.score_sums


@dataclass
class CosineTerms:
    """Factors of one modality's summed logits: ``L/sqrt(d) * |q| * |k_hat| * cos``."""

    length: int
    query_norm: float
    key_norm: np.ndarray
    cosine: np.ndarray

    def logit_sum(self, dim: int) -> np.ndarray:
        return self.length / np.sqrt(dim) * self.query_norm * self.key_norm * self.cosine


def cosine_decomposition(trace: FusionTrace) -> dict[str, CosineTerms]:
    q = trace.query
    out = {}
    for m, keys in (("a", trace.keys_a), ("v", trace.keys_v)):
        k_hat = average_keys(keys)
        out[m] = CosineTerms(
            length=keys.shape[-2],
            query_norm=l2_norm(q),
            key_norm=l2_norm(k_hat),
            cosine=cosine_similarity(k_hat, q),
        )
    return out
