"""Small dense linear-algebra helpers shared by the fusion layer and controller.

Matrices and vectors are plain float64 numpy arrays. Random streams are
``numpy.random.Generator`` instances built with :func:`make_rng`.
"""

from __future__ import annotations

import numpy as np

_DEGENERATE = 1e-12


class ContractError(ValueError):
    """Raised when an operation is called with inputs violating its contract."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Seeded generator; ``stream`` keys give independent sub-streams."""
    return np.random.Generator(np.random.PCG64([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream]))


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def outer_sum(x, y) -> np.ndarray:
    """``sum_n x_n^T y_n`` over every leading axis of ``x`` (..., i) and ``y`` (..., j)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return x.reshape(-1, x.shape[-1]).T @ y.reshape(-1, y.shape[-1])


def softmax_row(logits, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax. ``-inf`` entries map to exactly zero.

    Works on any array; normalization happens along ``axis``.
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.shape[axis] < 1:
        raise ContractError("softmax over an empty axis")
    m = np.max(x, axis=axis, keepdims=True)
    if np.any(np.isneginf(m)):
        raise ContractError("fully masked row")
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def l2_norm(u, axis: int = -1) -> np.ndarray | float:
    r = np.sqrt(np.sum(np.square(np.asarray(u, dtype=np.float64)), axis=axis))
    return float(r) if np.ndim(r) == 0 else r


def cosine_similarity(u, v, axis: int = -1):
    """Cosine between ``u`` and ``v`` along ``axis`` (broadcasting)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = l2_norm(u, axis=axis)
    nv = l2_norm(v, axis=axis)
    if np.any(np.asarray(nu) <= _DEGENERATE) or np.any(np.asarray(nv) <= _DEGENERATE):
        raise ContractError("degenerate vector for cosine")
    c = np.clip(np.sum(u * v, axis=axis) / (nu * nv), -1.0, 1.0)
    return float(c) if np.ndim(c) == 0 else c


def unit(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    n = l2_norm(u)
    if n <= _DEGENERATE:
        raise ContractError("degenerate vector: zero norm")
    return u / n


def _givens_in_plane(e1: np.ndarray, e2: np.ndarray, cos: float, sin: float) -> np.ndarray:
    # Row-vector convention: e1 @ R = cos*e1 + sin*e2, identity off span{e1, e2}.
    d = e1.shape[0]
    r = np.eye(d)
    r += (cos - 1.0) * (np.outer(e1, e1) + np.outer(e2, e2))
    r += sin * (np.outer(e1, e2) - np.outer(e2, e1))
    return r


def plane_rotation_from_pair(src, dst) -> np.ndarray:
    """Minimal rotation taking the direction of ``src`` onto that of ``dst``.

    Returns ``R`` (d x d, orthogonal, det +1) with ``unit(src) @ R == unit(dst)``.
    The rotation acts in span{src, dst} and is the identity on its orthogonal
    complement. Antiparallel inputs rotate by pi through the plane spanned by
    ``src`` and the first standard basis vector not parallel to it.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 1 or src.shape != dst.shape:
        raise ContractError(f"rotation needs two equal-length vectors, got {src.shape}, {dst.shape}")
    if src.shape[0] < 2:
        raise ContractError("rotation needs dim >= 2")
    u = unit(src)
    w = unit(dst)
    c = float(np.dot(u, w))

    if c < -1.0 + 1e-9:
        # pick an auxiliary axis, then compose two quarter turns u -> e2 -> w
        for i in range(u.shape[0]):
            axis = np.zeros_like(u)
            axis[i] = 1.0
            e2 = axis - np.dot(axis, u) * u
            if l2_norm(e2) > 1e-6:
                break
        e2 = e2 - np.dot(e2, u) * u
        e2 /= l2_norm(e2)
        first = _givens_in_plane(u, e2, 0.0, 1.0)
        second = plane_rotation_from_pair(e2, w)
        return first @ second

    perp = w - c * u
    s = l2_norm(perp)
    if s < 1e-15:
        return np.eye(u.shape[0])
    e2 = perp / s
    e2 = e2 - np.dot(e2, u) * u
    e2 /= l2_norm(e2)
    theta = np.arctan2(s, c)
    return _givens_in_plane(u, e2, np.cos(theta), np.sin(theta))


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """N(0, std^2) samples, each resampled until |x| <= 2*std."""
    if std <= 0:
        raise ContractError("truncated_normal needs std > 0")
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 3:
        raise ContractError("pearson needs two sequences of equal length >= 3")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.dot(xc, xc))
    sy = np.sqrt(np.dot(yc, yc))
    # constant inputs can leave rounding residue after centering
    tol_x = 1e-13 * max(1.0, float(np.max(np.abs(x)))) * np.sqrt(x.size)
    tol_y = 1e-13 * max(1.0, float(np.max(np.abs(y)))) * np.sqrt(y.size)
    if sx <= tol_x or sy <= tol_y:
        raise ContractError("zero variance")
    return float(np.clip(np.dot(xc, yc) / (sx * sy), -1.0, 1.0))
