"""Central finite-difference check of the analytic model gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import make_rng, plane_rotation_from_pair
from .model import ModelSpec, init, loss_and_grads

STEP = 1e-5
TOLERANCE = 1e-4
# below this magnitude an absolute difference is what gets compared
FLOOR = 1e-6


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)


def numeric_gradient(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * step)
    return g


@dataclass
class GradcheckReport:
    instances: int
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE

    def lines(self) -> list[str]:
        out = [f"{name:20s} {err:.3e}" for name, err in sorted(self.per_param.items())]
        out.append(f"instances={self.instances} max_rel_error={self.max_rel_error:.3e} "
                   f"tolerance={TOLERANCE:.0e} {'PASS' if self.ok else 'FAIL'}")
        return out


def random_instance(rng: np.random.Generator, dim: int = 8):
    """Small model with a non-identity rotation plus a batch of raw tokens."""
    spec = ModelSpec(din_a=5, din_v=4, hidden=7, dim=dim, num_classes=3, cls_std=0.7)
    model = init(spec, rng)
    model.fusion.rotation = plane_rotation_from_pair(rng.standard_normal(dim), rng.standard_normal(dim))
    for enc in (model.encoder_a, model.encoder_v):
        enc.b1 += 0.1 * rng.standard_normal(enc.b1.shape)
        enc.b2 += 0.1 * rng.standard_normal(enc.b2.shape)
    model.classifier.bias += 0.1 * rng.standard_normal(model.classifier.bias.shape)
    batch = int(rng.integers(1, 4))
    raw_a = rng.standard_normal((batch, 3, spec.din_a))
    raw_v = rng.standard_normal((batch, 2, spec.din_v))
    labels = rng.integers(0, spec.num_classes, batch)
    return model, raw_a, raw_v, labels


def check(seed: int = 0, instances: int = 20, dim: int = 8) -> GradcheckReport:
    """Compare every trainable parameter's gradient on ``instances`` random models.

    The rotation is held constant (it is not trained), so it is excluded.
    """
    worst: dict[str, float] = {}
    for k in range(instances):
        model, raw_a, raw_v, labels = random_instance(make_rng(seed, 7, k), dim)
        _, grads, _ = loss_and_grads(model, raw_a, raw_v, labels)
        analytic = dict(grads.named_arrays(include_rotation=False))
        f = lambda: loss_and_grads(model, raw_a, raw_v, labels)[0]  # noqa: E731
        for name, p in model.named_arrays(include_rotation=False):
            err = float(np.max(relative_error(analytic[name], numeric_gradient(f, p))))
            worst[name] = max(worst.get(name, 0.0), err)
    return GradcheckReport(instances, max(worst.values()), worst)
