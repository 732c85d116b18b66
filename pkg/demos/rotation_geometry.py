"""One controller step by hand on a two-token toy.

Keys of modality a point along x, keys of v along y, and the query leans
toward a. The imbalance rate is positive, so the anchor weight alpha drops
below one half and the rotated query moves toward v.

    python demos/rotation_geometry.py
"""

import numpy as np

from rollingq.controller import (ControllerState, RollingQConfig, compute_alpha, compute_anchor,
                                 compute_batch_stats, controller_step)
from rollingq.fusion import FusionParams, forward

np.set_printoptions(precision=4, suppress=True)

d = 3
fus = FusionParams(np.eye(d), np.eye(d), np.eye(d), z_cls=np.array([2.0, 0.5, 0.0]))
tokens_a = np.array([[[1.0, 0.0, 0.1]], [[0.9, 0.1, 0.0]]])
tokens_v = np.array([[[0.0, 1.0, 0.0]], [[0.1, 0.8, -0.1]]])

before = forward(fus, tokens_a, tokens_v)
stats = compute_batch_stats(before)
alpha = compute_alpha(stats.air, rho=1.0)
print("query          ", before.query)
print("mass (a, v)    ", before.score_sums.mean(axis=0))
print(f"AIR {stats.air:+.4f}  alpha {alpha:.4f}")
print("anchor         ", compute_anchor(stats, alpha))

event = controller_step(ControllerState(), RollingQConfig(beta=0.5), stats, fus, epoch=1)
after = forward(fus, tokens_a, tokens_v)
print("rotation applied", event.applied)
print("rotated query  ", after.query)
print("mass (a, v)    ", after.score_sums.mean(axis=0))
print("R^T R - I max  ", np.abs(fus.rotation.T @ fus.rotation - np.eye(d)).max())
