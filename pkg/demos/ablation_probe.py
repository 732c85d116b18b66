"""Ablation table and noise-response curve for one trained model.

Masking a modality shows what the classifier needs; block averaging keeps
each modality's total attention but drops the within-modality ranking.

    python demos/ablation_probe.py [p]

``p`` is the per-sample swap probability (0 is the global-bias benchmark).
"""

import sys

from rollingq import config
from rollingq import diagnostics as dg
from rollingq.trainer import run

p = float(sys.argv[1]) if len(sys.argv) > 1 else 0.0
spec, model_spec, cfg = config.build(config.resolve(overrides={"data.sample_varying_prob": p}))
rep = run(cfg, spec, model_spec)

for mode, acc in dg.quag_ablation(rep.model, rep.test_set).items():
    print(f"{mode:14s} acc {acc:.3f}")

print(f"\n{'level':>5} {'acc':>6} {'mass_a':>7}")
for row in dg.noise_response(rep.model, rep.test_set, "a", [0.0, 0.25, 0.5, 0.75, 1.0]):
    print(f"{row.level:5.2f} {row.accuracy:6.3f} {row.mass:7.3f}")
