"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -s tests/test_acceptance.py`` or
``python tests/test_acceptance.py``.
"""

import dataclasses
import functools
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from rollingq import config as cfgmod
from rollingq import diagnostics as dg
from rollingq import gradcheck
from rollingq.controller import (ControllerState, RollingQConfig, compute_alpha, compute_batch_stats,
                                 controller_step)
from rollingq.fusion import FusionParams, cosine_decomposition, forward
from rollingq.linalg import make_rng, plane_rotation_from_pair, unit
from rollingq.model import ModelSpec, init, model_forward, param_count, param_count_for
from rollingq.synthdata import generate
from rollingq.trainer import run

SEEDS = (0, 1, 2)
NOISE_LEVELS = (0.25, 0.5, 0.75, 1.0)
GLOBAL_BIAS, SAMPLE_VARYING = 0.0, 0.3
STREAM_EVAL = 41


def report(number, ok, detail, seconds):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f}s)"
    print(line, flush=True)
    return line


def benchmark(p, seed, **overrides):
    cfg = cfgmod.resolve(overrides={"data.sample_varying_prob": p, "seed": seed, **overrides})
    return cfgmod.build(cfg)


@functools.lru_cache(maxsize=None)
def trained(p, seed, enabled):
    spec, model_spec, train = benchmark(p, seed)
    return run(dataclasses.replace(train, rollingq=enabled), spec, model_spec)


@functools.lru_cache(maxsize=None)
def measures(p, seed, enabled):
    rep = trained(p, seed, enabled)
    m, test = rep.model, rep.test_set
    curve = dg.noise_response(m, test, "a", (0.0, *NOISE_LEVELS), mode="additive", seed=seed)
    quag = dg.quag_ablation(m, test)
    return {
        "air": rep.records[-1].air,
        "mass_a": rep.records[-1].score_a,
        "acc": rep.records[-1].test_acc,
        "corr": dg.noise_attention_correlation(m, test, "a", make_rng(seed, STREAM_EVAL)),
        "drops": [curve[0].accuracy - r.accuracy for r in curve[1:]],
        "block_drop": quag["none"] - quag["block_average"],
        "rotations": rep.controller.rotations_used,
    }


def criterion_1():
    rng = make_rng(2024, 1)
    worst = dict(orth=0.0, det=0.0, map=0.0)
    for _ in range(1000):
        d = int(rng.integers(2, 65))
        src, dst = rng.standard_normal(d), rng.standard_normal(d)
        r = plane_rotation_from_pair(src, dst)
        worst["orth"] = max(worst["orth"], float(np.max(np.abs(r.T @ r - np.eye(d)))))
        worst["det"] = max(worst["det"], abs(float(np.linalg.det(r)) - 1.0))
        worst["map"] = max(worst["map"], float(np.max(np.abs(unit(src) @ r - unit(dst)))))
    # 50 controller steps accumulate into R
    d = 16
    fus = FusionParams(*(rng.standard_normal((d, d)) / 4 for _ in range(3)), rng.standard_normal(d))
    state, cfg = ControllerState(), RollingQConfig(beta=1e-12, max_rotations=50)
    for step in range(50):
        tr = forward(fus, rng.standard_normal((16, 4, d)) + rng.standard_normal(d),
                     rng.standard_normal((16, 4, d)) - rng.standard_normal(d))
        controller_step(state, cfg, compute_batch_stats(tr), fus, step)
    acc = float(np.max(np.abs(fus.rotation.T @ fus.rotation - np.eye(d))))
    ok = worst["orth"] < 1e-10 and worst["det"] < 1e-8 and worst["map"] < 1e-10 and acc < 1e-8 \
        and state.rotations_used == 50
    return ok, (f"max|RtR-I|={worst['orth']:.1e} max|det-1|={worst['det']:.1e} "
                f"max|uR-w|={worst['map']:.1e} accumulated(50)={acc:.1e}")


def criterion_2():
    rep = gradcheck.check(seed=0, instances=20, dim=8)
    return rep.ok, f"max relative error {rep.max_rel_error:.2e} over 20 instances (d=8)"


def criterion_3():
    ok_half = all(compute_alpha(0.0, rho) == 0.5 for rho in (0.01, 0.5, 1.0, 3.0, 100.0))
    e1 = abs(compute_alpha(1.0, 1.0) - 0.5 * (1.0 + math.tanh(-1.0)))
    e2 = abs(compute_alpha(2.0, 1.0) - 0.5 * (1.0 + math.tanh(-2.0)))
    rng = make_rng(2024, 3)
    airs, recon = [], 0.0
    for _ in range(100):
        d = int(rng.integers(2, 33))
        fus = FusionParams(*(rng.standard_normal((d, d)) for _ in range(3)), rng.standard_normal(d))
        fus.rotation = plane_rotation_from_pair(rng.standard_normal(d), rng.standard_normal(d))
        tr = forward(fus, rng.standard_normal((8, int(rng.integers(1, 7)), d)),
                     rng.standard_normal((8, int(rng.integers(1, 7)), d)))
        airs.append(compute_batch_stats(tr).air)
        cd = cosine_decomposition(tr)
        la = tr.len_a
        recon = max(recon, float(np.max(np.abs(tr.logits[..., :la].sum(-1) - cd["a"].logit_sum(d)))),
                    float(np.max(np.abs(tr.logits[..., la:].sum(-1) - cd["v"].logit_sum(d)))))
    air_ok = all(-2.0 <= a <= 2.0 for a in airs)
    ok = ok_half and e1 <= 1e-12 and e2 <= 1e-12 and air_ok and recon < 1e-8
    return ok, (f"alpha(0)=0.5:{ok_half} |alpha(1,1)-ref|={e1:.1e} |alpha(2,1)-ref|={e2:.1e} "
                f"AIR range [{min(airs):+.2f},{max(airs):+.2f}] logit-sum residual {recon:.1e}")


def criterion_4():
    spec, bench_model, _ = benchmark(GLOBAL_BIAS, 0)
    _, test = generate(spec)
    eval_set = test.subset(np.arange(64))
    gaps = {}
    for name, ms in (("default-init", ModelSpec(din_a=spec.din_a, din_v=spec.din_v,
                                                 num_classes=spec.num_classes)),
                     ("benchmark-init", bench_model)):
        diffs = []
        for seed in range(500):
            s = model_forward(init(ms, make_rng(seed, 1)), eval_set.raw_a, eval_set.raw_v).trace.score_sums
            diffs.append(float(np.mean(s[:, 0] - s[:, 1])))
        gaps[name] = float(np.mean(diffs))
    ok = all(abs(g) < 0.05 for g in gaps.values())
    return ok, " ".join(f"{k}: mean(score_a-score_v)={v:+.4f}" for k, v in gaps.items()) + " over 500 seeds"


def criterion_5():
    parts, ok = [], True
    for seed in SEEDS:
        rep = trained(GLOBAL_BIAS, seed, False)
        rec = rep.records[-1]
        noisy = dg.noise_response(rep.model, rep.test_set, "a", [1.0], mode="replace", seed=seed)[0].mass
        move = abs(rec.score_a - noisy)
        passed = rec.air > 0.3 and rec.score_a > 0.6 and move < 0.1
        ok &= passed
        parts.append(f"seed{seed}: AIR={rec.air:.2f} mass_a={rec.score_a:.3f} noise-move={move:.3f}")
    return ok, "; ".join(parts)


def criterion_6():
    parts, ok = [], True
    for p, name in ((GLOBAL_BIAS, "global"), (SAMPLE_VARYING, "varying")):
        for seed in SEEDS:
            v, r = measures(p, seed, False), measures(p, seed, True)
            a = r["corr"] > v["corr"]
            b = all(dr <= dv + 0.02 for dr, dv in zip(r["drops"], v["drops"]))
            c = abs(r["air"]) < abs(v["air"])
            ok &= a and b and c
            parts.append(f"{name}/seed{seed}: corr {v['corr']:+.3f}->{r['corr']:+.3f} "
                         f"|AIR| {abs(v['air']):.3f}->{abs(r['air']):.3f} rot={r['rotations']} "
                         f"[{'a' if a else '-'}{'b' if b else '-'}{'c' if c else '-'}]")
    return ok, "; ".join(parts)


def criterion_7():
    deltas = {}
    for d in (2, 16, 64, 768):
        ms = ModelSpec(dim=d)
        deltas[d] = param_count_for(ms, True) - param_count_for(ms, False)
    small = init(ModelSpec(), make_rng(0))
    live = param_count(small, True) - param_count(small, False)
    ok = all(v == d * d for d, v in deltas.items()) and deltas[768] == 589_824 and live == 256
    return ok, f"rotation deltas {deltas}, allocated model delta {live}"


def criterion_8():
    spec, model_spec, train = benchmark(GLOBAL_BIAS, 5, **{"rollingq.enabled": True, "train.epochs": 8})
    with tempfile.TemporaryDirectory() as tmp:
        files = []
        for k in range(2):
            rep = run(train, spec, model_spec)
            summary = {"rotations": rep.controller.rotations_used, "final_acc": rep.test_acc[-1]}
            files.append(dg.export(rep.records, rep.scatter, Path(tmp) / str(k), summary))
        same = all(files[0][key].read_bytes() == files[1][key].read_bytes() for key in files[0])
        back = dg.read_records(files[0]["records"])
    worst = 0.0
    for a, b in zip(back, rep.records):
        for col in dg.RECORD_COLUMNS:
            x, y = getattr(a, col), getattr(b, col)
            if isinstance(y, float) and not (math.isnan(x) and math.isnan(y)):
                worst = max(worst, abs(x - y))
            elif not isinstance(y, float) and x != y:
                worst = math.inf
    ok = same and worst <= 1e-12 and len(back) == len(rep.records)
    return ok, f"byte-identical exports: {same}; CSV round-trip max deviation {worst:.1e}"


def criterion_9():
    parts, ok = [], True
    for empty, s_overrides in (("v", {"data.s_v": 0.0}), ("a", {"data.s_a": 0.0, "data.s_v": 3.0})):
        spec, model_spec, train = benchmark(GLOBAL_BIAS, 0, **s_overrides)
        rep = run(train, spec, model_spec)
        table = dg.quag_ablation(rep.model, rep.test_set)
        shift = abs(table["none"] - table[f"mask_{empty}"])
        ok &= shift < 0.02
        parts.append(f"s_{empty}=0: |acc-acc(mask_{empty})|={shift:.3f}")
    rep = trained(SAMPLE_VARYING, 0, True)
    base = model_forward(rep.model, rep.test_set.raw_a, rep.test_set.raw_v).trace.score_sums
    avg = model_forward(rep.model, rep.test_set.raw_a, rep.test_set.raw_v, "block_average").trace.score_sums
    mass_dev = float(np.max(np.abs(base - avg)))
    ok &= mass_dev <= 1e-12
    parts.append(f"block_average mass deviation {mass_dev:.1e}")
    for seed in SEEDS:
        v, r = measures(SAMPLE_VARYING, seed, False), measures(SAMPLE_VARYING, seed, True)
        c = r["block_drop"] >= v["block_drop"]
        ok &= c
        parts.append(f"varying/seed{seed}: block drop {v['block_drop']:+.3f} (vanilla) "
                     f"vs {r['block_drop']:+.3f} (rotation)")
    return ok, "; ".join(parts)


CRITERIA = [
    (1, criterion_1, 10), (2, criterion_2, 30), (3, criterion_3, None), (4, criterion_4, 60),
    (5, criterion_5, 300), (6, criterion_6, 600), (7, criterion_7, None), (8, criterion_8, None),
    (9, criterion_9, None),
]


def evaluate(number, fn, budget):
    t0 = time.perf_counter()
    ok, detail = fn()
    seconds = time.perf_counter() - t0
    if budget is not None and seconds >= budget:
        ok = False
        detail += f"; over the {budget}s runtime budget"
    return ok, report(number, ok, detail, seconds)


@pytest.mark.parametrize("number,fn,budget", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(number, fn, budget, capsys):
    with capsys.disabled():
        ok, line = evaluate(number, fn, budget)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(*c)[0] for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
