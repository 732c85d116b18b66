"""Read-only probes of a trained model and their plain-text export.

Covers per-modality attention mass, average-key geometry (cosine to the
query and key norm), noise-response curves, the clean/noise attention
correlation and QUAG-style ablations (modality masking, block averaging).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import fusion
from .linalg import cosine_similarity, l2_norm, make_rng, pearson
from .model import ModelParams, model_forward
from .synthdata import Dataset, perturb


class InvariantError(RuntimeError):
    pass


@dataclass
class DiagnosticsRecord:
    epoch: int
    score_a: float
    score_v: float
    air: float
    alpha: float | None
    rotation_applied: bool
    rotations_used: int
    cos_a: float
    cos_v: float
    key_norm_a: float
    key_norm_v: float
    log_key_norm_ratio: float
    grad_norm_a: float
    grad_norm_v: float
    train_loss: float
    test_acc: float


RECORD_COLUMNS = tuple(f.name for f in fields(DiagnosticsRecord))
SCATTER_COLUMNS = ("sample_id", "modality", "cos", "key_norm", "is_noise")


@dataclass
class ScatterRow:
    sample_id: int
    modality: str
    cos: float
    key_norm: float
    is_noise: bool


def validate_record(rec: DiagnosticsRecord) -> DiagnosticsRecord:
    s = rec.score_a + rec.score_v
    if not (0.0 <= rec.score_a <= 1.0 and 0.0 <= rec.score_v <= 1.0 and abs(s - 1.0) <= 1e-9):
        raise InvariantError(f"epoch {rec.epoch}: score sums ({rec.score_a}, {rec.score_v}) invalid")
    if not -2.0 <= rec.air <= 2.0:
        raise InvariantError(f"epoch {rec.epoch}: AIR {rec.air} outside [-2, 2]")
    if not 0.0 <= rec.test_acc <= 1.0:
        raise InvariantError(f"epoch {rec.epoch}: accuracy {rec.test_acc} outside [0, 1]")
    return rec


@dataclass
class Evaluation:
    accuracy: float
    masses: np.ndarray  # (N, 2) attention mass per sample, (a, v)
    cos: np.ndarray  # (N, 2)
    key_norm: np.ndarray  # (N, 2)
    predictions: np.ndarray


def evaluate(model: ModelParams, data: Dataset, mode: str = "none", geometry: bool = True) -> Evaluation:
    out = model_forward(model, data.raw_a, data.raw_v, mode)
    tr = out.trace
    pred = np.argmax(out.logits, axis=-1)
    cos = norms = None
    if geometry:
        ks = [fusion.average_keys(tr.keys_a), fusion.average_keys(tr.keys_v)]
        q = np.broadcast_to(tr.query, ks[0].shape)
        cos = np.stack([cosine_similarity(k, q) for k in ks], axis=-1)
        norms = np.stack([l2_norm(k) for k in ks], axis=-1)
    return Evaluation(float(np.mean(pred == data.labels)), tr.score_sums, cos, norms, pred)


def snapshot(model: ModelParams, eval_set: Dataset, epoch: int = 0, **extra) -> tuple[DiagnosticsRecord, list[ScatterRow]]:
    """Forward-only summary of the model on ``eval_set`` (mode none).

    ``extra`` fills the training-side fields (loss, gradient norms,
    controller outputs) that a forward pass cannot see.
    """
    if len(eval_set) == 0:
        raise InvariantError("snapshot needs a nonempty eval set")
    # a diverged model yields non-finite values; validate_record reports them
    with np.errstate(all="ignore"):
        ev = evaluate(model, eval_set)
        log_ratio = float(np.mean(np.log(ev.key_norm[:, 0] / ev.key_norm[:, 1])))
    mass = ev.masses.mean(axis=0)
    fields_ = dict(
        epoch=epoch,
        score_a=float(mass[0]), score_v=float(mass[1]),
        air=float(np.mean(ev.cos[:, 0] - ev.cos[:, 1])),
        alpha=None, rotation_applied=False, rotations_used=0,
        cos_a=float(ev.cos[:, 0].mean()), cos_v=float(ev.cos[:, 1].mean()),
        key_norm_a=float(ev.key_norm[:, 0].mean()), key_norm_v=float(ev.key_norm[:, 1].mean()),
        log_key_norm_ratio=log_ratio,
        grad_norm_a=math.nan, grad_norm_v=math.nan, train_loss=math.nan,
        test_acc=ev.accuracy,
    )
    fields_.update(extra)
    rec = validate_record(DiagnosticsRecord(**fields_))
    return rec, scatter_rows(eval_set, ev, is_noise=False)


def scatter_rows(data: Dataset, ev: Evaluation, is_noise: bool) -> list[ScatterRow]:
    rows = []
    for i, sid in enumerate(data.ids):
        for j, m in enumerate("av"):
            rows.append(ScatterRow(int(sid), m, float(ev.cos[i, j]), float(ev.key_norm[i, j]), is_noise))
    return rows


def noise_scatter(model: ModelParams, eval_set: Dataset, modality: str, seed: int = 0) -> list[ScatterRow]:
    """Key geometry with ``modality`` replaced by pure noise (rows flagged noisy)."""
    noisy = perturb(eval_set, modality, 1.0, "replace", make_rng(seed, 31))
    return scatter_rows(noisy, evaluate(model, noisy), is_noise=True)


@dataclass
class NoiseRow:
    level: float
    accuracy: float
    mass: float


def noise_response(model: ModelParams, eval_set: Dataset, modality: str, levels: Sequence[float],
                   mode: str = "additive", seed: int = 0) -> list[NoiseRow]:
    """Accuracy and the perturbed modality's mean attention mass per noise level.

    Every level reuses the same noise draw, scaled by the level.
    """
    j = "av".index(modality)
    rows = []
    for level in levels:
        if not 0.0 <= level <= 1.0:
            raise ValueError(f"noise level {level} outside [0, 1]")
        data = perturb(eval_set, modality, level, mode, make_rng(seed, 29))
        ev = evaluate(model, data, geometry=False)
        rows.append(NoiseRow(float(level), ev.accuracy, float(ev.masses[:, j].mean())))
    return rows


def noise_attention_correlation(model: ModelParams, eval_set: Dataset, modality: str,
                                rng: np.random.Generator) -> float:
    """Pearson correlation of a clean-input indicator with ``modality``'s attention mass.

    Rows are the clean eval set (indicator 1) plus a copy whose ``modality``
    is replaced by Gaussian noise (indicator 0).
    """
    if len(eval_set) < 50:
        raise ValueError("noise_attention_correlation needs at least 50 samples")
    j = "av".index(modality)
    clean = evaluate(model, eval_set, geometry=False).masses[:, j]
    noisy_set = perturb(eval_set, modality, 1.0, "replace", rng)
    noisy = evaluate(model, noisy_set, geometry=False).masses[:, j]
    return clean_noise_correlation(clean, noisy)


def clean_noise_correlation(clean_mass, noisy_mass) -> float:
    """Pearson correlation of the indicator (1 clean, 0 noise) with the masses."""
    clean_mass = np.asarray(clean_mass, dtype=np.float64)
    noisy_mass = np.asarray(noisy_mass, dtype=np.float64)
    indicator = np.concatenate([np.ones_like(clean_mass), np.zeros_like(noisy_mass)])
    return pearson(indicator, np.concatenate([clean_mass, noisy_mass]))


def quag_ablation(model: ModelParams, eval_set: Dataset) -> dict[str, float]:
    """Accuracy under each attention ablation mode."""
    result = {}
    base = model_forward(model, eval_set.raw_a, eval_set.raw_v, "none").trace.score_sums
    for mode in fusion.MODES:
        out = model_forward(model, eval_set.raw_a, eval_set.raw_v, mode)
        if mode == "block_average":
            dev = float(np.max(np.abs(out.trace.score_sums - base)))
            if dev > 1e-12:
                raise InvariantError(f"block_average moved modality mass by {dev:.3e}")
        result[mode] = float(np.mean(np.argmax(out.logits, axis=-1) == eval_set.labels))
    return result


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_records(records: Iterable[DiagnosticsRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    return path


def read_records(path) -> list[DiagnosticsRecord]:
    out = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(DiagnosticsRecord(
                epoch=int(row["epoch"]),
                alpha=None if row["alpha"] == "" else float(row["alpha"]),
                rotation_applied=row["rotation_applied"] == "1",
                rotations_used=int(row["rotations_used"]),
                **{c: float(row[c]) for c in RECORD_COLUMNS
                   if c not in ("epoch", "alpha", "rotation_applied", "rotations_used")},
            ))
    return out


def write_scatter(rows: Iterable[ScatterRow], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_COLUMNS)
        for r in rows:
            w.writerow([r.sample_id, r.modality, _fmt(r.cos), _fmt(r.key_norm), _fmt(r.is_noise)])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def export(records: Sequence[DiagnosticsRecord], scatter: Sequence[ScatterRow], out_dir,
           summary: dict | None = None) -> dict[str, Path]:
    """Write ``diagnostics.csv``, ``scatter.csv`` and ``summary.json`` under ``out_dir``."""
    if not records:
        raise ValueError("export needs at least one record")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "records": write_records(records, out_dir / "diagnostics.csv"),
            "scatter": write_scatter(scatter, out_dir / "scatter.csv"),
        }
        text = json.dumps(_jsonable(summary or {}), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        (out_dir / "summary.json").write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write diagnostics under {out_dir}: {exc}") from exc
    paths["summary"] = out_dir / "summary.json"
    return paths
