"""Seeded two-modality classification data with controllable modality quality.

Every class owns one random unit prototype per modality. A sample's tokens
are ``s_m * prototype[label] + N(0, 1)`` noise, where ``s_m`` is the
modality's signal strength. With probability ``sample_varying_prob`` a sample
swaps the two strengths, so the informative modality varies per sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .linalg import ContractError, make_rng


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    len_a: int = 4
    len_v: int = 4
    din_a: int = 16
    din_v: int = 16
    s_a: float = 3.0
    s_v: float = 1.0
    sample_varying_prob: float = 0.0
    n_train: int = 2000
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.s_a < 0 or self.s_v < 0 or (self.s_a == 0 and self.s_v == 0):
            raise ContractError("need s_a, s_v >= 0 with at least one positive")
        if min(self.n_train, self.n_test, self.len_a, self.len_v, self.num_classes) < 1:
            raise ContractError("sizes must be >= 1")
        if not 0.0 <= self.sample_varying_prob <= 1.0:
            raise ContractError("sample_varying_prob must lie in [0, 1]")


@dataclass
class Sample:
    raw_a: np.ndarray
    raw_v: np.ndarray
    label: int
    informative_modality: str


@dataclass
class Dataset:
    """Stacked samples: ``raw_a`` is ``(N, L_a, din_a)``, ``raw_v`` likewise."""

    raw_a: np.ndarray
    raw_v: np.ndarray
    labels: np.ndarray
    informative: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i) -> Sample:
        return Sample(self.raw_a[i], self.raw_v[i], int(self.labels[i]), str(self.informative[i]))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.raw_a[idx], self.raw_v[idx], self.labels[idx], self.informative[idx], self.ids[idx])


def _prototypes(rng, num_classes, din):
    p = rng.standard_normal((num_classes, din))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def _draw(spec: SyntheticSpec, protos_a, protos_v, n, rng) -> Dataset:
    labels = np.arange(n) % spec.num_classes
    labels = labels[rng.permutation(n)]
    swap = rng.random(n) < spec.sample_varying_prob
    s_a = np.where(swap, spec.s_v, spec.s_a)
    s_v = np.where(swap, spec.s_a, spec.s_v)
    raw_a = s_a[:, None, None] * protos_a[labels][:, None, :] + rng.standard_normal((n, spec.len_a, spec.din_a))
    raw_v = s_v[:, None, None] * protos_v[labels][:, None, :] + rng.standard_normal((n, spec.len_v, spec.din_v))
    informative = np.where(s_a >= s_v, "a", "v")
    return Dataset(raw_a, raw_v, labels, informative)


def generate(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Train and test splits sharing one set of class prototypes."""
    rng = make_rng(spec.seed, 17)
    protos_a = _prototypes(rng, spec.num_classes, spec.din_a)
    protos_v = _prototypes(rng, spec.num_classes, spec.din_v)
    train = _draw(spec, protos_a, protos_v, spec.n_train, rng)
    test = _draw(spec, protos_a, protos_v, spec.n_test, rng)
    return train, test


def perturb(data, modality: str, noise_level: float, mode: str, rng: np.random.Generator):
    """Corrupt one modality of a :class:`Sample` or :class:`Dataset` (returns a copy).

    ``replace`` mixes ``(1 - level) * x + level * sigma * eps``, so level 1 is
    pure Gaussian noise; ``additive`` returns ``x + level * sigma * eps``.
    ``sigma`` is each clean token's empirical standard deviation.
    """
    if modality not in ("a", "v"):
        raise ContractError(f"unknown modality {modality!r}")
    if mode not in ("replace", "additive"):
        raise ContractError(f"unknown perturbation mode {mode!r}")
    if noise_level == 0:
        return replace(data)
    attr = "raw_" + modality
    x = getattr(data, attr)
    sigma = x.std(axis=-1, keepdims=True)
    eps = rng.standard_normal(x.shape)
    if mode == "replace":
        out = (1.0 - noise_level) * x + noise_level * sigma * eps
    else:
        out = x + noise_level * sigma * eps
    return replace(data, **{attr: out})


def batches(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> list[Dataset]:
    """One shuffled epoch; the last batch may be short."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    order = rng.permutation(len(dataset))
    return [dataset.subset(order[i:i + batch_size]) for i in range(0, len(dataset), batch_size)]


def dump_dataset(dataset: Dataset, path) -> Path:
    """Plain-text table: one token per line."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "modality", "label", "informative", "token", "values"])
        for i in range(len(dataset)):
            for m, arr in (("a", dataset.raw_a), ("v", dataset.raw_v)):
                for t, row in enumerate(arr[i]):
                    w.writerow([int(dataset.ids[i]), m, int(dataset.labels[i]), dataset.informative[i], t,
                                " ".join(repr(float(x)) for x in row)])
    return path


def load_dataset(path) -> Dataset:
    rows: dict[int, dict] = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            sid = int(rec["sample_id"])
            entry = rows.setdefault(sid, {"label": int(rec["label"]), "informative": rec["informative"],
                                          "a": [], "v": []})
            entry[rec["modality"]].append(np.array([float(x) for x in rec["values"].split()]))
    ids = np.array(list(rows))
    return Dataset(
        raw_a=np.array([rows[i]["a"] for i in ids]),
        raw_v=np.array([rows[i]["v"] for i in ids]),
        labels=np.array([rows[i]["label"] for i in ids]),
        informative=np.array([rows[i]["informative"] for i in ids]),
        ids=ids,
    )
