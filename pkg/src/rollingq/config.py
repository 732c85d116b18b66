"""Flat dotted-key run configuration.

A config file holds ``key = value`` lines; ``#`` starts a comment. Values
are coerced to the type of the key's default. Layers apply in order
defaults, file, command-line overrides. ``DEFAULTS`` is the global-bias
benchmark; the sample-varying benchmark only changes
``data.sample_varying_prob``.

Keys::

    seed                      run seed (data, init, shuffling)
    output_dir                where run artifacts go
    data.num_classes          classes C
    data.len_a, data.len_v    tokens per modality
    data.din_a, data.din_v    raw token width per modality
    data.s_a, data.s_v        signal strength per modality
    data.sample_varying_prob  per-sample probability of swapping s_a and s_v
    data.n_train, data.n_test split sizes
    model.hidden              encoder hidden width
    model.dim                 fusion width d
    model.cls_std             init std of the class token
    model.weight_std          init std of weight matrices (none: 1/sqrt(fan_in))
    train.epochs              epochs T
    train.batch_size          batch size
    train.lr                  base learning rate (cosine-annealed per epoch)
    train.momentum            SGD momentum (0 is plain SGD)
    train.eval_every          diagnostics cadence in epochs
    train.stats_mode          final_batch or epoch_average
    rollingq.enabled          run the rotation controller
    rollingq.rho              alpha sharpness
    rollingq.beta             AIR threshold
    rollingq.max_rotations    rotation budget
    rollingq.cadence          epoch or batch
"""

from __future__ import annotations

import os
from pathlib import Path

from .controller import RollingQConfig
from .model import ModelSpec
from .synthdata import SyntheticSpec
from .trainer import TrainConfig

ENV_OUTPUT_DIR = "ROLLINGQ_OUTPUT_DIR"

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "output_dir": "runs",
    "data.num_classes": 4,
    "data.len_a": 4,
    "data.len_v": 4,
    "data.din_a": 16,
    "data.din_v": 16,
    "data.s_a": 3.0,
    "data.s_v": 1.0,
    "data.sample_varying_prob": 0.0,
    "data.n_train": 2000,
    "data.n_test": 1000,
    "model.hidden": 32,
    "model.dim": 16,
    "model.cls_std": 1.0,
    "model.weight_std": None,
    "train.epochs": 30,
    "train.batch_size": 64,
    "train.lr": 0.1,
    "train.momentum": 0.0,
    "train.eval_every": 1,
    "train.stats_mode": "final_batch",
    "rollingq.enabled": False,
    "rollingq.rho": 1.0,
    "rollingq.beta": 0.5,
    "rollingq.max_rotations": 3,
    "rollingq.cadence": "epoch",
}

# keys whose default is None take a float or "none"
_OPTIONAL_FLOAT = {"model.weight_std"}


class ConfigError(ValueError):
    pass


def coerce(key: str, text: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    default = DEFAULTS[key]
    try:
        if key in _OPTIONAL_FLOAT:
            return None if text.lower() == "none" else float(text)
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_text(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def parse_overrides(items) -> dict[str, object]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = coerce(key.strip(), value)
    return out


def resolve(path=None, overrides=None) -> dict[str, object]:
    """Effective config: defaults, then the file at ``path``, then ``overrides``."""
    cfg = dict(DEFAULTS)
    env_dir = os.environ.get(ENV_OUTPUT_DIR)
    if env_dir:
        cfg["output_dir"] = env_dir
    if path is not None:
        cfg.update(parse_text(Path(path).read_text(encoding="utf-8"), str(path)))
    for key, value in (overrides or {}).items():
        cfg[key] = coerce(key, value) if isinstance(value, str) and not isinstance(DEFAULTS[key], str) else value
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    return cfg


def format_config(cfg: dict[str, object]) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def write_echo(cfg: dict[str, object], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.txt"
    path.write_text(format_config(cfg), encoding="utf-8")
    return path


def _section(cfg, prefix):
    return {k[len(prefix) + 1:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def build(cfg: dict[str, object]) -> tuple[SyntheticSpec, ModelSpec, TrainConfig]:
    """Typed configs from a resolved flat config. Raises ``ValueError`` on bad values."""
    seed = int(cfg["seed"])
    spec = SyntheticSpec(seed=seed, **_section(cfg, "data"))
    model_spec = ModelSpec(din_a=spec.din_a, din_v=spec.din_v, num_classes=spec.num_classes,
                           **_section(cfg, "model"))
    rq = _section(cfg, "rollingq")
    enabled = rq.pop("enabled")
    train = TrainConfig(rollingq=enabled, rq=RollingQConfig(**rq), seed=seed, **_section(cfg, "train"))
    return spec, model_spec, train
