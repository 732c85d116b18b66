"""Command-line runner.

    rollingq train      [--config F] [--set key=value ...]
    rollingq eval-noise --checkpoint M [--modality a] [--levels 0,0.25,...] [--mode additive]
    rollingq correlate  --checkpoint M [--modality a]
    rollingq quag       --checkpoint M
    rollingq gradcheck  [--seed N] [--instances 20]
    rollingq demo-cycle [--config F] [--set key=value ...]

Exit status: 0 success, 1 usage error, 2 invariant or divergence failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from . import config as cfgmod
from . import diagnostics, gradcheck
from .diagnostics import InvariantError
from .linalg import ContractError, make_rng
from .model import load_checkpoint, save_checkpoint
from .synthdata import generate
from .trainer import DivergenceError, TrainReport, run

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
STREAM_CORRELATE = 41


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (same as --set output_dir=...)")
    p.add_argument("--seed", type=int, help="run seed (same as --set seed=...)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rollingq", description="Query-rotation experiments on synthetic two-modality data.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="train one model and export diagnostics")
    _add_config_args(p)

    for name, help_ in (("eval-noise", "accuracy and attention mass under noise"),
                        ("correlate", "clean/noise attention correlation"),
                        ("quag", "accuracy under attention ablations")):
        p = sub.add_parser(name, help=help_)
        _add_config_args(p)
        p.add_argument("--checkpoint", required=True)
        if name != "quag":
            p.add_argument("--modality", choices=("a", "v"), default="a")
        if name == "eval-noise":
            p.add_argument("--levels", default="0,0.25,0.5,0.75,1.0")
            p.add_argument("--mode", choices=("additive", "replace"), default="additive")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--dim", type=int, default=8)

    p = sub.add_parser("demo-cycle", help="paired vanilla vs rotation runs on one benchmark")
    _add_config_args(p)
    return parser


def _effective_config(args) -> dict:
    overrides = cfgmod.parse_overrides(args.set)
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfgmod.resolve(args.config, overrides)


def _summary(cfg: dict, rep: TrainReport) -> dict:
    last = rep.records[-1]
    return {
        "config": cfg,
        "final": dataclasses.asdict(last),
        "controller": {
            "rotations_used": rep.controller.rotations_used,
            "events": [dataclasses.asdict(e) for e in rep.controller.events],
        },
    }


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    out = Path(cfg["output_dir"])
    # build first so bad values fail before anything is written
    spec, model_spec, train = cfgmod.build(cfg)
    cfgmod.write_echo(cfg, out)
    rep = run(train, spec, model_spec)
    diagnostics.export(rep.records, rep.scatter, out, _summary(cfg, rep))
    save_checkpoint(out / "model.npz", rep.model, model_spec, train.seed)
    last = rep.records[-1]
    print(f"epochs={len(rep.records)} test_acc={last.test_acc:.4f} air={last.air:+.4f} "
          f"score_a={last.score_a:.4f} rotations={rep.controller.rotations_used}")
    print(f"wrote {out}")
    return EXIT_OK


def _eval_set(args):
    cfg = _effective_config(args)
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    model, model_spec, _ = load_checkpoint(path)
    spec, _, _ = cfgmod.build(cfg)
    if (spec.din_a, spec.din_v, spec.num_classes) != (model_spec.din_a, model_spec.din_v, model_spec.num_classes):
        raise UsageError("checkpoint dimensions do not match the data config")
    return cfg, model, generate(spec)[1]


def cmd_eval_noise(args) -> int:
    cfg, model, test = _eval_set(args)
    try:
        levels = [float(x) for x in args.levels.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --levels {args.levels!r}") from None
    rows = diagnostics.noise_response(model, test, args.modality, levels, args.mode, seed=cfg["seed"])
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "noise_response.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "accuracy", "mass"])
        for r in rows:
            w.writerow([repr(r.level), repr(r.accuracy), repr(r.mass)])
    print(f"{'level':>6} {'accuracy':>9} {'mass_' + args.modality:>7}")
    for r in rows:
        print(f"{r.level:6.2f} {r.accuracy:9.4f} {r.mass:7.4f}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    cfg, model, test = _eval_set(args)
    r = diagnostics.noise_attention_correlation(model, test, args.modality, make_rng(cfg["seed"], STREAM_CORRELATE))
    print(f"correlation({args.modality}) = {r:+.4f}")
    return EXIT_OK


def cmd_quag(args) -> int:
    _, model, test = _eval_set(args)
    for mode, acc in diagnostics.quag_ablation(model, test).items():
        print(f"{mode:14s} {acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.instances < 1 or not 2 <= args.dim <= 8:
        raise UsageError("need --instances >= 1 and 2 <= --dim <= 8")
    report = gradcheck.check(args.seed, args.instances, args.dim)
    print("\n".join(report.lines()))
    return EXIT_OK if report.ok else EXIT_FAILURE


def demo_cycle(cfg: dict) -> list[dict]:
    """Vanilla and rotation arms with the same seed; one summary row per arm."""
    rows = []
    for method, enabled in (("vanilla", False), ("rollingq", True)):
        arm = dict(cfg, **{"rollingq.enabled": enabled})
        spec, model_spec, train = cfgmod.build(arm)
        rep = run(train, spec, model_spec)
        last = rep.records[-1]
        corr = diagnostics.noise_attention_correlation(rep.model, rep.test_set, "a",
                                                       make_rng(cfg["seed"], STREAM_CORRELATE))
        rows.append({"method": method, "test_acc": last.test_acc, "air": last.air,
                     "score_a": last.score_a, "correlation": corr,
                     "rotations": rep.controller.rotations_used})
    return rows


def cmd_demo_cycle(args) -> int:
    cfg = _effective_config(args)
    cfgmod.build(cfg)
    out = Path(cfg["output_dir"])
    cfgmod.write_echo(cfg, out)
    rows = demo_cycle(cfg)
    cols = ["method", "test_acc", "air", "score_a", "correlation", "rotations"]
    with open(out / "demo_cycle.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (str, int)) else repr(r[c]) for c in cols])
    print(f"{'method':10s} {'test_acc':>9} {'air':>8} {'score_a':>8} {'corr':>8} {'rot':>4}")
    for r in rows:
        print(f"{r['method']:10s} {r['test_acc']:9.4f} {r['air']:+8.4f} {r['score_a']:8.4f} "
              f"{r['correlation']:+8.4f} {r['rotations']:4d}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "eval-noise": cmd_eval_noise, "correlate": cmd_correlate,
    "quag": cmd_quag, "gradcheck": cmd_gradcheck, "demo-cycle": cmd_demo_cycle,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ContractError, ValueError) as exc:
        # invalid config values surface from the typed config constructors
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
