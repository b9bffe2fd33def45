"""Command-line entry point: ``giin <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint as ck
from .config import ExperimentConfig, apply_overrides, config_to_text, describe, load_config
from .data import split_of, write_dataset
from .errors import ConfigError, GiinError
from .experiments import ablation_csv, resolve_dataset, resolve_schema, run_ablation
from .gradcheck import run_gradcheck
from .grm import VARIANTS, attention_csv, attention_rows
from .metrics import report
from .model import GiinModel
from .schema import seven_point_score
from .train import InputPipeline, train

log = logging.getLogger("giin")

# flag -> config key
_FLAGS = {
    "seed": "seed", "variant": "variant", "mode": "mode", "scale": "scale",
    "epochs": "epochs", "out": "out", "lr": "lr", "batch_size": "batch_size",
    "extractor": "extractor", "manifest": "manifest", "synth": "synth",
    "metrics_split": "metrics_split", "schema": "schema",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--mode", choices=("baseline", "celm", "celm+grm"))
    p.add_argument("--scale", type=float, help="width scale factor for desk-size runs")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--extractor", choices=("precomputed", "tiny-conv"))
    p.add_argument("--manifest")
    p.add_argument("--synth", help="synthetic data spec, e.g. n=64,noise=0")
    p.add_argument("--metrics-split", choices=("train", "valid", "test"))
    p.add_argument("--schema", help="schema override file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="giin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("train", "train a model and write checkpoint, history and metrics"),
                        ("eval", "evaluate a checkpoint on a dataset split"),
                        ("ablate", "train all seven ablation configurations"),
                        ("gradcheck", "finite-difference check of every op and parameter group"),
                        ("synth", "write a synthetic dataset (manifest + files)"),
                        ("dump-attention", "write GRM attention coefficients as CSV")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("eval", "dump-attention"):
            p.add_argument("--checkpoint", required=True)
        if name == "dump-attention":
            p.add_argument("--example-id", required=True)
        if name == "gradcheck":
            p.add_argument("--samples", type=int, default=8,
                           help="coordinates checked per parameter tensor")
    p = sub.add_parser("score", help="7-point checklist score of one label row")
    p.add_argument("labels", help="comma-separated class names in category order, e.g. "
                                  "MEL,ATP,IR,IR,PRS,IR,PRS,ABS")
    p.add_argument("--schema")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if args.command == "gradcheck":
        # gradcheck defaults: full DC model with a trainable extractor, quarter width
        base = {"extractor": "tiny-conv", "scale": "0.25"}
        file_keys = set() if not args.config else set(
            line.split("=", 1)[0].strip() for line in Path(args.config).read_text().splitlines()
            if "=" in line and not line.lstrip().startswith("#"))
        apply_overrides(cfg, {k: v for k, v in base.items() if k not in file_keys})
    overrides = {}
    for flag, key in _FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = str(val)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    apply_overrides(cfg, overrides)
    if args.command == "dump-attention":
        return cfg
    cfg.validate()
    return cfg


def _write(path: Path, text: str) -> None:
    ck.atomic_write(path, text)
    log.info("wrote %s", path)


def cmd_train(cfg: ExperimentConfig) -> int:
    schema = resolve_schema(cfg)
    dataset = resolve_dataset(cfg, schema)
    out = Path(cfg.out)
    model, history = train(dataset, cfg, schema)
    ck.checkpoint_save(model.params, cfg, out / "checkpoint.giin", schema)
    _write(out / "config.txt", config_to_text(cfg))
    _write(out / "history.csv", history.to_csv())
    for split in ("train", cfg.metrics_split):
        examples = split_of(dataset, split)
        if not examples:
            continue
        rep = report(model, examples, schema)
        _write(out / f"metrics_{split}.csv", rep.to_csv())
        _write(out / f"metrics_{split}.txt", rep.to_table())
        print(f"[{split}] average AUC "
              f"{'NA' if rep.average('auc') is None else format(rep.average('auc'), '.4f')}")
    return 0


def _load_model(path, cfg: ExperimentConfig):
    schema = resolve_schema(cfg)
    params, saved = ck.checkpoint_load(path, schema)
    # data and evaluation options come from the command line, the model from the file
    for key in ("manifest", "synth", "metrics_split", "out"):
        if getattr(cfg, key) is not None:
            setattr(saved, key, getattr(cfg, key))
    return GiinModel(saved, schema, params), saved, schema


def cmd_eval(cfg: ExperimentConfig, checkpoint: str) -> int:
    model, saved, schema = _load_model(checkpoint, cfg)
    dataset = resolve_dataset(saved, schema)
    model.pipeline = InputPipeline(saved, split_of(dataset, "train"))
    rep = report(model, split_of(dataset, saved.metrics_split), schema)
    sys.stdout.write(rep.to_table())
    if cfg.out:
        _write(Path(cfg.out) / f"eval_{saved.metrics_split}.csv", rep.to_csv())
    return 0


def cmd_ablate(cfg: ExperimentConfig) -> int:
    schema = resolve_schema(cfg)
    dataset = resolve_dataset(cfg, schema)
    results = run_ablation(dataset, cfg, schema)
    text = ablation_csv(results, schema)
    _write(Path(cfg.out) / "ablation.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(cfg: ExperimentConfig, samples: int) -> int:
    rep = run_gradcheck(cfg, resolve_schema(cfg), samples=samples)
    sys.stdout.write(rep.to_text())
    if rep.passed:
        return 0
    for r in rep.failures():
        print(f"FAILED {r.kind} {r.name}: max relative error {r.max_rel_error:.3e} at {r.worst}",
              file=sys.stderr)
    return 1


def cmd_synth(cfg: ExperimentConfig) -> int:
    if not cfg.synth:
        raise ConfigError("synth needs --synth n=...,noise=...")
    schema = resolve_schema(cfg)
    manifest = write_dataset(resolve_dataset(cfg, schema), cfg.out, schema)
    print(manifest)
    return 0


def cmd_dump_attention(cfg: ExperimentConfig, checkpoint: str, example_id: str) -> int:
    if not Path(checkpoint).exists():
        print(f"checkpoint not found: {checkpoint}", file=sys.stderr)
        return 1
    model, saved, schema = _load_model(checkpoint, cfg)
    if model.topology is None:
        raise ConfigError("checkpoint has no GRM (mode is not celm+grm)")
    dataset = resolve_dataset(saved, schema)
    matches = [ex for ex in dataset if ex.id == example_id]
    if not matches:
        print(f"example {example_id!r} not found", file=sys.stderr)
        return 1
    pipeline = InputPipeline(saved, split_of(dataset, "train"))
    derm, clin = pipeline(matches)
    fw = model.forward(derm, clin)
    text = attention_csv(attention_rows(fw.attention, model.topology))
    if cfg.out and cfg.out != ExperimentConfig.out:
        _write(Path(cfg.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_score(args) -> int:
    schema = resolve_schema(ExperimentConfig(schema=args.schema))
    labels = [s.strip() for s in args.labels.split(",")]
    score, flagged = seven_point_score(schema.encode(labels), schema)
    print(f"score {score} {'suspected melanoma' if flagged else 'not flagged'}")
    return 0


def _setup_logging(quiet: bool) -> None:
    root = logging.getLogger("giin")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.WARNING if quiet else logging.INFO)
    root.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(getattr(args, "quiet", False))
    try:
        if args.command == "score":
            return cmd_score(args)
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(describe(cfg))
            return 0
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.samples)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "dump-attention":
            return cmd_dump_attention(cfg, args.checkpoint, args.example_id)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (GiinError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
